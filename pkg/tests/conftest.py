import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hamid import LinearSsm, MriModel, NonlinearSsm


@pytest.fixture(scope="session")
def linear_model():
    return LinearSsm()


@pytest.fixture(scope="session")
def nonlinear_model():
    return NonlinearSsm()


@pytest.fixture(scope="session")
def mri_model():
    return MriModel()


@pytest.fixture(scope="session")
def linear_dataset(linear_model):
    """Nominal input (unit-clipped white noise) and a simulated record."""
    rng = np.random.default_rng(7)
    u = np.clip(rng.standard_normal(linear_model.dims.u_len), -1.0, 1.0)
    y, _ = linear_model.simulate([-0.2, 0.7], u, 77)
    return u, y
