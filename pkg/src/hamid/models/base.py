"""Common interface of the probabilistic models driven by a designed input.

Every model maps an input sequence ``u`` (length ``n_u * T``, flattened
time-major) to an output sequence ``y`` (length ``n_y * T``) through a
parametric stochastic law.  The sampler and the control problem only need the
pieces below: the log joint likelihood and its gradients w.r.t. parameters and
(optional) latent states, a differentiable log prior, forward simulation, and
a deterministic output surrogate obtained by freezing every noise source at
its mean.

Vectors are plain float64 ``numpy`` arrays throughout; ``theta`` has length
``n_theta``, latent trajectories have length ``n_x * T`` (empty when the
model marginalizes its states exactly and ``n_x == 0``).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelDims:
    """Dimensions of a model's parameter, latent, input and output spaces.

    ``n_x`` is the per-step dimension of the latent block that augments the
    sampler position; it is 0 for models whose likelihood is evaluated with
    states marginalized or deterministic.
    """

    n_theta: int
    n_x: int
    n_u: int
    n_y: int
    horizon: int

    def __post_init__(self):
        if self.n_theta < 1:
            raise ValueError("n_theta must be >= 1")
        if min(self.n_x, self.n_u, self.n_y) < 0:
            raise ValueError("dimensions must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def u_len(self):
        return self.n_u * self.horizon

    @property
    def y_len(self):
        return self.n_y * self.horizon

    @property
    def x_len(self):
        return self.n_x * self.horizon

    @property
    def position_dim(self):
        """Dimension of the sampler position [theta; x]."""
        return self.n_theta + self.x_len


def as_vector(values, length, name):
    """Coerce ``values`` to a float64 vector of exactly ``length`` entries."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size != length:
        raise ValueError(
            f"{name} must be a vector of length {length}, got shape {arr.shape}"
        )
    return arr


class Model(abc.ABC):
    """Behavioral interface shared by the built-in models.

    Subclasses set ``dims`` and ``prior_sigma`` and implement the scalar
    operations.  The ``*_batch`` variants evaluate a batch of points (and,
    where relevant, a batch of input/output pairs) in one call; the defaults
    loop over rows and subclasses override them with vectorized versions.
    """

    dims: ModelDims
    prior_sigma: float = 10.0

    # ------------------------------------------------------------------
    # prior (zero-mean Gaussian, covariance prior_sigma**2 * I)
    # ------------------------------------------------------------------
    def log_prior(self, theta):
        theta = as_vector(theta, self.dims.n_theta, "theta")
        return -0.5 * float(theta @ theta) / self.prior_sigma**2

    def grad_log_prior(self, theta):
        theta = as_vector(theta, self.dims.n_theta, "theta")
        return -theta / self.prior_sigma**2

    # ------------------------------------------------------------------
    # scalar operations
    # ------------------------------------------------------------------
    @abc.abstractmethod
    def log_joint(self, theta, x, u, y):
        """log p(y, x | u, theta) up to the model's fixed additive constant.

        For ``n_x == 0`` models ``x`` is empty and the value is the exact
        marginal log p(y | u, theta).
        """

    @abc.abstractmethod
    def grad_log_joint(self, theta, x, u, y):
        """Gradients of :meth:`log_joint` w.r.t. theta and x (x-block may be empty)."""

    @abc.abstractmethod
    def simulate(self, theta, u, seed):
        """Draw (y, x) from the model; a pure function of (theta, u, seed)."""

    @abc.abstractmethod
    def deterministic_output(self, theta, u):
        """Output sequence with every stochastic term frozen at its mean."""

    def deterministic_states(self, theta, u):
        """Latent trajectory of the noise-free rollout (empty when n_x == 0)."""
        return np.zeros(0)

    # ------------------------------------------------------------------
    # batched variants; rows index independent evaluation points
    # ------------------------------------------------------------------
    def log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        return np.array(
            [self.log_joint(t, x, u, y) for t, x, u, y in zip(thetas, xs, us, ys)]
        )

    def grad_log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        g_theta = np.empty_like(thetas)
        g_x = np.empty_like(xs)
        for i, (t, x, u, y) in enumerate(zip(thetas, xs, us, ys)):
            g_theta[i], g_x[i] = self.grad_log_joint(t, x, u, y)
        return g_theta, g_x

    def deterministic_output_batch(self, theta, us):
        us = np.atleast_2d(np.asarray(us, dtype=float))
        return np.stack([self.deterministic_output(theta, u) for u in us])

    def _check_batch(self, thetas, xs, us, ys):
        d = self.dims
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        xs = np.asarray(xs, dtype=float).reshape(thetas.shape[0], d.x_len)
        us = np.atleast_2d(np.asarray(us, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        b = thetas.shape[0]
        if us.shape[0] == 1:
            us = np.broadcast_to(us, (b, d.u_len))
        if ys.shape[0] == 1:
            ys = np.broadcast_to(ys, (b, d.y_len))
        if thetas.shape != (b, d.n_theta) or us.shape != (b, d.u_len) or ys.shape != (b, d.y_len):
            raise ValueError("inconsistent batch shapes")
        return thetas, xs, us, ys

    def check_args(self, theta, x, u, y):
        d = self.dims
        return (
            as_vector(theta, d.n_theta, "theta"),
            as_vector(x, d.x_len, "x"),
            as_vector(u, d.u_len, "u"),
            as_vector(y, d.y_len, "y"),
        )
