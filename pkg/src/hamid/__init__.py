"""Input design for parametric probabilistic dynamical systems.

The library chooses an input sequence that concentrates the parameter
posterior of a model about a target parameter value, by steering the
trajectories of the Hamiltonian sampler whose canonical distribution is that
posterior.  See the README for the workflow and the CLI.
"""

__version__ = "0.1.0"

from .designer import DesignConfig, DesignReport, design_input, evaluate_design
from .hamiltonian import (
    HamiltonianContext,
    LeapfrogParams,
    PhasePoint,
    leapfrog_rollout,
    leapfrog_step,
)
from .hmc import ChainOutput, HmcParams, draw_momentum, hmc_transition, run_chain
from .models import (
    LinearSsm,
    LinearSsmConfig,
    MriConfig,
    MriModel,
    NonlinearSsm,
    NonlinearSsmConfig,
    kalman_loglik,
    model_from_dict,
    mri_forward,
)
from .ocp import (
    Box,
    Intersection,
    OcpSpec,
    PgdSettings,
    PowerBall,
    minimize_projected,
    ocp_cost,
    ocp_gradient,
    pgd_solve,
    project,
)
from .oracle import (
    GridPosterior,
    GridSpec,
    auto_grid_posterior,
    cost_from_grid,
    default_grid,
    empirical_cost_decomposition,
    grid_posterior,
    moments,
    pf_marginal_loglik,
)

__all__ = [name for name in dir() if not name.startswith("_")]
