"""Outer design loop: alternate posterior sampling with local input optimization.

Each outer iteration (i) forms the deterministic surrogate output for the
current input, (ii) draws a fresh batch of joint-canonical phase points from
the chain targeting that dataset, and (iii) locally re-optimizes the input by
projected gradient descent over the trajectory cost, warm-started at the
current iterate.  The loop stops when the L1 change of the input falls below
``delta_u`` or after ``max_outer`` iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DesignAbortError
from .hamiltonian import HamiltonianContext, LeapfrogParams
from .hmc import HmcParams, run_chain
from .ocp import OcpSpec, PgdSettings, pgd_solve
from .oracle import auto_grid_posterior, cost_from_grid, moments

MIN_ACCEPTANCE = 0.1


@dataclass
class DesignConfig:
    model: object
    theta_star: np.ndarray
    constraints: object
    u_nominal: np.ndarray
    delta_u: float
    M: int = 40
    max_outer: int = 10
    hmc: HmcParams = field(default_factory=HmcParams)
    pgd: PgdSettings = field(default_factory=PgdSettings)
    seed: int = 0

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        self.u_nominal = np.asarray(self.u_nominal, dtype=float)
        d = self.model.dims
        if self.theta_star.shape != (d.n_theta,):
            raise ValueError(f"theta_star must have length {d.n_theta}")
        if self.u_nominal.shape != (d.u_len,):
            raise ValueError(f"u_nominal must have length {d.u_len}")
        if not self.delta_u > 0:
            raise ValueError("delta_u must be > 0")
        if self.M < 1 or self.max_outer < 1:
            raise ValueError("M and max_outer must be >= 1")


@dataclass
class OuterIteration:
    u: np.ndarray
    cost_initial: float
    cost_final: float
    cost_trace: np.ndarray
    hmc_acceptance: float
    delta_u: float
    wall_time: float


@dataclass
class DesignReport:
    u_nominal: np.ndarray
    u_final: np.ndarray
    converged: bool
    iterations: list
    config: dict


def _chain_seed(master_seed, outer_index):
    # stream 0 is reserved for chains; the CLI draws nominal inputs on stream 1
    return np.random.SeedSequence([int(master_seed), 0, outer_index])


def design_input(config: DesignConfig) -> DesignReport:
    """Run the full design loop; deterministic given the config seed."""
    model = config.model
    u = config.constraints.project(config.u_nominal)
    u_nominal = u.copy()
    records = []
    converged = False
    for outer in range(config.max_outer):
        t0 = time.perf_counter()
        ytil = model.deterministic_output(config.theta_star, u)
        ctx = HamiltonianContext(model, u, ytil, mass=config.hmc.mass)
        q_init = np.concatenate(
            [np.zeros(model.dims.n_theta), model.deterministic_states(np.zeros(model.dims.n_theta), u)]
        )
        hmc_params = replace(
            config.hmc,
            iterations=config.hmc.warmup + config.hmc.thin * config.M,
            initial_q=q_init,
            seed=_chain_seed(config.seed, outer),
        )
        chain = run_chain(ctx, hmc_params)
        if chain.acceptance_rate < MIN_ACCEPTANCE:
            raise DesignAbortError(
                f"HMC acceptance rate {chain.acceptance_rate:.3f} below "
                f"{MIN_ACCEPTANCE} at outer iteration {outer + 1}; decrease the "
                "leapfrog step size (epsilon) or increase the mass and rerun"
            )
        spec = OcpSpec(
            model=model,
            theta_star=config.theta_star,
            initial_points=chain.samples,
            leapfrog=LeapfrogParams(config.hmc.epsilon, config.hmc.steps),
            mass=config.hmc.mass,
            constraints=config.constraints,
        )
        u_next, trace = pgd_solve(spec, u, config.pgd)
        delta = float(np.abs(u_next - u).sum())
        records.append(
            OuterIteration(
                u=u_next.copy(),
                cost_initial=float(trace[0]),
                cost_final=float(trace[-1]),
                cost_trace=trace,
                hmc_acceptance=chain.acceptance_rate,
                delta_u=delta,
                wall_time=time.perf_counter() - t0,
            )
        )
        u = u_next
        # a round whose cost never became finite is a stall, not convergence
        if delta < config.delta_u and np.isfinite(trace[-1]):
            converged = True
            break
    return DesignReport(
        u_nominal=u_nominal,
        u_final=u,
        converged=converged,
        iterations=records,
        config=_describe_config(config),
    )


def _describe_config(config: DesignConfig) -> dict:
    return {
        "theta_star": config.theta_star.tolist(),
        "u_nominal": config.u_nominal.tolist(),
        "delta_u": config.delta_u,
        "M": config.M,
        "max_outer": config.max_outer,
        "seed": config.seed,
        "constraints": config.constraints.describe(),
        "hmc": {
            "mass": config.hmc.mass,
            "epsilon": config.hmc.epsilon,
            "steps": config.hmc.steps,
            "warmup": config.hmc.warmup,
            "thin": config.hmc.thin,
        },
        "pgd": {
            "max_iters": config.pgd.max_iters,
            "step_init": config.pgd.step_init,
            "backtrack": config.pgd.backtrack,
            "armijo": config.pgd.armijo,
            "gradient_mode": config.pgd.gradient_mode,
            "fd_step": config.pgd.fd_step,
        },
    }


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    covariance: np.ndarray
    cost: float
    method: str
    grid: object = None  # GridPosterior when method == "grid"


def evaluate_design(model, theta_star, u, grid_kwargs=None, hmc_params=None,
                    seed=0) -> PosteriorSummary:
    """Posterior summary (mean, covariance, expected squared error) for an
    input, against the deterministic surrogate data it would generate.

    Uses the dense-grid oracle whenever the model has at most two parameters;
    otherwise falls back to moments of a long chain.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    u = np.asarray(u, dtype=float)
    y = model.deterministic_output(theta_star, u)
    if model.dims.n_theta <= 2:
        gp = auto_grid_posterior(model, u, y, center=theta_star, seed=seed,
                                 **(grid_kwargs or {}))
        mean, cov = moments(gp)
        return PosteriorSummary(mean, cov, cost_from_grid(gp, theta_star), "grid", gp)
    params = hmc_params or HmcParams(iterations=20500, warmup=500, thin=2, seed=seed)
    ctx = HamiltonianContext(model, u, y, mass=params.mass)
    chain = run_chain(ctx, replace(params, initial_q=np.concatenate(
        [np.zeros(model.dims.n_theta), model.deterministic_states(np.zeros(model.dims.n_theta), u)]
    )))
    thetas = np.stack([p.q[: model.dims.n_theta] for p in chain.samples])
    mean = thetas.mean(axis=0)
    cov = np.cov(thetas.T, ddof=0).reshape(model.dims.n_theta, model.dims.n_theta)
    cost = float(((thetas - theta_star) ** 2).sum(axis=1).mean())
    return PosteriorSummary(mean, cov, cost, "hmc")
