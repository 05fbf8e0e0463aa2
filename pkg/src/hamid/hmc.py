"""Markov chain over phase space: momentum refresh, leapfrog proposal, Metropolis test.

Stored samples are (q, rho) pairs taken at the start of an iteration, right
after the momentum refresh, so each one is a draw from the joint canonical
distribution exp(-U(q)) N(rho; 0, m I); the control problem consumes these
pairs directly as initial conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericDomainError
from .hamiltonian import LeapfrogParams, PhasePoint, leapfrog_rollout


@dataclass
class HmcParams:
    """Sampler tuning: mass, step size, path steps, plus chain controls."""

    mass: float = 1.0
    epsilon: float = 0.05
    steps: int = 20
    iterations: int = 1500
    warmup: int = 500
    thin: int = 5
    initial_q: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mass <= 0 or self.epsilon <= 0:
            raise ValueError("mass and epsilon must be > 0")
        if self.steps < 1 or self.thin < 1:
            raise ValueError("steps and thin must be >= 1")
        if self.warmup < 0 or self.iterations < self.warmup:
            raise ValueError("need iterations >= warmup >= 0")

    @property
    def n_samples(self):
        return (self.iterations - self.warmup) // self.thin


@dataclass
class ChainOutput:
    samples: list = field(default_factory=list)
    acceptance_rate: float = 0.0
    energies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_accepted: int = 0
    n_iterations: int = 0


def draw_momentum(dim, mass, rng):
    """One draw from the canonical momentum distribution N(0, mass * I)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return np.sqrt(mass) * rng.standard_normal(dim)


def _propose(ctx, start: PhasePoint, potential_start, params, rng):
    """Leapfrog proposal + Metropolis test from an already-refreshed start point.

    Returns (q_next, potential_next, accepted).  Non-finite proposal energy
    counts as a rejection.
    """
    energy_start = potential_start + ctx.kinetic(start.rho)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            proposal = leapfrog_rollout(
                ctx, start, LeapfrogParams(params.epsilon, params.steps)
            )[-1]
            potential_prop = ctx.potential(proposal.q)
            energy_prop = potential_prop + ctx.kinetic(proposal.rho)
    except (NumericDomainError, FloatingPointError):
        return start.q, potential_start, False
    log_ratio = energy_start - energy_prop
    if not np.isfinite(log_ratio):
        return start.q, potential_start, False
    if np.log(rng.uniform()) < log_ratio:
        return proposal.q, potential_prop, True
    return start.q, potential_start, False


def hmc_transition(ctx, current: PhasePoint, params: HmcParams, rng):
    """One transition: refresh momentum, integrate, accept/reject.

    The returned point carries the refreshed momentum alongside the (possibly
    updated) position; the momentum is re-drawn on the next transition.
    """
    rho = draw_momentum(ctx.dim, params.mass, rng)
    start = PhasePoint(np.asarray(current.q, dtype=float), rho)
    q_next, _, accepted = _propose(ctx, start, ctx.potential(start.q), params, rng)
    return PhasePoint(q_next, rho), accepted


def run_chain(ctx, params: HmcParams) -> ChainOutput:
    """Run the chain and return thinned post-warmup joint-canonical samples."""
    rng = np.random.default_rng(params.seed)
    q = (
        np.zeros(ctx.dim)
        if params.initial_q is None
        else np.asarray(params.initial_q, dtype=float).copy()
    )
    if q.shape != (ctx.dim,):
        raise ValueError(f"initial_q must have dimension {ctx.dim}")
    potential = ctx.potential(q)
    samples = []
    energies = np.empty(params.iterations)
    n_accepted = 0
    for k in range(1, params.iterations + 1):
        rho = draw_momentum(ctx.dim, params.mass, rng)
        start = PhasePoint(q, rho)
        energies[k - 1] = potential + ctx.kinetic(rho)
        j = k - params.warmup
        if j >= 1 and j % params.thin == 0:
            samples.append(start.copy())
        q, potential, accepted = _propose(ctx, start, potential, params, rng)
        n_accepted += accepted
    rate = n_accepted / params.iterations if params.iterations else 0.0
    return ChainOutput(
        samples=samples,
        acceptance_rate=rate,
        energies=energies,
        n_accepted=n_accepted,
        n_iterations=params.iterations,
    )


def effective_sample_size(x):
    """ESS of a scalar chain via autocovariances with Geyer's initial
    monotone positive sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0:
        return float(n)
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer pairs (rho_2m + rho_2m+1): stop at the first non-positive pair,
    # enforce monotone non-increasing pair sums
    pair_sums = []
    for m in range(0, (n - 1) // 2):
        s = rho[2 * m] + rho[2 * m + 1]
        if s <= 0:
            break
        pair_sums.append(s)
    for i in range(1, len(pair_sums)):
        pair_sums[i] = min(pair_sums[i], pair_sums[i - 1])
    tau = max(-1.0 + 2.0 * sum(pair_sums), 1e-12)
    return float(min(n, max(1.0, n / tau)))
