"""Independent ground-truth posteriors on dense parameter grids.

For models that expose an exact marginal likelihood (``n_x == 0``) the grid
values are exact; for latent-state models the per-node likelihood is a
bootstrap particle-filter estimate averaged over seeds.  Normalization and
moments use the trapezoid rule, which is plenty in the <= 2 parameter
dimensions these oracles are restricted to.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import NumericDomainError


@dataclass
class GridSpec:
    """Tensor-product grid axes, one 1-d node array per parameter."""

    axes: list

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("grid oracles support 1 or 2 parameter dimensions")
        for a in self.axes:
            if a.ndim != 1 or a.size < 3 or np.any(np.diff(a) <= 0):
                raise ValueError("each axis must be an increasing vector of >= 3 nodes")

    @classmethod
    def centered(cls, center, half_width, nodes):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls([np.linspace(c - half_width, c + half_width, nodes) for c in center])

    def nodes(self):
        """All grid nodes, shape (n_nodes, n_params), row-major over axes."""
        if len(self.axes) == 1:
            return self.axes[0][:, None]
        g0, g1 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])


def default_grid(theta_star, n_theta):
    """Default oracle grids: 161x161 over +-0.5 per axis in 2-d, 401 nodes
    over +-1 for scalar parameters."""
    if n_theta == 1:
        return GridSpec.centered(theta_star, 1.0, 401)
    return GridSpec.centered(theta_star, 0.5, 161)


def _trapezoid_weights(axis):
    w = np.empty_like(axis)
    w[0] = 0.5 * (axis[1] - axis[0])
    w[-1] = 0.5 * (axis[-1] - axis[-2])
    w[1:-1] = 0.5 * (axis[2:] - axis[:-2])
    return w


@dataclass
class GridPosterior:
    """Unnormalized log posterior tabulated on a tensor-product grid."""

    spec: GridSpec
    log_density: np.ndarray
    normalizer: float = field(init=False)

    def __post_init__(self):
        shape = tuple(a.size for a in self.spec.axes)
        self.log_density = np.asarray(self.log_density, dtype=float).reshape(shape)
        self._weights = _trapezoid_weights(self.spec.axes[0])
        if len(self.spec.axes) == 2:
            self._weights = np.outer(self._weights, _trapezoid_weights(self.spec.axes[1]))
        self._log_max = float(self.log_density.max())
        raw = np.exp(self.log_density - self._log_max)
        self.normalizer = float((self._weights * raw).sum())
        self._density = raw / self.normalizer

    @property
    def density(self):
        """Normalized density on the grid (trapezoid mass exactly 1)."""
        return self._density

    def boundary_mass_ratio(self):
        """Peak density on the grid boundary relative to the global peak."""
        d = self._density
        if d.ndim == 1:
            edge = max(d[0], d[-1])
        else:
            edge = max(d[0, :].max(), d[-1, :].max(), d[:, 0].max(), d[:, -1].max())
        return float(edge / d.max())


def grid_posterior(model, u, y, grid_spec: GridSpec, pf_particles=5000,
                   pf_seeds=20, seed=0, threads=1) -> GridPosterior:
    """Tabulate log p(y|u,theta) + log p(theta) on the grid.

    Exact likelihoods are used when the model marginalizes its states
    (``n_x == 0``); otherwise each node gets a seed-averaged bootstrap
    particle-filter estimate.  Warns if visible mass touches the boundary.
    """
    nodes = grid_spec.nodes()
    if nodes.shape[1] != model.dims.n_theta:
        raise ValueError("grid dimension does not match the model parameter count")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.dims.n_x == 0:
        loglik = model.log_joint_batch(
            nodes, np.zeros((nodes.shape[0], 0)), u[None], y[None]
        )
    else:
        loglik = _pf_grid(model, nodes, u, y, pf_particles, pf_seeds, seed, threads)
    prior = np.array([model.log_prior(t) for t in nodes])
    gp = GridPosterior(grid_spec, loglik + prior)
    ratio = gp.boundary_mass_ratio()
    if ratio >= 1e-6:
        warnings.warn(
            f"posterior mass touches the grid boundary (edge/peak = {ratio:.2e}); "
            "widen the grid",
            stacklevel=2,
        )
    return gp


def auto_grid_posterior(model, u, y, center, half_width=None, nodes=None,
                        widen=1.5, max_rounds=3, **kwargs) -> GridPosterior:
    """Grid posterior that widens itself while mass touches the boundary."""
    n_theta = model.dims.n_theta
    base = default_grid(center, n_theta)
    if half_width is None:
        half_width = 0.5 * float(base.axes[0][-1] - base.axes[0][0])
    if nodes is None:
        nodes = base.axes[0].size
    for round_idx in range(max_rounds + 1):
        spec = GridSpec.centered(center, half_width, nodes)
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            gp = grid_posterior(model, u, y, spec, **kwargs)
        if gp.boundary_mass_ratio() < 1e-6 or round_idx == max_rounds:
            return gp
        half_width *= widen
    return gp


def moments(gp: GridPosterior):
    """Trapezoid-rule mean and covariance of the grid posterior."""
    nodes = gp.spec.nodes()
    w = (gp._weights * gp.density).ravel()
    mean = w @ nodes
    centered = nodes - mean
    cov = centered.T @ (centered * w[:, None])
    return mean, cov


def cost_from_grid(gp: GridPosterior, theta_star):
    """Posterior expectation of |theta - theta_star|^2 on the grid."""
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    nodes = gp.spec.nodes()
    w = (gp._weights * gp.density).ravel()
    return float(w @ ((nodes - theta_star) ** 2).sum(axis=1))


def empirical_cost_decomposition(thetas, theta_star):
    """Mean squared error of samples about theta_star and its exact split
    into squared bias plus total variance (denominator n)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    mse = float(((thetas - theta_star) ** 2).sum(axis=1).mean())
    mu = thetas.mean(axis=0)
    bias_sq = float(((mu - theta_star) ** 2).sum())
    var = float(((thetas - mu) ** 2).sum(axis=1).mean())
    return mse, bias_sq, var


# ----------------------------------------------------------------------
# bootstrap particle filter (scalar latent state), batched over seeds
# ----------------------------------------------------------------------
def _pf_noise(T, n_seeds, n_particles, seed):
    """Deterministic noise block consumed by every PF implementation:
    initial draws, per-step resampling uniforms, per-step transition draws."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z0 = rng.standard_normal((n_seeds, n_particles))
    resamp = rng.uniform(size=(T, n_seeds, n_particles))
    znoise = rng.standard_normal((max(T - 1, 0), n_seeds, n_particles))
    return z0, resamp, znoise


def _stratified_resample(weights, uniforms):
    """Stratified resampling indices, batched over rows of ``weights``."""
    s, n = weights.shape
    positions = (np.arange(n) + uniforms) / n
    cum = np.cumsum(weights, axis=1)
    cum[:, -1] = 1.0
    # one flat searchsorted for all rows: shift row r into the slot [2r, 2r+1]
    offsets = 2.0 * np.arange(s)[:, None]
    flat = np.searchsorted((cum + offsets).ravel(), (positions + offsets).ravel())
    return flat.reshape(s, n) - n * np.arange(s)[:, None]


def pf_marginal_loglik(model, theta, u, y, n_particles=5000, n_seeds=1, seed=0):
    """Bootstrap PF estimates of log p(y|u,theta), one per seed (shape (n_seeds,)).

    Resampling is stratified and applied every step; the log-weight arithmetic
    is max-shifted throughout.  Raises :class:`NumericDomainError` when any
    seed's effective sample size collapses below 10 particles.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    T = model.dims.horizon
    u = np.asarray(u, dtype=float).reshape(T)
    y = np.asarray(y, dtype=float).reshape(T)
    z0, resamp, znoise = _pf_noise(T, n_seeds, n_particles, seed)
    particles = model.pf_initial(theta, z0)
    loglik = np.zeros(n_seeds)
    log_n = np.log(n_particles)
    for t in range(T):
        logw = model.pf_log_obs(theta, particles, y[t])
        step_ll = logsumexp(logw, axis=1)
        loglik += step_ll - log_n
        w = np.exp(logw - step_ll[:, None])
        ess = 1.0 / (w**2).sum(axis=1)
        if np.any(ess < 10):
            raise NumericDomainError(
                f"particle filter degenerate at step {t + 1} (ESS {ess.min():.2f})"
            )
        idx = _stratified_resample(w, resamp[t])
        particles = np.take_along_axis(particles, idx, axis=1)
        if t < T - 1:
            particles = model.pf_transition(theta, particles, u[t], znoise[t])
    return loglik


def _pf_grid(model, nodes, u, y, n_particles, n_seeds, seed, threads):
    """Seed-averaged PF log-likelihood at each grid node.

    Seed estimates are averaged in the likelihood domain (each one is an
    unbiased estimate of the marginal likelihood).  Models may provide a
    compiled ``pf_loglik_nodes`` fast path covering whole node batches.
    """
    def finish(lls):
        with np.errstate(invalid="ignore"):
            out = logsumexp(lls, axis=1) - np.log(n_seeds)
        bad = ~np.isfinite(out)
        if bad.any():
            if bad.mean() > 0.5:
                raise NumericDomainError(
                    f"particle filter degenerate on {bad.sum()} of {bad.size} grid nodes"
                )
            warnings.warn(
                f"{bad.sum()} grid node(s) in the explosive-dynamics regime were "
                "assigned zero posterior density (degenerate particle filter)",
                stacklevel=3,
            )
            out[bad] = -np.inf
        return out

    if hasattr(model, "pf_loglik_nodes"):
        return finish(
            model.pf_loglik_nodes(
                nodes, u, y, n_particles, n_seeds, seed, threads=threads,
                degenerate="floor",
            )
        )

    def one_node(i):
        try:
            return pf_marginal_loglik(
                model, nodes[i], u, y, n_particles=n_particles, n_seeds=n_seeds, seed=seed
            )
        except NumericDomainError:
            return np.full(n_seeds, -np.inf)

    rows = [None] * nodes.shape[0]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, row in enumerate(pool.map(one_node, range(nodes.shape[0]))):
                rows[i] = row
    else:
        for i in range(nodes.shape[0]):
            rows[i] = one_node(i)
    return finish(np.stack(rows))
