"""Scalar nonlinear state-space model with latent-state augmentation.

    x[t+1] = theta * (x[t]^3 - x[t]) / (1 + x[t]^2) + u[t] + w[t]
    y[t]   = x[t] + x[t]^2 + x[t]^3 / 10 + v[t]

with w, v and the initial state x[1] all zero-mean Gaussian with a common
standard deviation.  The marginal likelihood has no closed form, so the
sampler position is augmented with the latent trajectory: q = [theta; x_1:T].
The final input u[T] drives no observed state and therefore does not enter
the likelihood.

Constant convention: 2*pi terms dropped, log-variance terms kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Model, ModelDims, as_vector


def _drift(x):
    return (x**3 - x) / (1.0 + x**2)


def _drift_dx(x):
    return (x**4 + 4.0 * x**2 - 1.0) / (1.0 + x**2) ** 2


def _emit(x):
    return x + x**2 + 0.1 * x**3


def _emit_dx(x):
    return 1.0 + 2.0 * x + 0.3 * x**2


@dataclass
class NonlinearSsmConfig:
    noise_std: float = 0.1
    horizon: int = 30
    prior_sigma: float = 10.0

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


class NonlinearSsm(Model):
    """Scalar nonlinear SSM; position is [theta; x_1:T]."""

    def __init__(self, config: NonlinearSsmConfig | None = None):
        self.config = config or NonlinearSsmConfig()
        self.dims = ModelDims(
            n_theta=1, n_x=1, n_u=1, n_y=1, horizon=self.config.horizon
        )
        self.prior_sigma = self.config.prior_sigma

    def log_joint(self, theta, x, u, y):
        theta, x, u, y = self.check_args(theta, x, u, y)
        return float(
            self.log_joint_batch(theta[None], x[None], u[None], y[None])[0]
        )

    def grad_log_joint(self, theta, x, u, y):
        theta, x, u, y = self.check_args(theta, x, u, y)
        gt, gx = self.grad_log_joint_batch(theta[None], x[None], u[None], y[None])
        return gt[0], gx[0]

    def log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        s2 = self.config.noise_std**2
        T = self.config.horizon
        th = thetas[:, 0:1]
        with np.errstate(over="ignore", invalid="ignore"):
            r = xs[:, 1:] - th * _drift(xs[:, :-1]) - us[:, : T - 1]
            e = ys - _emit(xs)
            n_factors = 2 * T  # x1 prior + T-1 transitions + T observations
            return (
                -0.5 * (xs[:, 0] ** 2 + (r**2).sum(axis=1) + (e**2).sum(axis=1)) / s2
                - 0.5 * n_factors * np.log(s2)
            )

    def grad_log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        s2 = self.config.noise_std**2
        T = self.config.horizon
        th = thetas[:, 0:1]
        with np.errstate(over="ignore", invalid="ignore"):
            phi = _drift(xs[:, :-1])
            r = xs[:, 1:] - th * phi - us[:, : T - 1]
            e = ys - _emit(xs)

            g_theta = (r * phi).sum(axis=1, keepdims=True) / s2
            g_x = e * _emit_dx(xs) / s2
            g_x[:, 0] -= xs[:, 0] / s2
            g_x[:, 1:] -= r / s2
            g_x[:, :-1] += r * th * _drift_dx(xs[:, :-1]) / s2
        return g_theta, g_x

    def simulate(self, theta, u, seed):
        d = self.dims
        theta = as_vector(theta, 1, "theta")
        u = as_vector(u, d.u_len, "u")
        sd = self.config.noise_std
        rng = np.random.default_rng(seed)
        x = np.empty(d.horizon)
        x[0] = sd * rng.standard_normal()
        w = sd * rng.standard_normal(d.horizon - 1)
        v = sd * rng.standard_normal(d.horizon)
        for t in range(d.horizon - 1):
            x[t + 1] = theta[0] * _drift(x[t]) + u[t] + w[t]
        return _emit(x) + v, x

    def deterministic_output(self, theta, u):
        return _emit(self.deterministic_states(theta, u))

    def deterministic_states(self, theta, u):
        d = self.dims
        theta = as_vector(theta, 1, "theta")
        u = as_vector(u, d.u_len, "u")
        x = np.empty(d.horizon)
        x[0] = 0.0
        for t in range(d.horizon - 1):
            x[t + 1] = theta[0] * _drift(x[t]) + u[t]
        return x

    def deterministic_output_batch(self, theta, us):
        d = self.dims
        theta = as_vector(theta, 1, "theta")
        us = np.atleast_2d(np.asarray(us, dtype=float))
        x = np.zeros((us.shape[0], d.horizon))
        for t in range(d.horizon - 1):
            x[:, t + 1] = theta[0] * _drift(x[:, t]) + us[:, t]
        return _emit(x)

    # ------------------------------------------------------------------
    # bootstrap particle filter hooks (used by the grid oracle); noise is
    # supplied as pregenerated standard-normal draws so runs are pure
    # functions of the seed
    # ------------------------------------------------------------------
    def pf_initial(self, theta, z):
        return self.config.noise_std * z

    def pf_transition(self, theta, particles, u_t, z):
        return theta[0] * _drift(particles) + u_t + self.config.noise_std * z

    def pf_log_obs(self, theta, particles, y_t):
        s2 = self.config.noise_std**2
        return -0.5 * (y_t - _emit(particles)) ** 2 / s2 - 0.5 * np.log(s2)

    def pf_loglik_nodes(self, thetas, u, y, n_particles, n_seeds, seed, threads=1,
                        degenerate="raise"):
        """Per-seed PF log-likelihood estimates at many parameter values.

        Shares one pregenerated noise stream across nodes (common random
        numbers), so neighbouring grid nodes see correlated estimator noise
        and the tabulated posterior stays smooth.  Returns (n_nodes, n_seeds).

        ``degenerate`` controls nodes whose filter collapses (ESS < 10):
        "raise" propagates the numeric-domain error, "floor" reports them as
        -inf log-likelihood (they sit deep in the explosive-dynamics regime
        where the true likelihood is negligible anyway).
        """
        from ..oracle import _pf_noise

        thetas = np.ascontiguousarray(np.atleast_2d(thetas)[:, 0])
        T = self.dims.horizon
        u = np.asarray(u, dtype=float).reshape(T)
        y = np.asarray(y, dtype=float).reshape(T)
        z0, resamp, znoise = _pf_noise(T, n_seeds, n_particles, seed)
        if _pf_kernel is not None:
            out = np.empty((thetas.size, n_seeds))
            ok = np.ones(thetas.size, dtype=np.bool_)
            sd = self.config.noise_std
            if threads > 1 and thetas.size > 1:
                from concurrent.futures import ThreadPoolExecutor

                chunks = np.array_split(np.arange(thetas.size), threads)
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    futures = [
                        pool.submit(
                            _pf_kernel, thetas[c], u, y, z0, resamp, znoise,
                            sd, out[c[0] : c[-1] + 1], ok[c[0] : c[-1] + 1],
                        )
                        for c in chunks
                        if c.size
                    ]
                    for f in futures:
                        f.result()
            else:
                _pf_kernel(thetas, u, y, z0, resamp, znoise, sd, out, ok)
            if not ok.all():
                if degenerate == "raise":
                    from ..errors import NumericDomainError

                    raise NumericDomainError("particle filter degenerate (ESS < 10)")
                out[~ok] = -np.inf
            return out
        from ..errors import NumericDomainError
        from ..oracle import pf_marginal_loglik

        rows = []
        for th in thetas:
            try:
                rows.append(
                    pf_marginal_loglik(
                        self, np.array([th]), u, y,
                        n_particles=n_particles, n_seeds=n_seeds, seed=seed,
                    )
                )
            except NumericDomainError:
                if degenerate == "raise":
                    raise
                rows.append(np.full(n_seeds, -np.inf))
        return np.stack(rows)


def _make_pf_kernel():
    # numba's auto-parallelizer mis-transforms the stateful resampling scan,
    # so the kernel is compiled serial (nogil) and callers chunk across threads
    from numba import njit

    @njit(cache=True, nogil=True)
    def kernel(thetas, u, y, z0, resamp, znoise, sd, out, ok):  # pragma: no cover
        n_nodes = thetas.shape[0]
        T, S, N = resamp.shape
        s2 = sd * sd
        half_log_s2 = 0.5 * np.log(s2)
        log_n = np.log(N)
        for node in range(n_nodes):
            th = thetas[node]
            for s in range(S):
                particles = sd * z0[s]
                ll = 0.0
                good = True
                for t in range(T):
                    maxw = -np.inf
                    logw = np.empty(N)
                    for i in range(N):
                        x = particles[i]
                        e = y[t] - (x + x * x + 0.1 * x * x * x)
                        lw = -0.5 * e * e / s2 - half_log_s2
                        logw[i] = lw
                        if lw > maxw:
                            maxw = lw
                    w = np.empty(N)
                    wsum = 0.0
                    for i in range(N):
                        w[i] = np.exp(logw[i] - maxw)
                        wsum += w[i]
                    ll += maxw + np.log(wsum) - log_n
                    cum = np.empty(N)
                    acc = 0.0
                    sq = 0.0
                    for i in range(N):
                        wi = w[i] / wsum
                        sq += wi * wi
                        acc += wi
                        cum[i] = acc
                    if 1.0 / sq < 10.0:
                        good = False
                        break
                    cum[N - 1] = 1.0
                    nxt = np.empty(N)
                    j = 0
                    for i in range(N):
                        pos = (i + resamp[t, s, i]) / N
                        while cum[j] < pos:
                            j += 1
                        nxt[i] = particles[j]
                    if t < T - 1:
                        for i in range(N):
                            xp = nxt[i]
                            nxt[i] = (
                                th * (xp * xp * xp - xp) / (1.0 + xp * xp)
                                + u[t]
                                + sd * znoise[t, s, i]
                            )
                    particles = nxt
                out[node, s] = ll if good else np.nan
                if not good:
                    ok[node] = False

    return kernel


try:
    _pf_kernel = _make_pf_kernel()
except ImportError:  # pragma: no cover
    _pf_kernel = None
