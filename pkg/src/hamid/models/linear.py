"""Linear Gaussian state-space model with exact marginal likelihood.

The internal state is marginalized by a Kalman filter, so the sampler
position is just ``theta`` (the free entries of the transition matrix) and
``n_x == 0``.  The filter pass also carries forward sensitivity recursions,
giving the exact gradient of the marginal log-likelihood w.r.t. each free
parameter.

Constant convention: all 2*pi terms are dropped; log-determinant terms of the
innovation covariances are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericDomainError
from .base import Model, ModelDims, as_vector

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _psd_factor(mat):
    """Lower factor L with L @ L.T == mat for a symmetric PSD matrix."""
    mat = np.asarray(mat, dtype=float)
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    if not mat.any():
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(mat)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ValueError("covariance must be positive semidefinite") from None
        return v * np.sqrt(np.clip(w, 0.0, None))


def _make_kalman_kernel():
    """Compiled filter + sensitivity recursion for scalar-output systems."""

    @njit(cache=True)
    def kernel(A, dA, Bm, c, d, Sw, sv, m0, P0, U, Y, with_grad):  # pragma: no cover
        b_n, nx, _ = A.shape
        n_par = dA.shape[0]
        T = U.shape[1]
        nu = U.shape[2]
        val = np.zeros(b_n)
        grad = np.zeros((b_n, n_par))
        ok = True
        for b in range(b_n):
            Ab = A[b]
            m = m0.copy()
            P = P0.copy()
            dm = np.zeros((n_par, nx))
            dP = np.zeros((n_par, nx, nx))
            m_pred = np.zeros(nx)
            tmp = np.zeros((nx, nx))
            P_pred = np.zeros((nx, nx))
            dm_pred = np.zeros((n_par, nx))
            dP_pred = np.zeros((n_par, nx, nx))
            pc = np.zeros(nx)
            kg = np.zeros(nx)
            dpc = np.zeros(nx)
            dkg = np.zeros(nx)
            cdp = np.zeros(nx)
            for t in range(T):
                # predicted mean: A m + B u_t
                for i in range(nx):
                    acc = 0.0
                    for j in range(nx):
                        acc += Ab[i, j] * m[j]
                    for l in range(nu):
                        acc += Bm[i, l] * U[b, t, l]
                    m_pred[i] = acc
                # predicted covariance: A P A' + Sw
                for i in range(nx):
                    for j in range(nx):
                        acc = 0.0
                        for l in range(nx):
                            acc += Ab[i, l] * P[l, j]
                        tmp[i, j] = acc
                for i in range(nx):
                    for j in range(nx):
                        acc = Sw[i, j]
                        for l in range(nx):
                            acc += tmp[i, l] * Ab[j, l]
                        P_pred[i, j] = acc
                if with_grad:
                    for k in range(n_par):
                        for i in range(nx):
                            acc = 0.0
                            for j in range(nx):
                                acc += dA[k, i, j] * m[j] + Ab[i, j] * dm[k, j]
                            dm_pred[k, i] = acc
                        # s1 = dA_k P A'
                        for i in range(nx):
                            for j in range(nx):
                                acc = 0.0
                                for l in range(nx):
                                    acc += dA[k, i, l] * P[l, j]
                                tmp[i, j] = acc
                        for i in range(nx):
                            for j in range(nx):
                                acc = 0.0
                                for l in range(nx):
                                    acc += tmp[i, l] * Ab[j, l]
                                dP_pred[k, i, j] = acc
                        for i in range(nx):
                            for j in range(i, nx):
                                v = dP_pred[k, i, j] + dP_pred[k, j, i]
                                dP_pred[k, i, j] = v
                                dP_pred[k, j, i] = v
                        # + A dP_k A'
                        for i in range(nx):
                            for j in range(nx):
                                acc = 0.0
                                for l in range(nx):
                                    acc += Ab[i, l] * dP[k, l, j]
                                tmp[i, j] = acc
                        for i in range(nx):
                            for j in range(nx):
                                acc = 0.0
                                for l in range(nx):
                                    acc += tmp[i, l] * Ab[j, l]
                                dP_pred[k, i, j] += acc
                # innovation
                e = Y[b, t]
                for i in range(nx):
                    e -= c[i] * m_pred[i]
                for l in range(nu):
                    e -= d[l] * U[b, t, l]
                s = sv
                for i in range(nx):
                    acc = 0.0
                    for j in range(nx):
                        acc += P_pred[i, j] * c[j]
                    pc[i] = acc
                    s += c[i] * acc
                if not (s > 0.0 and np.isfinite(s)):
                    ok = False
                    val[b] = np.nan
                    break
                val[b] += -0.5 * np.log(s) - 0.5 * e * e / s
                for i in range(nx):
                    kg[i] = pc[i] / s
                if with_grad:
                    for k in range(n_par):
                        de = 0.0
                        for i in range(nx):
                            de -= c[i] * dm_pred[k, i]
                        ds = 0.0
                        for i in range(nx):
                            acc = 0.0
                            for j in range(nx):
                                acc += dP_pred[k, i, j] * c[j]
                            dpc[i] = acc
                            ds += c[i] * acc
                        grad[b, k] += (
                            -0.5 * ds / s - e * de / s + 0.5 * e * e * ds / (s * s)
                        )
                        for i in range(nx):
                            dkg[i] = (dpc[i] - kg[i] * ds) / s
                        # c' dP_pred[k] (row vector)
                        for j in range(nx):
                            acc = 0.0
                            for i in range(nx):
                                acc += c[i] * dP_pred[k, i, j]
                            cdp[j] = acc
                        for i in range(nx):
                            dm[k, i] = dm_pred[k, i] + dkg[i] * e + kg[i] * de
                        for i in range(nx):
                            for j in range(nx):
                                dP[k, i, j] = (
                                    dP_pred[k, i, j] - kg[i] * cdp[j] - dkg[i] * pc[j]
                                )
                # update
                for i in range(nx):
                    m[i] = m_pred[i] + kg[i] * e
                for i in range(nx):
                    for j in range(nx):
                        P[i, j] = P_pred[i, j] - kg[i] * pc[j]
        return val, grad, ok

    return kernel


_kalman_kernel = _make_kalman_kernel() if _HAVE_NUMBA else None


@dataclass
class LinearSsmConfig:
    """System matrices and noise statistics of the linear Gaussian model.

    ``free_param_index_set`` lists the entries of ``A`` treated as unknown
    parameters, as 1-based (row, col) matrix subscripts; the values stored in
    ``A`` at those positions are placeholders that get overwritten by theta.
    """

    A: np.ndarray = field(default_factory=lambda: np.array([[0.7, 0.3], [-0.2, 0.7]]))
    B: np.ndarray = field(default_factory=lambda: np.array([[0.0], [1.0]]))
    C: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0]]))
    D: np.ndarray = field(default_factory=lambda: np.array([[0.0]]))
    Sigma_w: np.ndarray = field(default_factory=lambda: 0.05**2 * np.eye(2))
    Sigma_v: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(1))
    free_param_index_set: tuple = ((2, 1), (2, 2))
    x0_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    x0_cov: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(2))
    horizon: int = 50
    prior_sigma: float = 10.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.Sigma_w = np.asarray(self.Sigma_w, dtype=float)
        self.Sigma_v = np.asarray(self.Sigma_v, dtype=float)
        self.x0_mean = np.asarray(self.x0_mean, dtype=float)
        self.x0_cov = np.asarray(self.x0_cov, dtype=float)
        nx = self.A.shape[0]
        if self.A.shape != (nx, nx):
            raise ValueError("A must be square")
        if self.B.shape[0] != nx or self.C.shape[1] != nx:
            raise ValueError("B/C shapes inconsistent with A")
        ny, nu = self.C.shape[0], self.B.shape[1]
        if self.D.shape != (ny, nu):
            raise ValueError(f"D must have shape {(ny, nu)}")
        for mat, n, name in (
            (self.Sigma_w, nx, "Sigma_w"),
            (self.Sigma_v, ny, "Sigma_v"),
            (self.x0_cov, nx, "x0_cov"),
        ):
            if mat.shape != (n, n):
                raise ValueError(f"{name} must have shape {(n, n)}")
            _psd_factor(mat)
        for (r, c) in self.free_param_index_set:
            if not (1 <= r <= nx and 1 <= c <= nx):
                raise ValueError(f"free parameter index ({r},{c}) outside A")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


class LinearSsm(Model):
    """Linear Gaussian state-space model, exact marginal likelihood in theta."""

    def __init__(self, config: LinearSsmConfig | None = None):
        self.config = config or LinearSsmConfig()
        cfg = self.config
        nx = cfg.A.shape[0]
        self.dims = ModelDims(
            n_theta=len(cfg.free_param_index_set),
            n_x=0,
            n_u=cfg.B.shape[1],
            n_y=cfg.C.shape[0],
            horizon=cfg.horizon,
        )
        self.prior_sigma = cfg.prior_sigma
        # elementary direction of A per free parameter (0-based internally)
        self._free_rc = [(r - 1, c - 1) for r, c in cfg.free_param_index_set]
        self._dA = np.zeros((self.dims.n_theta, nx, nx))
        for k, (r, c) in enumerate(self._free_rc):
            self._dA[k, r, c] = 1.0
        self._Lw = _psd_factor(cfg.Sigma_w)
        self._Lv = _psd_factor(cfg.Sigma_v)
        self._Lx0 = _psd_factor(cfg.x0_cov)

    def _a_matrix(self, thetas):
        """Transition matrices with theta substituted, batched (b, nx, nx)."""
        b = thetas.shape[0]
        A = np.broadcast_to(self.config.A, (b,) + self.config.A.shape).copy()
        for k, (r, c) in enumerate(self._free_rc):
            A[:, r, c] = thetas[:, k]
        return A

    # ------------------------------------------------------------------
    # Kalman filter with forward parameter sensitivities
    # ------------------------------------------------------------------
    def _kalman_batch(self, thetas, us, ys, with_grad=True):
        cfg, d = self.config, self.dims
        if _kalman_kernel is not None and d.n_y == 1:
            A = self._a_matrix(np.ascontiguousarray(thetas))
            val, grad, ok = _kalman_kernel(
                A,
                self._dA,
                cfg.B,
                cfg.C[0],
                cfg.D[0],
                cfg.Sigma_w,
                float(cfg.Sigma_v[0, 0]),
                cfg.x0_mean,
                cfg.x0_cov,
                np.ascontiguousarray(us).reshape(thetas.shape[0], d.horizon, d.n_u),
                np.ascontiguousarray(ys).reshape(thetas.shape[0], d.horizon),
                with_grad,
            )
            if not ok:
                raise NumericDomainError("innovation covariance not positive definite")
            return val, (grad if with_grad else None)
        return self._kalman_batch_dense(thetas, us, ys, with_grad)

    def _kalman_batch_dense(self, thetas, us, ys, with_grad=True):
        """Reference vectorized filter; handles any output dimension."""
        cfg, d = self.config, self.dims
        b, k = thetas.shape[0], d.n_theta
        nx, ny, nu, T = cfg.A.shape[0], d.n_y, d.n_u, d.horizon
        A = self._a_matrix(thetas)
        dA = self._dA
        C, D = cfg.C, cfg.D
        u_seq = us.reshape(b, T, nu)
        y_seq = ys.reshape(b, T, ny)

        m = np.broadcast_to(cfg.x0_mean, (b, nx)).copy()
        P = np.broadcast_to(cfg.x0_cov, (b, nx, nx)).copy()
        val = np.zeros(b)
        if with_grad:
            dm = np.zeros((b, k, nx))
            dP = np.zeros((b, k, nx, nx))
            grad = np.zeros((b, k))

        for t in range(T):
            u_t, y_t = u_seq[:, t], y_seq[:, t]
            # predict
            m_pred = np.einsum("bij,bj->bi", A, m) + u_t @ cfg.B.T
            AP = A @ P
            P_pred = AP @ A.transpose(0, 2, 1) + cfg.Sigma_w
            if with_grad:
                dm_pred = np.einsum("kij,bj->bki", dA, m) + np.einsum(
                    "bij,bkj->bki", A, dm
                )
                s_term = np.einsum("kij,bjl,bml->bkim", dA, P, A)
                dP_pred = (
                    s_term
                    + s_term.transpose(0, 1, 3, 2)
                    + np.einsum("bij,bkjl,bml->bkim", A, dP, A)
                )
            # innovate
            e = y_t - m_pred @ C.T - u_t @ D.T
            PC = P_pred @ C.T
            S = C @ PC + cfg.Sigma_v
            S = 0.5 * (S + S.transpose(0, 2, 1))
            if ny == 1:
                s = S[:, 0, 0]
                if np.any(s <= 0) or not np.all(np.isfinite(s)):
                    raise NumericDomainError("innovation covariance not positive definite")
                S_inv = (1.0 / s)[:, None, None]
                logdet = np.log(s)
            else:
                sign, logdet = np.linalg.slogdet(S)
                if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
                    raise NumericDomainError("innovation covariance not positive definite")
                S_inv = np.linalg.inv(S)
            Se = np.einsum("bij,bj->bi", S_inv, e)
            val += -0.5 * logdet - 0.5 * np.einsum("bi,bi->b", e, Se)
            K = PC @ S_inv
            if with_grad:
                de = -np.einsum("ij,bkj->bki", C, dm_pred)
                dS = np.einsum("ij,bkjl,ml->bkim", C, dP_pred, C)
                dSe = np.einsum("bkij,bj->bki", dS, Se)
                grad += (
                    -0.5 * np.einsum("bkii->bk", np.einsum("bij,bkjl->bkil", S_inv, dS))
                    - np.einsum("bi,bki->bk", Se, de)
                    + 0.5 * np.einsum("bki,bi->bk", dSe, Se)
                )
                dK = np.einsum(
                    "bkij,bjl->bkil",
                    np.einsum("bkij,jl->bkil", dP_pred, C.T) - np.einsum("bij,bkjl->bkil", K, dS),
                    S_inv,
                )
                dm = dm_pred + np.einsum("bkij,bj->bki", dK, e) + np.einsum(
                    "bij,bkj->bki", K, de
                )
                KC = K @ C
                dP = np.einsum("bkij,bjl->bkil", dK, -C @ P_pred) + np.einsum(
                    "bij,bkjl->bkil", np.eye(nx) - KC, dP_pred
                )
            # update
            m = m_pred + np.einsum("bij,bj->bi", K, e)
            P = (np.eye(nx) - K @ C) @ P_pred

        if with_grad:
            return val, grad
        return val, None

    # ------------------------------------------------------------------
    # Model interface
    # ------------------------------------------------------------------
    def log_joint(self, theta, x, u, y):
        theta, x, u, y = self.check_args(theta, x, u, y)
        val, _ = self._kalman_batch(theta[None], u[None], y[None], with_grad=False)
        return float(val[0])

    def grad_log_joint(self, theta, x, u, y):
        theta, x, u, y = self.check_args(theta, x, u, y)
        _, grad = self._kalman_batch(theta[None], u[None], y[None])
        return grad[0], np.zeros(0)

    def log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        val, _ = self._kalman_batch(thetas, us, ys, with_grad=False)
        return val

    def grad_log_joint_batch(self, thetas, xs, us, ys):
        thetas, xs, us, ys = self._check_batch(thetas, xs, us, ys)
        _, grad = self._kalman_batch(thetas, us, ys)
        return grad, np.zeros((thetas.shape[0], 0))

    def simulate(self, theta, u, seed):
        cfg, d = self.config, self.dims
        theta = as_vector(theta, d.n_theta, "theta")
        u_seq = as_vector(u, d.u_len, "u").reshape(d.horizon, d.n_u)
        A = self._a_matrix(theta[None])[0]
        rng = np.random.default_rng(seed)
        x = cfg.x0_mean + self._Lx0 @ rng.standard_normal(A.shape[0])
        zw = rng.standard_normal((d.horizon, A.shape[0]))
        zv = rng.standard_normal((d.horizon, d.n_y))
        y = np.empty((d.horizon, d.n_y))
        for t in range(d.horizon):
            x = A @ x + cfg.B @ u_seq[t] + self._Lw @ zw[t]
            y[t] = cfg.C @ x + cfg.D @ u_seq[t] + self._Lv @ zv[t]
        return y.ravel(), np.zeros(0)

    def deterministic_output(self, theta, u):
        return self.deterministic_output_batch(theta, np.asarray(u, dtype=float)[None])[0]

    def deterministic_output_batch(self, theta, us):
        cfg, d = self.config, self.dims
        theta = as_vector(theta, d.n_theta, "theta")
        us = np.atleast_2d(np.asarray(us, dtype=float))
        b = us.shape[0]
        u_seq = us.reshape(b, d.horizon, d.n_u)
        A = self._a_matrix(theta[None])[0]
        x = np.broadcast_to(cfg.x0_mean, (b, A.shape[0])).copy()
        y = np.empty((b, d.horizon, d.n_y))
        for t in range(d.horizon):
            x = x @ A.T + u_seq[:, t] @ cfg.B.T
            y[:, t] = x @ cfg.C.T + u_seq[:, t] @ cfg.D.T
        return y.reshape(b, d.y_len)


def kalman_loglik(config, theta, u, y):
    """Exact marginal log-likelihood of a linear model and its theta-gradient."""
    model = LinearSsm(config)
    theta = as_vector(theta, model.dims.n_theta, "theta")
    u = as_vector(u, model.dims.u_len, "u")
    y = as_vector(y, model.dims.y_len, "y")
    val, grad = model._kalman_batch(theta[None], u[None], y[None])
    return float(val[0]), grad[0]
