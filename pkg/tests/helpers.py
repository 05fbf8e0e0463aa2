"""Synthetic models and small numerical oracles shared by the tests."""

import numpy as np

from hamid.models.base import Model, ModelDims


class GaussianTargetModel(Model):
    """Data-free model whose 'posterior' is exactly N(mu, cov).

    The prior is flat (infinite sigma) so the sampler potential equals the
    Gaussian negative log density; u and y have length zero unless an input
    length is requested (useful for control-problem tests whose cost must
    ignore u).
    """

    def __init__(self, mu, cov, u_len=0):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(self.mu.size)
        self.precision = np.linalg.inv(cov)
        self.cov = cov
        self.dims = ModelDims(
            n_theta=self.mu.size,
            n_x=0,
            n_u=1 if u_len else 0,
            n_y=0,
            horizon=max(u_len, 1),
        )
        self.prior_sigma = np.inf

    def log_joint(self, theta, x, u, y):
        r = np.asarray(theta, dtype=float) - self.mu
        return -0.5 * float(r @ self.precision @ r)

    def grad_log_joint(self, theta, x, u, y):
        r = np.asarray(theta, dtype=float) - self.mu
        return -self.precision @ r, np.zeros(0)

    def log_joint_batch(self, thetas, xs, us, ys):
        r = np.atleast_2d(thetas) - self.mu
        return -0.5 * np.einsum("bi,ij,bj->b", r, self.precision, r)

    def grad_log_joint_batch(self, thetas, xs, us, ys):
        r = np.atleast_2d(thetas) - self.mu
        return -r @ self.precision, np.zeros((r.shape[0], 0))

    def simulate(self, theta, u, seed):
        return np.zeros(0), np.zeros(0)

    def deterministic_output(self, theta, u):
        return np.zeros(0)

    def deterministic_output_batch(self, theta, us):
        return np.zeros((np.atleast_2d(us).shape[0], 0))


class FreeParticleModel(GaussianTargetModel):
    """Flat potential: the gradient vanishes and trajectories drift freely."""

    def __init__(self, dim, u_len=0):
        super().__init__(np.zeros(dim), np.eye(dim), u_len=u_len)

    def log_joint(self, theta, x, u, y):
        return 0.0

    def grad_log_joint(self, theta, x, u, y):
        return np.zeros(self.dims.n_theta), np.zeros(0)

    def log_joint_batch(self, thetas, xs, us, ys):
        return np.zeros(np.atleast_2d(thetas).shape[0])

    def grad_log_joint_batch(self, thetas, xs, us, ys):
        thetas = np.atleast_2d(thetas)
        return np.zeros_like(thetas), np.zeros((thetas.shape[0], 0))


def fd_gradient(fn, x, step=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return grad


def assert_close_fd(analytic, fd, rtol=1e-5, atol=1e-8):
    """Coordinate-wise agreement with a finite-difference reference."""
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    err = np.abs(analytic - fd)
    ok = err <= atol + rtol * np.abs(fd)
    assert ok.all(), f"gradient mismatch: max abs err {err.max():.3e} vs fd {fd}"


def dense_linear_marginal_loglik(config, theta, u, y):
    """log p(y | u, theta) of a linear SSM from the stacked joint Gaussian.

    Brute-force reference: builds the full T*ny output mean and covariance by
    propagating the initial-state and noise covariances, then evaluates the
    Gaussian density directly (2*pi constants dropped, determinant kept, to
    match the filter's convention).
    """
    A = np.array(config.A, dtype=float)
    for k, (r, c) in enumerate(config.free_param_index_set):
        A[r - 1, c - 1] = theta[k]
    B, C, D = config.B, config.C, config.D
    nx, ny, nu = A.shape[0], C.shape[0], B.shape[1]
    T = config.horizon
    u_seq = np.asarray(u, dtype=float).reshape(T, nu)
    y_vec = np.asarray(y, dtype=float).reshape(T * ny)

    # mean: noise-free rollout
    mean = np.empty(T * ny)
    x = config.x0_mean.astype(float)
    powers = [np.eye(nx)]
    for t in range(T):
        x = A @ x + B @ u_seq[t]
        mean[t * ny : (t + 1) * ny] = C @ x + D @ u_seq[t]
        powers.append(A @ powers[-1])

    # cov(x_t, x_s) = A^{t-s} Pi_s for t >= s, with Pi_t the state covariance
    pi = [config.x0_cov.astype(float)]
    for t in range(T):
        pi.append(A @ pi[-1] @ A.T + config.Sigma_w)
    cov = np.empty((T * ny, T * ny))
    for t in range(1, T + 1):
        for s in range(1, T + 1):
            if t >= s:
                block = C @ powers[t - s] @ pi[s] @ C.T
            else:
                block = C @ pi[t] @ powers[s - t].T @ C.T
            if t == s:
                block = block + config.Sigma_v
            cov[(t - 1) * ny : t * ny, (s - 1) * ny : s * ny] = block
    r = y_vec - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * logdet - 0.5 * float(r @ np.linalg.solve(cov, r))
