import numpy as np
import pytest
from scipy.special import logsumexp

from hamid import HamiltonianContext, HmcParams, run_chain
from hamid.errors import NumericDomainError
from hamid.hamiltonian import leapfrog_terminal_rows
from hamid.models.base import Model, ModelDims
from hamid.oracle import (
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

from helpers import GaussianTargetModel


class LinearInParameterModel(Model):
    """y_t = theta * phi_t + noise: conjugate Gaussian posterior."""

    def __init__(self, phi, noise_std=0.3, prior_sigma=0.5):
        self.phi = np.asarray(phi, dtype=float)
        self.noise_std = noise_std
        self.prior_sigma = prior_sigma
        self.dims = ModelDims(n_theta=1, n_x=0, n_u=1, n_y=1, horizon=self.phi.size)

    def log_joint(self, theta, x, u, y):
        r = np.asarray(y) - theta[0] * self.phi
        return float(-0.5 * (r @ r) / self.noise_std**2)

    def grad_log_joint(self, theta, x, u, y):
        r = np.asarray(y) - theta[0] * self.phi
        return np.array([(r @ self.phi) / self.noise_std**2]), np.zeros(0)

    def log_joint_batch(self, thetas, xs, us, ys):
        r = ys - thetas[:, 0:1] * self.phi
        return -0.5 * (r**2).sum(axis=1) / self.noise_std**2

    def simulate(self, theta, u, seed):
        rng = np.random.default_rng(seed)
        return theta[0] * self.phi + self.noise_std * rng.standard_normal(self.phi.size), np.zeros(0)

    def deterministic_output(self, theta, u):
        return theta[0] * self.phi

    def conjugate_posterior(self, y):
        s2, p2 = self.noise_std**2, self.prior_sigma**2
        prec = (self.phi @ self.phi) / s2 + 1.0 / p2
        mean = (self.phi @ np.asarray(y)) / s2 / prec
        return mean, 1.0 / prec


class FlatLikelihoodModel(GaussianTargetModel):
    """y carries no information: the posterior is the prior."""

    def __init__(self, prior_sigma):
        super().__init__(np.zeros(1), np.eye(1))
        self.prior_sigma = prior_sigma

    def log_joint(self, theta, x, u, y):
        return 0.0

    def log_joint_batch(self, thetas, xs, us, ys):
        return np.zeros(np.atleast_2d(thetas).shape[0])


def gaussian_grid(center=0.0, sigma=0.2, nodes=401, span=6.0):
    axis = np.linspace(center - span * sigma, center + span * sigma, nodes)
    log_density = -0.5 * (axis - center) ** 2 / sigma**2
    return GridPosterior(GridSpec([axis]), log_density)


def test_normalized_density_integrates_to_one():
    gp = gaussian_grid()
    total = (gp._weights * gp.density).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


def test_conjugate_posterior_moments_match_closed_form():
    rng = np.random.default_rng(0)
    model = LinearInParameterModel(phi=rng.standard_normal(12))
    y, _ = model.simulate(np.array([0.8]), np.zeros(12), 3)
    mean_true, var_true = model.conjugate_posterior(y)
    axis = np.linspace(mean_true - 8 * np.sqrt(var_true), mean_true + 8 * np.sqrt(var_true), 801)
    gp = grid_posterior(model, np.zeros(12), y, GridSpec([axis]))
    mean, cov = moments(gp)
    assert mean[0] == pytest.approx(mean_true, abs=1e-6)
    assert cov[0, 0] == pytest.approx(var_true, rel=1e-6)


def test_flat_likelihood_recovers_prior():
    model = FlatLikelihoodModel(prior_sigma=0.5)
    gp = grid_posterior(model, np.zeros(0), np.zeros(0), GridSpec.centered([0.0], 3.0, 601))
    mean, cov = moments(gp)
    assert mean[0] == pytest.approx(0.0, abs=1e-12)
    assert cov[0, 0] == pytest.approx(0.25, rel=1e-3)


def test_symmetric_density_mean_at_center():
    gp = gaussian_grid(center=1.3)
    mean, _ = moments(gp)
    assert mean[0] == pytest.approx(1.3, abs=1e-12)


def test_gaussian_grid_covariance_close():
    gp = gaussian_grid(sigma=0.2)
    _, cov = moments(gp)
    assert cov[0, 0] == pytest.approx(0.04, rel=1e-3)


def test_point_mass_limit():
    axis = np.linspace(-1, 1, 201)
    log_density = np.where(np.isclose(axis, 0.0), 0.0, -1e8)
    gp = GridPosterior(GridSpec([axis]), log_density)
    mean, cov = moments(gp)
    assert abs(mean[0]) < 1e-12
    assert cov[0, 0] < 1e-10
    assert cost_from_grid(gp, [0.0]) < 1e-10


def test_cost_from_grid_gaussian_closed_form():
    sigma = 0.15
    axes = [np.linspace(-6 * sigma, 6 * sigma, 401)] * 2
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    log_density = -0.5 * (g0**2 + g1**2) / sigma**2
    gp = GridPosterior(GridSpec(axes), log_density)
    assert cost_from_grid(gp, [0.0, 0.0]) == pytest.approx(2 * sigma**2, rel=1e-3)


def test_cost_identity_and_resampling_oracle():
    gp = gaussian_grid(center=0.4, sigma=0.25)
    theta_star = np.array([0.1])
    cost = cost_from_grid(gp, theta_star)
    mean, cov = moments(gp)
    assert cost == pytest.approx(
        float((mean - theta_star) ** 2) + float(np.trace(cov)), abs=1e-10
    )
    rng = np.random.default_rng(1)
    w = (gp._weights * gp.density).ravel()
    nodes = gp.spec.nodes()[:, 0]
    draws = rng.choice(nodes, size=200_000, p=w / w.sum())
    z = (draws - theta_star[0]) ** 2
    se = z.std(ddof=1) / np.sqrt(z.size)
    assert abs(z.mean() - cost) <= 3 * se + 1e-4


def test_empirical_decomposition_identity():
    rng = np.random.default_rng(2)
    thetas = rng.standard_normal((500, 2))
    theta_star = np.array([0.3, -0.4])
    mse, bias_sq, var = empirical_cost_decomposition(thetas, theta_star)
    assert mse == pytest.approx(bias_sq + var, abs=1e-10)


def test_grid_refinement_converged():
    def mom(nodes):
        axis = np.linspace(-1.5, 1.5, nodes)
        gp = GridPosterior(GridSpec([axis]), -0.5 * (axis - 0.2) ** 2 / 0.04)
        m, c = moments(gp)
        return m[0], c[0, 0]

    m1, v1 = mom(401)
    m2, v2 = mom(801)
    assert abs(m2 - m1) <= 1e-3 * max(abs(m1), 1e-12)
    assert abs(v2 - v1) <= 1e-3 * v1


def test_boundary_mass_warning_and_auto_widen(mri_model):
    theta_star = np.array([float(np.exp(-0.2 / 0.68))])
    u = (np.pi / 9) * np.random.default_rng(3).standard_normal(29)
    y = mri_model.deterministic_output(theta_star, u)
    with pytest.warns(UserWarning, match="boundary"):
        gp = grid_posterior(mri_model, u, y, default_grid(theta_star, 1))
    assert gp.boundary_mass_ratio() >= 1e-6
    gp_wide = auto_grid_posterior(mri_model, u, y, center=theta_star)
    assert gp_wide.boundary_mass_ratio() < 1e-6


def test_pf_seed_average_consistent_with_bigger_filter(nonlinear_model):
    rng = np.random.default_rng(4)
    u = 0.1 * rng.standard_normal(30)
    y = nonlinear_model.deterministic_output([-0.5], u)
    nodes = np.linspace(-1.0, 0.0, 10)[:, None]

    def averaged(n_particles, seed):
        lls = nonlinear_model.pf_loglik_nodes(nodes, u, y, n_particles, 20, seed)
        val = logsumexp(lls, axis=1) - np.log(20)
        z = np.exp(lls - val[:, None])
        se = z.std(axis=1, ddof=1) / np.sqrt(20)  # delta method on the log
        return val, se

    val_small, se_small = averaged(1000, seed=5)
    val_big, se_big = averaged(10_000, seed=6)
    gap = np.abs(val_small - val_big)
    assert np.all(gap <= 3 * np.sqrt(se_small**2 + se_big**2) + 1e-3)


def test_pf_kernel_matches_generic_path(nonlinear_model):
    rng = np.random.default_rng(5)
    u = 0.1 * rng.standard_normal(30)
    y = nonlinear_model.deterministic_output([-0.5], u)
    nodes = np.array([[-0.9], [-0.5], [0.1]])
    fast = nonlinear_model.pf_loglik_nodes(nodes, u, y, 400, 3, seed=11)
    ref = np.stack(
        [
            pf_marginal_loglik(nonlinear_model, nodes[i], u, y, n_particles=400, n_seeds=3, seed=11)
            for i in range(3)
        ]
    )
    np.testing.assert_allclose(fast, ref, rtol=1e-9, atol=1e-9)


def test_pf_degeneracy_raises(nonlinear_model):
    u = np.zeros(30)
    y = np.full(30, 5.0)  # far outside the particle cloud: weights collapse
    with pytest.raises(NumericDomainError):
        pf_marginal_loglik(nonlinear_model, [-0.5], u, y, n_particles=200, n_seeds=2, seed=0)


def test_grid_dimension_must_match_model(nonlinear_model):
    with pytest.raises(ValueError):
        grid_posterior(
            nonlinear_model, np.zeros(30), np.zeros(30), GridSpec.centered([0.0, 0.0], 1.0, 5)
        )


def test_bridge_rollout_mean_matches_grid_cost(linear_model, linear_dataset):
    # fresh joint-canonical draws, rolled forward, land on the posterior:
    # the terminal weighted error estimates the grid-oracle cost for any
    # number of steps
    u, _ = linear_dataset
    theta_star = np.array([-0.2, 0.7])
    y = linear_model.deterministic_output(theta_star, u)
    gp = grid_posterior(linear_model, u, y, default_grid(theta_star, 2))
    j_grid = cost_from_grid(gp, theta_star)

    ctx = HamiltonianContext(linear_model, u, y, mass=800.0)
    chain = run_chain(
        ctx,
        HmcParams(
            mass=800.0, epsilon=0.2, steps=8, iterations=900, warmup=300, thin=6,
            initial_q=theta_star.copy(), seed=12,
        ),
    )
    Q0 = np.stack([p.q for p in chain.samples])
    R0 = np.stack([p.rho for p in chain.samples])
    for steps in (1, 10):
        QL, _ = leapfrog_terminal_rows(
            linear_model, Q0, R0, u[None], y[None], 0.2, steps, 800.0
        )
        z = ((QL - theta_star) ** 2).sum(axis=1)
        se = z.std(ddof=1) / np.sqrt(z.size)
        assert abs(z.mean() - j_grid) <= 3 * se
