import numpy as np
import pytest
from scipy import stats

from hamid import HamiltonianContext, HmcParams, PhasePoint, run_chain
from hamid.hmc import draw_momentum, effective_sample_size, hmc_transition
from hamid.oracle import default_grid, grid_posterior, moments

from helpers import GaussianTargetModel

EMPTY = np.zeros(0)


def gaussian_ctx(mu, cov, mass=1.0):
    return HamiltonianContext(GaussianTargetModel(mu, cov), EMPTY, EMPTY, mass=mass)


def theta_matrix(chain):
    return np.stack([p.q for p in chain.samples])


def test_draw_momentum_moments():
    rng = np.random.default_rng(0)
    draws = np.stack([draw_momentum(3, 1.0, rng) for _ in range(100_000)])
    se = 1.0 / np.sqrt(draws.shape[0])  # var of N(0,1) sample variance ~ 2/n
    assert np.all(np.abs(draws.var(axis=0, ddof=1) - 1.0) <= 3 * np.sqrt(2) * se)
    draws4 = np.stack([draw_momentum(2, 4.0, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws4.std(axis=0, ddof=1) - 2.0) <= 0.02)


def test_draw_momentum_reproducible():
    a = draw_momentum(5, 1.0, np.random.default_rng(9))
    b = draw_momentum(5, 1.0, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_transition_accepts_in_exact_conservation_limit():
    ctx = gaussian_ctx(np.zeros(2), np.eye(2))
    rng = np.random.default_rng(1)
    params = HmcParams(epsilon=1e-8, steps=1, iterations=1, warmup=0, thin=1)
    accepted = 0
    point = PhasePoint(np.array([0.3, -0.5]), np.zeros(2))
    for _ in range(200):
        point, acc = hmc_transition(ctx, point, params, rng)
        accepted += acc
    assert accepted == 200


def test_transition_rejects_nonfinite_proposal():
    class Cliff(GaussianTargetModel):
        def grad_log_joint(self, theta, x, u, y):
            return np.full(theta.size, 1e308), np.zeros(0)

    ctx = HamiltonianContext(Cliff(np.zeros(1), np.eye(1)), EMPTY, EMPTY)
    rng = np.random.default_rng(2)
    point = PhasePoint(np.array([0.0]), np.zeros(1))
    nxt, accepted = hmc_transition(ctx, point, HmcParams(epsilon=1.0, steps=2), rng)
    assert not accepted
    assert nxt.q[0] == 0.0


def test_gaussian_acceptance_rate_high():
    ctx = gaussian_ctx(np.zeros(2), np.eye(2))
    chain = run_chain(
        ctx,
        HmcParams(epsilon=0.1, steps=20, iterations=10_000, warmup=0, thin=1, seed=3),
    )
    assert chain.acceptance_rate > 0.9


def test_chain_recovers_gaussian_moments():
    mu = np.array([1.0, -1.0])
    cov = np.diag([1.0, 0.25])
    ctx = gaussian_ctx(mu, cov)
    chain = run_chain(
        ctx,
        HmcParams(
            epsilon=0.25, steps=8, iterations=6000, warmup=500, thin=1,
            initial_q=mu.copy(), seed=4,
        ),
    )
    th = theta_matrix(chain)
    for j in range(2):
        ess = effective_sample_size(th[:, j])
        assert ess > 500
        se_mean = np.sqrt(cov[j, j]) / np.sqrt(ess)
        assert abs(th[:, j].mean() - mu[j]) <= 3 * se_mean
        se_var = cov[j, j] * np.sqrt(2.0 / ess)
        assert abs(th[:, j].var(ddof=1) - cov[j, j]) <= 3 * se_var


def test_warmup_equal_to_total_yields_zero_samples():
    ctx = gaussian_ctx(np.zeros(1), np.eye(1))
    chain = run_chain(ctx, HmcParams(iterations=50, warmup=50, thin=1, seed=5))
    assert chain.samples == []
    assert 0.0 <= chain.acceptance_rate <= 1.0


def test_stored_samples_pair_position_with_fresh_momentum():
    ctx = gaussian_ctx(np.zeros(1), np.eye(1))
    chain = run_chain(
        ctx, HmcParams(epsilon=0.2, steps=5, iterations=4000, warmup=200, thin=1, seed=6)
    )
    rho = np.stack([p.rho for p in chain.samples])[:, 0]
    q = theta_matrix(chain)[:, 0]
    # momenta are canonical N(0, m) and uncorrelated with the positions
    assert abs(rho.mean()) <= 3 / np.sqrt(len(rho))
    assert abs(rho.std(ddof=1) - 1.0) <= 0.05
    assert abs(np.corrcoef(q, rho)[0, 1]) <= 0.06


def test_one_dimensional_ks_below_critical_value():
    ctx = gaussian_ctx(np.zeros(1), np.eye(1))
    # quarter-period trajectories (eps * steps ~ pi/2) decorrelate transitions
    chain = run_chain(
        ctx,
        HmcParams(epsilon=0.157, steps=10, iterations=6_500, warmup=500, thin=1, seed=7),
    )
    q = theta_matrix(chain)[:, 0]
    ess = effective_sample_size(q)
    assert ess >= 5000
    stat = stats.kstest(q, "norm").statistic
    critical = 1.628 / np.sqrt(min(ess, q.size))  # 1% point of the KS law
    assert stat < critical


def test_acceptance_rate_monotone_in_step_size():
    epsilons = [0.01, 0.05, 0.1, 0.2, 0.4]
    rates = []
    for eps in epsilons:
        r = []
        for seed in range(3):
            ctx = gaussian_ctx(np.zeros(2), 0.09 * np.eye(2))
            chain = run_chain(
                ctx,
                HmcParams(
                    epsilon=eps, steps=10, iterations=800, warmup=100, thin=1, seed=seed,
                ),
            )
            r.append(chain.acceptance_rate)
        rates.append(np.mean(r))
    inversions = [
        i for i in range(len(rates) - 1) if rates[i + 1] > rates[i] + 0.02
    ]
    assert not inversions, f"acceptance rates not non-increasing: {rates}"


def test_chain_is_deterministic_given_seed():
    ctx = gaussian_ctx(np.zeros(2), np.eye(2))
    params = HmcParams(epsilon=0.2, steps=5, iterations=300, warmup=100, thin=2, seed=8)
    a = run_chain(ctx, params)
    b = run_chain(ctx, params)
    assert a.acceptance_rate == b.acceptance_rate
    assert np.array_equal(a.energies, b.energies)
    for p, q in zip(a.samples, b.samples):
        assert np.array_equal(p.q, q.q) and np.array_equal(p.rho, q.rho)


def test_linear_posterior_moments_match_grid_oracle(linear_model, linear_dataset):
    u, _ = linear_dataset
    theta_star = np.array([-0.2, 0.7])
    y = linear_model.deterministic_output(theta_star, u)
    gp = grid_posterior(linear_model, u, y, default_grid(theta_star, 2))
    mean_grid, cov_grid = moments(gp)

    ctx = HamiltonianContext(linear_model, u, y, mass=800.0)
    chain = run_chain(
        ctx,
        HmcParams(
            mass=800.0, epsilon=0.2, steps=8, iterations=6000, warmup=500, thin=1,
            initial_q=theta_star.copy(), seed=9,
        ),
    )
    th = theta_matrix(chain)
    assert chain.acceptance_rate > 0.8
    np.testing.assert_allclose(th.mean(axis=0), mean_grid, rtol=0.05)
    np.testing.assert_allclose(
        np.diag(np.cov(th.T, ddof=0)), np.diag(cov_grid), rtol=0.05
    )
