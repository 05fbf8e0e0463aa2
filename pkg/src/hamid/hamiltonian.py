"""Phase-space energies and the leapfrog integrator.

Given a model and a dataset (u, y), the sampler's potential is the negative
unnormalized log posterior of the position q = [theta; x],

    U(q) = -(log p(y, x | u, theta) + log p(theta)),

the kinetic energy is 0.5 * rho.rho / m for a scalar mass m, and the
canonical momentum distribution is N(0, m I).  One leapfrog step is the
usual half-kick / drift / half-kick sequence with drift velocity rho / m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PhasePoint:
    """Position/momentum pair of the sampler's phase space."""

    q: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.q.shape != self.rho.shape:
            raise ValueError("q and rho must have equal dimension")

    def copy(self):
        return PhasePoint(self.q.copy(), self.rho.copy())


@dataclass
class LeapfrogParams:
    epsilon: float
    steps: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


class HamiltonianContext:
    """Energies of the phase space tied to a model and a fixed dataset (u, y)."""

    def __init__(self, model, u, y, mass=1.0):
        if mass <= 0:
            raise ValueError("mass must be > 0")
        self.model = model
        self.u = np.asarray(u, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.mass = float(mass)
        self.dim = model.dims.position_dim

    def split(self, q):
        n_theta = self.model.dims.n_theta
        return q[:n_theta], q[n_theta:]

    def potential(self, q):
        theta, x = self.split(np.asarray(q, dtype=float))
        return -(self.model.log_joint(theta, x, self.u, self.y) + self.model.log_prior(theta))

    def grad_potential(self, q):
        theta, x = self.split(np.asarray(q, dtype=float))
        g_theta, g_x = self.model.grad_log_joint(theta, x, self.u, self.y)
        return -np.concatenate([g_theta + self.model.grad_log_prior(theta), g_x])

    def potential_batch(self, qs):
        return potential_rows(self.model, qs, self.u[None], self.y[None], self.mass)

    def grad_potential_batch(self, qs):
        return grad_potential_rows(self.model, qs, self.u[None], self.y[None])

    def kinetic(self, rho):
        rho = np.asarray(rho, dtype=float)
        return 0.5 * float(rho @ rho) / self.mass

    def energy(self, point: PhasePoint):
        return self.potential(point.q) + self.kinetic(point.rho)


def potential_rows(model, qs, us, ys, mass=None):
    """Potential at a batch of positions, with per-row (u, y) data allowed."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    n_theta = model.dims.n_theta
    thetas, xs = qs[:, :n_theta], qs[:, n_theta:]
    prior = -0.5 * np.einsum("bi,bi->b", thetas, thetas) / model.prior_sigma**2
    return -(model.log_joint_batch(thetas, xs, us, ys) + prior)


def grad_potential_rows(model, qs, us, ys):
    """Potential gradient at a batch of positions, per-row (u, y) data allowed."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    n_theta = model.dims.n_theta
    thetas, xs = qs[:, :n_theta], qs[:, n_theta:]
    g_theta, g_x = model.grad_log_joint_batch(thetas, xs, us, ys)
    g_theta = g_theta - thetas / model.prior_sigma**2
    return -np.concatenate([g_theta, g_x], axis=1)


def leapfrog_step(ctx, point: PhasePoint, epsilon) -> PhasePoint:
    """One leapfrog step: half momentum kick, position drift, half kick."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    rho = point.rho - 0.5 * epsilon * ctx.grad_potential(point.q)
    q = point.q + (epsilon / ctx.mass) * rho
    rho = rho - 0.5 * epsilon * ctx.grad_potential(q)
    return PhasePoint(q, rho)


def leapfrog_rollout(ctx, point: PhasePoint, params: LeapfrogParams):
    """Trajectory of ``params.steps`` leapfrog steps, including the start point.

    Identical to composing :func:`leapfrog_step`; the gradient shared by the
    closing and opening half-kicks of consecutive steps is evaluated once.
    """
    trajectory = [point.copy()]
    eps = params.epsilon
    q, rho = point.q, point.rho
    grad = None
    for _ in range(params.steps):
        if grad is None:
            grad = ctx.grad_potential(q)
        rho = rho - 0.5 * eps * grad
        q = q + (eps / ctx.mass) * rho
        grad = ctx.grad_potential(q)
        rho = rho - 0.5 * eps * grad
        trajectory.append(PhasePoint(q, rho))
    return trajectory


def leapfrog_terminal_rows(model, Q, R, us, ys, epsilon, steps, mass):
    """Terminal (Q, R) after ``steps`` leapfrog steps, batched over rows.

    Each row carries its own position, momentum and dataset; identical in
    exact arithmetic to mapping :func:`leapfrog_step` over rows (consecutive
    half-kicks share one gradient evaluation).
    """
    Q = np.array(Q, dtype=float, copy=True)
    R = np.array(R, dtype=float, copy=True)
    grad = None
    with np.errstate(invalid="ignore", over="ignore"):
        for _ in range(steps):
            if grad is None:
                grad = grad_potential_rows(model, Q, us, ys)
            R -= 0.5 * epsilon * grad
            Q += (epsilon / mass) * R
            grad = grad_potential_rows(model, Q, us, ys)
            R -= 0.5 * epsilon * grad
    return Q, R
