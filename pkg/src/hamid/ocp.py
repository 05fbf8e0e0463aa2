"""Discrete-time control problem over the sampler trajectories.

The decision variable is the input sequence u.  Its cost is the weighted
mean squared distance between the terminal positions of a batch of leapfrog
trajectories and the target q* = [theta*; 0]: the trajectories start at
phase points drawn from the canonical distribution of a nominal dataset and
evolve under the potential built from (u, ytilde(u)), where ytilde is the
model's deterministic output at theta*.  The weight selects the parameter
coordinates, so latent-state coordinates do not enter the objective.

The solver is projected gradient descent with Armijo backtracking; gradients
w.r.t. u come from central finite differences (each probe re-derives
ytilde(u +- delta), so the dependence of the data on the input is included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import LeapfrogParams, PhasePoint, leapfrog_terminal_rows


# ----------------------------------------------------------------------
# feasible input sets
# ----------------------------------------------------------------------
class Box:
    """Per-coordinate amplitude bounds lower <= u_t <= upper."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box bounds require lower <= upper")

    def project(self, u):
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def violation(self, u):
        u = np.asarray(u, dtype=float)
        over = np.maximum(u - self.upper, 0.0)
        under = np.maximum(self.lower - u, 0.0)
        return float(max(over.max(initial=0.0), under.max(initial=0.0)))

    def describe(self):
        return {"box": {"lower": self.lower.tolist(), "upper": self.upper.tolist()}}


class PowerBall:
    """Total power constraint sum_t u_t' u_t <= bound."""

    def __init__(self, bound):
        if bound <= 0:
            raise ValueError("power bound must be > 0")
        self.bound = float(bound)

    def project(self, u):
        u = np.asarray(u, dtype=float)
        ss = float(u @ u)
        if ss <= self.bound:
            return u
        return u * np.sqrt(self.bound / ss)

    def violation(self, u):
        u = np.asarray(u, dtype=float)
        return float(max(float(u @ u) - self.bound, 0.0))

    def describe(self):
        return {"power": {"bound": self.bound}}


class Intersection:
    """Box intersected with a power ball; projection by Dykstra's iteration."""

    def __init__(self, box: Box, ball: PowerBall, max_sweeps=100, tol=1e-10):
        self.box = box
        self.ball = ball
        self.max_sweeps = max_sweeps
        self.tol = tol

    def project(self, u):
        x = np.asarray(u, dtype=float).copy()
        p = np.zeros_like(x)
        q = np.zeros_like(x)
        for _ in range(self.max_sweeps):
            y = self.box.project(x + p)
            p = x + p - y
            x_new = self.ball.project(y + q)
            q = y + q - x_new
            if np.max(np.abs(x_new - x)) <= self.tol:
                x = x_new
                break
            x = x_new
        return x

    def violation(self, u):
        return max(self.box.violation(u), self.ball.violation(u))

    def describe(self):
        return {**self.box.describe(), **self.ball.describe()}


def project(constraints, u):
    """Euclidean projection of u onto the feasible set."""
    return constraints.project(u)


# ----------------------------------------------------------------------
# problem specification and cost
# ----------------------------------------------------------------------
@dataclass
class OcpSpec:
    """Batch control problem: initial phase points, target and weights."""

    model: object
    theta_star: np.ndarray
    initial_points: list
    leapfrog: LeapfrogParams
    mass: float
    constraints: object
    q_star: np.ndarray = None
    weight: np.ndarray = None

    def __post_init__(self):
        d = self.model.dims
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        if self.theta_star.shape != (d.n_theta,):
            raise ValueError(f"theta_star must have length {d.n_theta}")
        if self.q_star is None:
            self.q_star = np.concatenate([self.theta_star, np.zeros(d.x_len)])
        self.q_star = np.asarray(self.q_star, dtype=float)
        if self.weight is None:
            self.weight = np.concatenate([np.ones(d.n_theta), np.zeros(d.x_len)])
        self.weight = np.asarray(self.weight, dtype=float)
        dim = d.position_dim
        if self.q_star.shape != (dim,) or self.weight.shape != (dim,):
            raise ValueError(f"q_star and weight must have dimension {dim}")
        if int(self.weight[: d.n_theta].sum()) != d.n_theta or self.weight[d.n_theta :].any():
            raise ValueError("weight must be 1 on the theta block and 0 elsewhere")
        if not self.initial_points:
            raise ValueError("need at least one initial phase point")
        for p in self.initial_points:
            if p.q.shape != (dim,):
                raise ValueError(f"phase points must have dimension {dim}")
        if self.mass <= 0:
            raise ValueError("mass must be > 0")
        self._Q0 = np.stack([p.q for p in self.initial_points])
        self._R0 = np.stack([p.rho for p in self.initial_points])


@dataclass
class PgdSettings:
    """Solver controls; ``step_init`` is relative to the input scale (the
    first trial step moves the largest coordinate by about that fraction of
    1 + max|u|, with Armijo backtracking from there)."""

    max_iters: int = 100
    step_init: float = 0.5
    backtrack: float = 0.5
    armijo: float = 1e-4
    gradient_mode: str = "finite_difference"
    fd_step: float = 1e-5
    cost_tol: float = 1e-10
    max_backtracks: int = 40

    def __post_init__(self):
        if min(self.max_iters, self.step_init, self.fd_step) <= 0:
            raise ValueError("max_iters, step_init and fd_step must be > 0")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValueError("backtrack and armijo must lie in (0, 1)")
        if self.gradient_mode != "finite_difference":
            raise ValueError(
                "only the finite_difference gradient mode is implemented"
            )


def cost_batch(spec: OcpSpec, us):
    """Cost of each input row: mean weighted terminal squared error."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    b = us.shape[0]
    m = spec._Q0.shape[0]
    ytil = spec.model.deterministic_output_batch(spec.theta_star, us)
    # rows: all m phase points for u_1, then for u_2, ...
    Q0 = np.tile(spec._Q0, (b, 1))
    R0 = np.tile(spec._R0, (b, 1))
    u_rows = np.repeat(us, m, axis=0)
    y_rows = np.repeat(ytil, m, axis=0)
    QL, _ = leapfrog_terminal_rows(
        spec.model, Q0, R0, u_rows, y_rows,
        spec.leapfrog.epsilon, spec.leapfrog.steps, spec.mass,
    )
    # trajectories that blew up make the candidate input infinitely bad;
    # the line search then simply refuses the step
    with np.errstate(invalid="ignore", over="ignore"):
        err = (QL - spec.q_star) ** 2 @ spec.weight
        costs = err.reshape(b, m).mean(axis=1)
    return np.where(np.isfinite(costs), costs, np.inf)


def ocp_cost(spec: OcpSpec, u):
    """Cost of one input sequence."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.model.dims.u_len,):
        raise ValueError(f"u must have length {spec.model.dims.u_len}")
    return float(cost_batch(spec, u[None])[0])


def ocp_gradient(spec: OcpSpec, u, settings: PgdSettings | None = None):
    """Central finite-difference gradient of :func:`ocp_cost` w.r.t. u."""
    settings = settings or PgdSettings()
    u = np.asarray(u, dtype=float)
    n = u.size
    if spec.leapfrog.steps == 0:
        return np.zeros(n)
    h = settings.fd_step * (1.0 + np.abs(u))
    probes = np.concatenate([np.tile(u, (n, 1)) + np.diag(h),
                             np.tile(u, (n, 1)) - np.diag(h)])
    costs = cost_batch(spec, probes)
    with np.errstate(invalid="ignore"):
        grad = (costs[:n] - costs[n:]) / (2.0 * h)
    # a divergent probe leaves no usable slope in that coordinate
    return np.where(np.isfinite(grad), grad, 0.0)


def minimize_projected(cost_fn, grad_fn, constraints, u_init,
                       settings: PgdSettings | None = None):
    """Projected gradient descent with Armijo backtracking on the projected step.

    Returns (best point found, per-iteration cost trace); the trace is
    non-increasing because non-improving steps are never accepted.
    Terminates on the iteration cap, step-size underflow (backtracking
    exhausted) or a relative cost change below ``cost_tol``.
    """
    settings = settings or PgdSettings()
    u = project(constraints, np.asarray(u_init, dtype=float))
    cost = cost_fn(u)
    trace = [cost]
    for _ in range(settings.max_iters):
        grad = grad_fn(u)
        g_max = float(np.abs(grad).max())
        if g_max == 0.0 or not np.isfinite(g_max):
            trace.append(cost)
            break
        # normalize so the first candidate moves the largest coordinate by
        # about step_init * input scale, whatever the cost's units are
        alpha = settings.step_init * (1.0 + float(np.abs(u).max())) / g_max
        accepted = False
        for _ in range(settings.max_backtracks):
            candidate = project(constraints, u - alpha * grad)
            step = candidate - u
            if not step.any():
                break
            cand_cost = cost_fn(candidate)
            sufficient = cost + settings.armijo * float(grad @ step)
            if cand_cost <= min(sufficient, cost):
                u, cost = candidate, cand_cost
                accepted = True
                break
            alpha *= settings.backtrack
        trace.append(cost)
        if not accepted:
            break
        if abs(trace[-2] - trace[-1]) <= settings.cost_tol * (1.0 + abs(trace[-1])):
            break
    return u, np.asarray(trace)


def pgd_solve(spec: OcpSpec, u_init, settings: PgdSettings | None = None):
    """Locally optimize the trajectory cost over feasible inputs."""
    settings = settings or PgdSettings()
    return minimize_projected(
        lambda u: ocp_cost(spec, u),
        lambda u: ocp_gradient(spec, u, settings),
        spec.constraints,
        u_init,
        settings,
    )
