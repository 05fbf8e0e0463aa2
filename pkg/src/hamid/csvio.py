"""CSV artifact readers/writers.

Floats are written with Python's shortest round-trip representation, so
re-reading an emitted file reproduces the exact 64-bit values and identical
runs produce byte-identical artifacts.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError


def _fmt(value):
    return repr(float(value))


def write_signal_csv(path, values, n_channels=1, prefix="u"):
    """Write a flattened time-major signal as rows (t, <prefix>_1..)."""
    values = np.asarray(values, dtype=float).reshape(-1, n_channels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"{prefix}_{i + 1}" for i in range(n_channels)])
        for t, row in enumerate(values, start=1):
            writer.writerow([t] + [_fmt(v) for v in row])


def read_signal_csv(path):
    """Read a signal CSV back into a flattened float vector."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ConfigError(f"{path}: expected a signal CSV with a 't' header column")
    try:
        data = [[float(v) for v in row[1:]] for row in rows[1:] if row]
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed signal CSV: {exc}") from exc
    if not data or any(len(r) != len(data[0]) for r in data) or not data[0]:
        raise ConfigError(f"{path}: malformed signal CSV (ragged or empty rows)")
    return np.asarray(data).ravel()


def write_samples_csv(path, samples):
    """Phase-space samples, one row per sample: q_1..q_d, rho_1..rho_d."""
    dim = samples[0].q.size if samples else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"q_{i + 1}" for i in range(dim)] + [f"rho_{i + 1}" for i in range(dim)]
        )
        for p in samples:
            writer.writerow([_fmt(v) for v in np.concatenate([p.q, p.rho])])


def write_trajectory_csv(path, trajectory):
    """One leapfrog trajectory: step, q_1..q_d, rho_1..rho_d."""
    dim = trajectory[0].q.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step"]
            + [f"q_{i + 1}" for i in range(dim)]
            + [f"rho_{i + 1}" for i in range(dim)]
        )
        for step, p in enumerate(trajectory):
            writer.writerow([step] + [_fmt(v) for v in np.concatenate([p.q, p.rho])])


def write_grid_csv(path, gp):
    """Grid posterior nodes and normalized density."""
    nodes = gp.spec.nodes()
    density = gp.density.ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"theta_{i + 1}" for i in range(nodes.shape[1])] + ["density"])
        for node, d in zip(nodes, density):
            writer.writerow([_fmt(v) for v in node] + [_fmt(d)])


def write_cost_trace_csv(path, traces):
    """Concatenated PGD cost traces: outer_iter, pgd_iter, cost."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer_iter", "pgd_iter", "cost"])
        for outer, trace in enumerate(traces, start=1):
            for i, c in enumerate(trace):
                writer.writerow([outer, i, _fmt(c)])


def write_iterates_csv(path, iterates, n_channels=1):
    """Input iterate per outer iteration: outer_iter, t, u_1.."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["outer_iter", "t"] + [f"u_{i + 1}" for i in range(n_channels)]
        )
        for outer, u in enumerate(iterates, start=1):
            rows = np.asarray(u, dtype=float).reshape(-1, n_channels)
            for t, row in enumerate(rows, start=1):
                writer.writerow([outer, t] + [_fmt(v) for v in row])
