"""Command-line entry point.

Subcommands (all driven by one JSON config per run):

    design        run the input-design loop, emit the optimized input
    sample        run the phase-space chain for a fixed input
    evaluate      grid-oracle posterior summaries for one or more inputs
    trajectories  per-sample leapfrog position trajectories for plotting

Exit codes: 0 success, 2 configuration/validation error, 3 numeric abort.
On failure a machine-readable {"error": ...} object is printed to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, csvio
from .designer import DesignConfig, design_input, evaluate_design
from .errors import ConfigError, DesignAbortError, NumericDomainError
from .hamiltonian import HamiltonianContext, LeapfrogParams, leapfrog_rollout
from .hmc import HmcParams, run_chain
from .models import model_from_dict
from .ocp import Box, Intersection, PowerBall


def _require(section: dict, key: str, where: str):
    if key not in section:
        field = f"{where}.{key}" if where else key
        raise ConfigError(f"missing required field '{field}'", field=field)
    return section[key]


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _constraints_from_dict(section, u_len):
    if not isinstance(section, dict) or not section:
        raise ConfigError(
            "constraints must define 'box' and/or 'power'", field="constraints"
        )
    box = ball = None
    if "box" in section:
        spec = section["box"]
        box = Box(
            np.broadcast_to(np.asarray(_require(spec, "lower", "constraints.box"), dtype=float), u_len),
            np.broadcast_to(np.asarray(_require(spec, "upper", "constraints.box"), dtype=float), u_len),
        )
    if "power" in section:
        ball = PowerBall(float(_require(section["power"], "bound", "constraints.power")))
    if box is not None and ball is not None:
        return Intersection(box, ball)
    if box is not None:
        return box
    if ball is not None:
        return ball
    raise ConfigError("constraints must define 'box' and/or 'power'", field="constraints")


def _hmc_params(section):
    known = {"mass", "epsilon", "steps", "iterations", "warmup", "thin", "seed"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown hmc fields: {sorted(unknown)}", field="hmc")
    try:
        return HmcParams(**section)
    except ValueError as exc:
        raise ConfigError(f"invalid hmc section: {exc}", field="hmc") from exc


def _pgd_settings(section):
    from .ocp import PgdSettings

    known = {
        "max_iters", "step_init", "backtrack", "armijo",
        "gradient_mode", "fd_step", "cost_tol", "max_backtracks",
    }
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown pgd fields: {sorted(unknown)}", field="pgd")
    try:
        return PgdSettings(**section)
    except ValueError as exc:
        raise ConfigError(f"invalid pgd section: {exc}", field="pgd") from exc


def _resolve_u(value, model, seed, out_of="u_nominal"):
    """An input is an inline list, a CSV path, or {'random_normal': {'std': s}}."""
    u_len = model.dims.u_len
    if isinstance(value, str):
        u = csvio.read_signal_csv(value)
    elif isinstance(value, dict):
        spec = value.get("random_normal")
        if spec is None:
            raise ConfigError(
                f"{out_of} object form must be {{'random_normal': {{'std': ...}}}}",
                field=out_of,
            )
        std = float(_require(spec, "std", f"{out_of}.random_normal"))
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        u = std * rng.standard_normal(u_len)
    else:
        u = np.asarray(value, dtype=float)
    if u.shape != (u_len,):
        raise ConfigError(
            f"{out_of} must have length {u_len}, got {u.size}", field=out_of
        )
    return u


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, config_path, seed, files):
    entries = [
        {"name": name, "bytes": os.path.getsize(out_dir / name), "sha256": _sha256(out_dir / name)}
        for name in sorted(files)
    ]
    _write_json(
        out_dir / "manifest.json",
        {
            "tool": "hamid",
            "version": __version__,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "config_sha256": _sha256(config_path),
            "seed": seed,
            "files": entries,
        },
    )


def _prepare(args):
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model_from_dict(_require(cfg, "model", ""))
    return cfg, model, seed, out_dir


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_design(args):
    cfg, model, seed, out_dir = _prepare(args)
    design = _require(cfg, "design", "")
    for key in ("theta_star", "u_nominal", "delta_u"):
        _require(design, key, "design")
    constraints = _constraints_from_dict(_require(cfg, "constraints", ""), model.dims.u_len)
    u_nominal = _resolve_u(design["u_nominal"], model, seed, "design.u_nominal")
    try:
        config = DesignConfig(
            model=model,
            theta_star=np.asarray(design["theta_star"], dtype=float),
            constraints=constraints,
            u_nominal=u_nominal,
            delta_u=float(design["delta_u"]),
            M=int(design.get("M", 40)),
            max_outer=int(design.get("max_outer", 10)),
            hmc=_hmc_params(cfg.get("hmc", {})),
            pgd=_pgd_settings(cfg.get("pgd", {})),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), field="design") from exc
    report = design_input(config)

    n_u = model.dims.n_u
    csvio.write_signal_csv(out_dir / "u_nominal.csv", report.u_nominal, n_u)
    csvio.write_signal_csv(out_dir / "u_optimized.csv", report.u_final, n_u)
    csvio.write_cost_trace_csv(
        out_dir / "cost_trace.csv", [rec.cost_trace for rec in report.iterations]
    )
    csvio.write_iterates_csv(
        out_dir / "u_iterates.csv", [rec.u for rec in report.iterations], n_u
    )
    _write_json(
        out_dir / "report.json",
        {
            "converged": report.converged,
            "n_outer_iterations": len(report.iterations),
            "u_final": report.u_final,
            "iterations": [
                {
                    "cost_initial": rec.cost_initial,
                    "cost_final": rec.cost_final,
                    "hmc_acceptance": rec.hmc_acceptance,
                    "delta_u": rec.delta_u,
                    "wall_time_s": rec.wall_time,
                }
                for rec in report.iterations
            ],
            "config": report.config,
        },
    )
    _write_manifest(
        out_dir, args.config, seed,
        ["u_nominal.csv", "u_optimized.csv", "cost_trace.csv", "u_iterates.csv", "report.json"],
    )
    return 0


def cmd_sample(args):
    cfg, model, seed, out_dir = _prepare(args)
    section = _require(cfg, "sample", "")
    theta = np.asarray(_require(section, "theta_star", "sample"), dtype=float)
    u = _resolve_u(_require(section, "u", "sample"), model, seed, "sample.u")
    if "y" in section:
        y = np.asarray(section["y"], dtype=float)
    else:
        y = model.deterministic_output(theta, u)
    hmc = _hmc_params({**cfg.get("hmc", {}), "seed": seed})
    ctx = HamiltonianContext(model, u, y, mass=hmc.mass)
    q_init = np.concatenate(
        [np.zeros(model.dims.n_theta),
         model.deterministic_states(np.zeros(model.dims.n_theta), u)]
    )
    from dataclasses import replace

    chain = run_chain(ctx, replace(hmc, initial_q=q_init))
    csvio.write_samples_csv(out_dir / "samples.csv", chain.samples)
    _write_json(
        out_dir / "diagnostics.json",
        {
            "acceptance_rate": chain.acceptance_rate,
            "n_samples": len(chain.samples),
            "n_iterations": chain.n_iterations,
            "params": {
                "mass": hmc.mass, "epsilon": hmc.epsilon, "steps": hmc.steps,
                "iterations": hmc.iterations, "warmup": hmc.warmup,
                "thin": hmc.thin, "seed": seed,
            },
        },
    )
    _write_manifest(out_dir, args.config, seed, ["samples.csv", "diagnostics.json"])
    return 0


def cmd_evaluate(args):
    cfg, model, seed, out_dir = _prepare(args)
    section = _require(cfg, "evaluate", "")
    theta_star = np.asarray(_require(section, "theta_star", "evaluate"), dtype=float)
    inputs = dict(section.get("inputs", {}))
    for pair in args.u or []:
        if "=" not in pair:
            raise ConfigError(f"--u expects NAME=PATH, got {pair!r}")
        name, path = pair.split("=", 1)
        inputs[name] = path
    if not inputs:
        raise ConfigError("no inputs to evaluate", field="evaluate.inputs")
    constraints = (
        _constraints_from_dict(cfg["constraints"], model.dims.u_len)
        if "constraints" in cfg
        else None
    )
    summary = {}
    files = []
    grid_kwargs = dict(section.get("grid", {}))
    grid_kwargs.setdefault("threads", args.threads)
    for name in sorted(inputs):
        u = _resolve_u(inputs[name], model, seed, f"evaluate.inputs.{name}")
        if constraints is not None and constraints.violation(u) > 0:
            warnings.warn(f"input '{name}' infeasible; projecting onto the feasible set")
            u = constraints.project(u)
        result = evaluate_design(model, theta_star, u, grid_kwargs=grid_kwargs, seed=seed)
        summary[name] = {
            "mean": result.mean,
            "covariance": result.covariance,
            "cost": result.cost,
            "method": result.method,
        }
        if result.grid is not None:
            grid_name = f"grid_posterior_{name}.csv"
            csvio.write_grid_csv(out_dir / grid_name, result.grid)
            files.append(grid_name)
    _write_json(out_dir / "summary.json", {"theta_star": theta_star, "inputs": summary})
    files.append("summary.json")
    _write_manifest(out_dir, args.config, seed, files)
    return 0


def cmd_trajectories(args):
    cfg, model, seed, out_dir = _prepare(args)
    section = _require(cfg, "trajectories", "")
    theta_star = np.asarray(_require(section, "theta_star", "trajectories"), dtype=float)
    u = _resolve_u(_require(section, "u", "trajectories"), model, seed, "trajectories.u")
    n_traj = int(section.get("n_trajectories", 15))
    hmc = _hmc_params({**cfg.get("hmc", {}), "seed": seed})
    y = model.deterministic_output(theta_star, u)
    ctx = HamiltonianContext(model, u, y, mass=hmc.mass)
    from dataclasses import replace

    q_init = np.concatenate(
        [np.zeros(model.dims.n_theta),
         model.deterministic_states(np.zeros(model.dims.n_theta), u)]
    )
    chain = run_chain(
        ctx,
        replace(hmc, iterations=hmc.warmup + hmc.thin * n_traj, initial_q=q_init),
    )
    q_star = np.concatenate([theta_star, np.zeros(model.dims.x_len)])
    weight = np.concatenate([np.ones(model.dims.n_theta), np.zeros(model.dims.x_len)])
    files = []
    total = 0.0
    rollout_steps = int(section.get("steps", hmc.steps))
    lf = LeapfrogParams(hmc.epsilon, rollout_steps)
    for i, point in enumerate(chain.samples):
        traj = leapfrog_rollout(ctx, point, lf)
        name = f"trajectory_{i:02d}.csv"
        csvio.write_trajectory_csv(out_dir / name, traj)
        files.append(name)
        total += float((traj[-1].q - q_star) ** 2 @ weight)
    _write_json(
        out_dir / "summary.json",
        {
            "n_trajectories": len(chain.samples),
            "steps": rollout_steps,
            "sum_sq_terminal_error": total,
            "hmc_acceptance": chain.acceptance_rate,
        },
    )
    files.append("summary.json")
    _write_manifest(out_dir, args.config, seed, files)
    return 0


# ----------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(
        prog="hamid",
        description="Input design for probabilistic dynamical systems by steering "
        "Hamiltonian sampler trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("design", cmd_design),
        ("sample", cmd_sample),
        ("evaluate", cmd_evaluate),
        ("trajectories", cmd_trajectories),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--threads",
            type=int,
            default=int(os.environ.get("HAMID_THREADS", "1")),
            help="worker threads for grid-node evaluation (env fallback HAMID_THREADS)",
        )
        if name == "evaluate":
            p.add_argument(
                "--u", action="append", metavar="NAME=PATH",
                help="additional input CSV to evaluate (repeatable)",
            )
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _print_error("validation", exc)
        return 2
    except (NumericDomainError, DesignAbortError) as exc:
        _print_error("numeric", exc)
        return 3


def _print_error(kind, exc):
    payload = {"error": {"type": kind, "message": str(exc)}}
    field = getattr(exc, "field", None)
    if field:
        payload["error"]["field"] = field
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
