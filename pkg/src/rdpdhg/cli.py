"""Command-line interface: ``rdpdhg {solve,flow,theory,sweep,compare}``.

Settings come from a flat ``key=value`` file (``--config``) and/or flags;
flags win.  Every run writes ``manifest.json`` and the effective ``config.txt``
into the output directory before any solver starts.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .equations import MODEL_KINDS, build_model, initial_condition
from .driver import SOLVERS, MarchPlan, adaptive_march, diagnostics, march, write_snapshots, write_window_csv
from .flow import FlowParams, fit_decay_rate, integrate_flow, write_trajectory_csv
from .implicit import make_problem
from .pdhg import PdhgParams, rate_series, solve_window, write_stats_csv
from .precond import build_precond
from .theory import discrete_hyperparams, sigma_kappa, special_params, theory_report

EXIT_OK = 0
EXIT_UNKNOWN_NAME = 3
EXIT_MALFORMED = 4
EXIT_UNWRITABLE = 5
EXIT_SOLVER_FAILED = 6

COMMANDS = ("solve", "flow", "theory", "sweep", "compare")


class ConfigError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _pos_float(s: str) -> float:
    v = _float(s)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _nonneg_float(s: str) -> float:
    v = _float(s)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _list(parse: Callable) -> Callable:
    def inner(s: str) -> list:
        items = [x for x in s.replace(",", " ").split() if x]
        if not items:
            raise ValueError("empty list")
        return [parse(x) for x in items]

    return inner


def _optional(parse: Callable) -> Callable:
    def inner(s: str):
        return None if s.strip().lower() in ("", "none") else parse(s)

    return inner


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class _Key:
    parse: Callable
    default: object
    help: str
    names: tuple = ()


KEYS: dict[str, _Key] = {
    "equation": _Key(str, "allen_cahn", f"model: {', '.join(MODEL_KINDS)}", MODEL_KINDS),
    "eps0": _Key(_optional(_pos_float), None, "interface parameter (model default when omitted)"),
    "mu": _Key(_nonneg_float, 5.0, "mobility amplitude for var_coeff"),
    "nx": _Key(_pos_int, 64, "grid points per side"),
    "ht": _Key(_pos_float, 0.001, "time step"),
    "nt": _Key(_pos_int, 1, "time steps per window"),
    "windows": _Key(_pos_int, 1, "number of windows"),
    "solver": _Key(str, "pdhg", f"solver: {', '.join(SOLVERS)}", SOLVERS),
    "tau_u": _Key(_pos_float, 0.5, "primal step"),
    "tau_p": _Key(_pos_float, 0.9, "dual step"),
    "omega": _Key(_nonneg_float, 1.0, "extrapolation"),
    "eps": _Key(_pos_float, 0.1, "dual regularization"),
    "tol": _Key(_pos_float, 1e-6, "residual tolerance"),
    "max_iter": _Key(_pos_int, 20000, "iteration cap per window"),
    "adaptive": _Key(_bool, False, "adaptive step control"),
    "ht_cap": _Key(_pos_float, 0.08, "largest adaptive step"),
    "fast_iters": _Key(_pos_int, 200, "grow the step below this iteration count"),
    "t_end": _Key(_optional(_pos_float), None, "final time for adaptive runs and the flow"),
    "out": _Key(str, "rdpdhg_out", "output directory"),
    "jobs": _Key(_pos_int, 1, "parallel sweep runs"),
    "snapshots": _Key(_optional(_list(_nonneg_float)), None, "snapshot times"),
    "pgm": _Key(_bool, False, "also write PGM previews"),
    "ht_list": _Key(_optional(_list(_pos_float)), None, "sweep axis"),
    "nt_list": _Key(_optional(_list(_pos_int)), None, "sweep axis"),
    "nx_list": _Key(_optional(_list(_pos_int)), None, "sweep axis"),
    "rate_prefix": _Key(_pos_int, 500, "iterations averaged for the mean rate"),
    "theta": _Key(_optional(_nonneg_float), None, "theta for the discrete hyperparameters"),
    "u": _Key(_pos_float, 0.5, "free parameter of the discrete hyperparameters"),
    "gamma": _Key(_optional(_pos_float), None, "flow gamma (theory choice when omitted)"),
    "flow_eps": _Key(_optional(_pos_float), None, "flow epsilon (theory choice when omitted)"),
    "dt": _Key(_pos_float, 0.05, "flow integrator step"),
    "lyap_mu": _Key(_pos_float, 1.0, "Lyapunov weight"),
    "ref_solver": _Key(str, "imex", "reference solver for compare", SOLVERS),
    "ref_ht": _Key(_optional(_pos_float), None, "reference step for compare"),
}


def _parse_value(key: str, raw: str):
    spec = KEYS.get(key)
    if spec is None:
        raise ConfigError(EXIT_UNKNOWN_NAME, f"unknown key {key!r}")
    try:
        val = spec.parse(raw)
    except ValueError as exc:
        raise ConfigError(EXIT_MALFORMED, f"malformed value for {key!r}: {raw!r} ({exc})") from None
    if spec.names and val not in spec.names:
        raise ConfigError(EXIT_UNKNOWN_NAME, f"unknown {key} {val!r}; expected one of {', '.join(spec.names)}")
    return val


def read_config_file(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(EXIT_MALFORMED, f"cannot read config file {path}: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(EXIT_MALFORMED, f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _parse_value(key, raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdpdhg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rdpdhg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="flat key=value settings file")
        for key, spec in KEYS.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V", help=spec.help)
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {k: spec.default for k, spec in KEYS.items()}
    if args.config:
        cfg.update(read_config_file(args.config))
    for key in KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            cfg[key] = _parse_value(key, raw)
    return cfg


def _prepare_out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(EXIT_UNWRITABLE, f"output directory for 'out' is not writable: {out} ({exc})") from None
    return out


def _versions() -> dict:
    import numba
    import scipy

    return {
        "rdpdhg": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        for key in KEYS:
            fh.write(f"{key}={_fmt(cfg[key])}\n")


def _write_manifest(out: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    data = {
        "command": command,
        "config": {k: _fmt(v) for k, v in cfg.items()},
        "versions": _versions(),
        "fft_threads": os.environ.get("RD_PDHG_THREADS"),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        data.update(extra)
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _model(cfg):
    return build_model(cfg["equation"], cfg["eps0"], cfg["mu"], cfg["nx"])


def _params(cfg) -> PdhgParams:
    return PdhgParams(cfg["tau_u"], cfg["tau_p"], cfg["omega"], cfg["eps"], cfg["tol"], cfg["max_iter"])


def _cmd_solve(cfg, out: Path) -> int:
    model = _model(cfg)
    u0 = initial_condition(model)
    params = _params(cfg)
    snaps = cfg["snapshots"] or []
    if cfg["adaptive"]:
        t_end = cfg["t_end"] if cfg["t_end"] is not None else cfg["windows"] * cfg["nt"] * cfg["ht"]
        res = adaptive_march(
            model, u0, cfg["ht"], max(cfg["ht_cap"], cfg["ht"]), t_end, cfg["fast_iters"], params,
            n_t=cfg["nt"], solver=cfg["solver"], snapshot_times=snaps,
        )
    else:
        plan = MarchPlan(cfg["windows"], cfg["nt"], cfg["ht"], cfg["solver"])
        res = march(model, u0, plan, params, snapshot_times=snaps)
    write_window_csv(res.records, out / "windows.csv")
    if snaps:
        write_snapshots(res, out / "snapshots", pgm=cfg["pgm"])
    print(f"reached t={res.time:.6g} in {len(res.records)} windows")
    if not res.ok:
        print(f"error: {res.error}", file=sys.stderr)
        return EXIT_SOLVER_FAILED
    return EXIT_OK


def _cmd_flow(cfg, out: Path) -> int:
    model = _model(cfg)
    prob = make_problem(model, initial_condition(model), cfg["nt"], cfg["ht"])
    pc = build_precond(model, cfg["nt"], cfg["ht"])
    rep = theory_report(model, cfg["ht"], cfg["nt"])
    gamma, eps = cfg["gamma"], cfg["flow_eps"]
    if gamma is None or eps is None:
        _, _, kappa = sigma_kappa(min(rep.theta, 0.999))
        g0, e0 = special_params(kappa)
        gamma = g0 if gamma is None else gamma
        eps = e0 if eps is None else eps
    t_end = cfg["t_end"] if cfg["t_end"] is not None else 10.0
    fp = FlowParams(gamma, eps, cfg["dt"], t_end, cfg["lyap_mu"])
    traj = integrate_flow(prob, pc, fp, sigma_hi=rep.sigma_hi)
    write_trajectory_csv(traj, out / "trajectory.csv")
    rate = fit_decay_rate(traj.t, traj.fhat_l2)
    print(f"gamma={gamma:.6g} epsilon={eps:.6g} fitted_rate={rate:.6g} bound={rep.flow_rate_bound:.6g}")
    return EXIT_SOLVER_FAILED if traj.diverged else EXIT_OK


def _cmd_theory(cfg, out: Path) -> int:
    model = _model(cfg)
    rep = theory_report(model, cfg["ht"], cfg["nt"])
    theta = cfg["theta"] if cfg["theta"] is not None else rep.theta_tilde
    rows = [(name, getattr(rep, name)) for name in rep.__dataclass_fields__]
    try:
        dp = discrete_hyperparams(theta, cfg["u"])
    except ValueError as exc:
        dp = None
        print(f"discrete hyperparameters unavailable: {exc}", file=sys.stderr)
    if dp is not None:
        rows.append(("theta_used", theta))
        rows += [(name, getattr(dp, name)) for name in dp.__dataclass_fields__]
        rows.append(("log10_rate", dp.log10_rate))
    width = max(len(n) for n, _ in rows)
    for name, val in rows:
        print(f"{name:<{width}}  {_fmt(val) if not isinstance(val, float) else f'{val:.4f}'}")
    with open(out / "theory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for name, val in rows:
            w.writerow([name, _fmt(float(val) if isinstance(val, (int, float)) and not isinstance(val, bool) else val)])
    return EXIT_OK


def _sweep_run(job: tuple) -> dict:
    idx, cfg, nx, nt, ht, run_dir = job
    model = build_model(cfg["equation"], cfg["eps0"], cfg["mu"], nx)
    prob = make_problem(model, initial_condition(model), nt, ht)
    pc = build_precond(model, nt, ht)
    t0 = time.perf_counter()
    _, stats = solve_window(prob, pc, _params(cfg))
    wall = time.perf_counter() - t0
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    write_stats_csv(stats, Path(run_dir) / "stats.csv")
    try:
        _, rbar = rate_series(stats.residual_history, cfg["rate_prefix"])
    except ValueError:
        rbar = math.nan
    return {
        "run": idx, "nx": nx, "nt": nt, "ht": ht, "rbar": rbar, "iterations": stats.iterations,
        "converged": int(stats.converged), "wall_time": wall,
    }


def _cmd_sweep(cfg, out: Path) -> int:
    axes = (cfg["nx_list"] or [cfg["nx"]], cfg["nt_list"] or [cfg["nt"]], cfg["ht_list"] or [cfg["ht"]])
    jobs = [
        (k, cfg, nx, nt, ht, str(out / "runs" / f"run_{k:04d}"))
        for k, (nx, nt, ht) in enumerate(itertools.product(*axes))
    ]
    n_jobs = cfg["jobs"]
    cap = os.environ.get("RD_PDHG_THREADS")
    if cap and cap.isdigit() and int(cap) > 0:
        n_jobs = min(n_jobs, int(cap))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(_sweep_run, jobs))
    else:
        rows = [_sweep_run(j) for j in jobs]
    cols = ["run", "nx", "nt", "ht", "rbar", "iterations", "converged", "wall_time"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    print(f"{len(rows)} runs written to {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_compare(cfg, out: Path) -> int:
    model = _model(cfg)
    u0 = initial_condition(model)
    params = _params(cfg)
    plan = MarchPlan(cfg["windows"], cfg["nt"], cfg["ht"], cfg["solver"])
    times = [plan.n_t * plan.h_t * (k + 1) for k in range(plan.windows)]
    t0 = time.perf_counter()
    res_a = march(model, u0, plan, params, snapshot_times=times)
    wall_a = time.perf_counter() - t0
    ref_ht = cfg["ref_ht"] or cfg["ht"]
    n_ref = max(1, int(round(plan.total_time / ref_ht)))
    t0 = time.perf_counter()
    res_b = march(model, u0, MarchPlan(n_ref, 1, ref_ht, cfg["ref_solver"]), params, snapshot_times=times)
    wall_b = time.perf_counter() - t0
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l1_discrepancy", "front_radius", "front_radius_ref"])
        for (s, _, ua), (_, _, ub) in zip(res_a.snapshots, res_b.snapshots):
            d = diagnostics(ua, ub, model.grid)
            ref = diagnostics(ub, ub, model.grid)
            w.writerow([_fmt(float(s)), _fmt(d["l1_discrepancy"]), _fmt(d["front_radius"]), _fmt(ref["front_radius"])])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["solver", "h_t", "steps", "wall_time", "ok"])
        w.writerow([cfg["solver"], _fmt(cfg["ht"]), plan.windows * plan.n_t, _fmt(wall_a), int(res_a.ok)])
        w.writerow([cfg["ref_solver"], _fmt(ref_ht), n_ref, _fmt(wall_b), int(res_b.ok)])
    print(f"{cfg['solver']}: {wall_a:.3f}s, {cfg['ref_solver']}: {wall_b:.3f}s")
    return EXIT_OK if res_a.ok and res_b.ok else EXIT_SOLVER_FAILED


_HANDLERS = {"solve": _cmd_solve, "flow": _cmd_flow, "theory": _cmd_theory, "sweep": _cmd_sweep, "compare": _cmd_compare}


def run(command: str, cfg: dict) -> int:
    out = _prepare_out(cfg)
    write_config(cfg, out / "config.txt")
    _write_manifest(out, command, cfg)
    t0 = time.perf_counter()
    code = _HANDLERS[command](cfg, out)
    _write_manifest(out, command, cfg, {"wall_time": time.perf_counter() - t0, "exit_code": code})
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return run(args.command, cfg)
    except ConfigError as exc:
        print(f"rdpdhg: error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"rdpdhg: error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
