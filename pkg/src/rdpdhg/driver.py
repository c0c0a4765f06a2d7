"""Multi-window time marching, adaptive step control and physical diagnostics."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines
from .equations import RDModel
from .fieldio import write_field, write_pgm
from .implicit import make_problem
from .pdhg import PdhgParams, solve_window
from .precond import build_precond
from .spectral import Grid2D

__all__ = [
    "SOLVERS",
    "AdaptiveSettings",
    "MarchPlan",
    "WindowRecord",
    "MarchResult",
    "WindowOutcome",
    "solve_one_window",
    "march",
    "adapt_step",
    "adaptive_march",
    "free_energy",
    "front_radius",
    "diagnostics",
    "write_window_csv",
    "write_snapshots",
]

SOLVERS = ("pdhg", "imex", "fixed_point", "nl_sor", "newton")
HT_UNDERFLOW = 1e-12


@dataclass(frozen=True)
class AdaptiveSettings:
    ht_cap: float
    fast_iter_threshold: int = 200


@dataclass(frozen=True)
class MarchPlan:
    windows: int
    n_t: int
    h_t: float
    solver: str = "pdhg"
    adaptive: AdaptiveSettings | None = None

    def __post_init__(self):
        if self.windows < 1 or self.n_t < 1:
            raise ValueError(f"windows and n_t must be positive, got {self.windows}, {self.n_t}")
        if not (math.isfinite(self.h_t) and self.h_t > 0):
            raise ValueError(f"h_t must be positive, got {self.h_t}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {', '.join(SOLVERS)}")
        if self.adaptive is not None and self.adaptive.ht_cap < self.h_t:
            raise ValueError("ht_cap must be at least the initial h_t")

    @property
    def total_time(self) -> float:
        return self.windows * self.n_t * self.h_t


@dataclass
class WindowRecord:
    window: int
    h_t: float
    iterations: int
    converged: bool
    wall_time: float
    energy: float


@dataclass
class WindowOutcome:
    """Solution slices of one window (shape ``(n_t, n_x, n_x)``) and solver bookkeeping."""

    slices: np.ndarray
    converged: bool
    iterations: int


@dataclass
class MarchResult:
    u: np.ndarray
    time: float
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    h_schedule: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def solve_one_window(
    model: RDModel,
    u0: np.ndarray,
    n_t: int,
    h_t: float,
    solver: str = "pdhg",
    params: PdhgParams | None = None,
) -> WindowOutcome:
    """Solve ``n_t`` implicit steps starting from ``u0`` with the chosen solver."""
    params = params or PdhgParams()
    if solver == "pdhg":
        prob = make_problem(model, u0, n_t, h_t)
        pc = build_precond(model, n_t, h_t)
        u, stats = solve_window(prob, pc, params)
        return WindowOutcome(u, stats.converged, stats.iterations)
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    slices = []
    cur = np.asarray(u0, dtype=float)
    iters = 0
    try:
        for _ in range(n_t):
            if solver == "imex":
                cur = baselines.imex_step(model, cur, h_t)
                iters += 1
            else:
                fn = {
                    "fixed_point": baselines.fixed_point_solve,
                    "nl_sor": baselines.nonlinear_sor_solve,
                    "newton": baselines.newton_solve,
                }[solver]
                cur, info = fn(model, cur, h_t, tol=params.tol, full_output=True)
                iters += info.iterations
            slices.append(cur)
    except baselines.SolverError:
        pad = [slices[-1] if slices else np.asarray(u0, float)] * (n_t - len(slices))
        return WindowOutcome(np.array(slices + pad), False, iters)
    return WindowOutcome(np.array(slices), True, iters)


class _SnapshotPicker:
    """Keeps, for each requested time, the nearest slice seen so far."""

    def __init__(self, times: Sequence[float]):
        self.times = list(times)
        self.best: list = [None] * len(self.times)

    def offer(self, t: float, u: np.ndarray):
        for k, s in enumerate(self.times):
            cur = self.best[k]
            if cur is None or abs(t - s) < abs(cur[0] - s):
                self.best[k] = (t, u.copy())

    def result(self) -> list:
        return [(s, b[0], b[1]) for s, b in zip(self.times, self.best) if b is not None]


def _accept_window(model, res: MarchResult, picker, out: WindowOutcome, h_t: float):
    for blk in out.slices:
        res.time += h_t
        res.energies.append((res.time, free_energy(model, blk)))
        picker.offer(res.time, blk)
    res.u = out.slices[-1].copy()


def march(
    model: RDModel,
    u0: np.ndarray,
    plan: MarchPlan,
    params: PdhgParams | None = None,
    snapshot_times: Sequence[float] = (),
    window_solver: Callable | None = None,
) -> MarchResult:
    """Solve ``plan.windows`` consecutive windows, chaining the last slice into the next ``u0``.

    A failed window stops the march; everything computed before it is kept and
    ``error`` describes the failure.
    """
    params = params or PdhgParams()
    solve = window_solver or (lambda m, u, n, h: solve_one_window(m, u, n, h, plan.solver, params))
    u0 = np.asarray(u0, dtype=float)
    res = MarchResult(u0.copy(), 0.0)
    res.energies.append((0.0, free_energy(model, u0)))
    picker = _SnapshotPicker(snapshot_times)
    picker.offer(0.0, u0)
    for w in range(plan.windows):
        t0 = time.perf_counter()
        out = solve(model, res.u, plan.n_t, plan.h_t)
        wall = time.perf_counter() - t0
        energy = free_energy(model, out.slices[-1])
        res.records.append(WindowRecord(w, plan.h_t, out.iterations, out.converged, wall, energy))
        if not out.converged:
            res.error = f"window {w} did not converge after {out.iterations} iterations"
            break
        _accept_window(model, res, picker, out, plan.h_t)
        res.h_schedule.append(plan.h_t)
    res.snapshots = picker.result()
    return res


def adapt_step(h_t: float, converged: bool, iterations: int, ht_cap: float, fast_iter_threshold: int) -> tuple[bool, float]:
    """Step-size rule: returns ``(accepted, next h_t)``.

    Converged windows are accepted and grow ``h_t`` by 10% (capped) when they
    took fewer than ``fast_iter_threshold`` iterations; failed windows are
    rejected and ``h_t`` is halved.
    """
    if not converged:
        return False, 0.5 * h_t
    if iterations < fast_iter_threshold:
        return True, min(1.1 * h_t, ht_cap)
    return True, h_t


def adaptive_march(
    model: RDModel,
    u0: np.ndarray,
    h_t: float,
    ht_cap: float,
    t_end: float,
    fast_iter_threshold: int = 200,
    params: PdhgParams | None = None,
    n_t: int = 1,
    solver: str = "pdhg",
    snapshot_times: Sequence[float] = (),
    window_solver: Callable | None = None,
    max_windows: int = 1_000_000,
) -> MarchResult:
    """March until ``t_end`` with the adaptive rule; rejected windows are re-solved at half the step."""
    if not h_t <= ht_cap:
        raise ValueError(f"ht_cap={ht_cap} is below the initial h_t={h_t}")
    params = params or PdhgParams()
    solve = window_solver or (lambda m, u, n, h: solve_one_window(m, u, n, h, solver, params))
    u0 = np.asarray(u0, dtype=float)
    res = MarchResult(u0.copy(), 0.0)
    res.energies.append((0.0, free_energy(model, u0)))
    picker = _SnapshotPicker(snapshot_times)
    picker.offer(0.0, u0)
    w = 0
    while res.time < t_end and w < max_windows:
        t0 = time.perf_counter()
        out = solve(model, res.u, n_t, h_t)
        wall = time.perf_counter() - t0
        energy = free_energy(model, out.slices[-1]) if out.converged else math.nan
        res.records.append(WindowRecord(w, h_t, out.iterations, out.converged, wall, energy))
        w += 1
        accepted, h_next = adapt_step(h_t, out.converged, out.iterations, ht_cap, fast_iter_threshold)
        if accepted:
            _accept_window(model, res, picker, out, h_t)
            res.h_schedule.append(h_t)
        h_t = h_next
        if h_t < HT_UNDERFLOW:
            res.error = f"h_t fell below {HT_UNDERFLOW} at t={res.time}"
            break
    res.snapshots = picker.result()
    return res


def free_energy(model: RDModel, u: np.ndarray) -> float:
    """Discrete free energy ``sum[(a/2) sigma |grad_h u|^2 + b W(u)] h_x^2`` with periodic differences."""
    u = np.asarray(u, dtype=float)
    h = model.grid.h_x
    sx, sy = model.sigma_faces()
    dx = np.roll(u, -1, axis=0) - u
    dy = np.roll(u, -1, axis=1) - u
    grad = (sx * dx * dx + sy * dy * dy) / (h * h)
    dens = 0.5 * model.a * grad + model.b * model.reaction.w(u)
    return float(np.sum(dens) * h * h)


def front_radius(u: np.ndarray, grid: Grid2D) -> float | None:
    """Mean distance from the domain centre to the first zero crossing along the four axis rays."""
    u = np.asarray(u, dtype=float)
    n, h = grid.n_x, grid.h_x
    centre = 0.5 * grid.length
    c = int(round(centre / h)) % n
    offset = c * h - centre
    radii = []
    for axis in (0, 1):
        for sgn in (1, -1):
            vals = [u[(c + sgn * k) % n, c] if axis == 0 else u[c, (c + sgn * k) % n] for k in range(n // 2 + 1)]
            for k in range(len(vals) - 1):
                v0, v1 = vals[k], vals[k + 1]
                if v0 == 0.0:
                    radii.append(abs(sgn * k * h + offset))
                    break
                if v0 * v1 < 0:
                    s = k + v0 / (v0 - v1)
                    radii.append(abs(sgn * s * h + offset))
                    break
    return float(np.mean(radii)) if radii else None


def diagnostics(u: np.ndarray, u_ref: np.ndarray, grid: Grid2D) -> dict:
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if u.shape != u_ref.shape or u.shape != grid.shape:
        raise ValueError(f"fields must share the grid shape {grid.shape}")
    return {
        "front_radius": front_radius(u, grid),
        "l1_discrepancy": float(grid.h_x**2 * np.sum(np.abs(u - u_ref))),
    }


def write_window_csv(records: Sequence[WindowRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "h_t", "iterations", "converged", "wall_time", "energy"])
        for r in records:
            w.writerow([r.window, f"{r.h_t:.17g}", r.iterations, int(r.converged), f"{r.wall_time:.17g}", f"{r.energy:.17g}"])


def write_snapshots(result: MarchResult, outdir, pgm: bool = True) -> list[Path]:
    """Write each snapshot as RDF1 (and optionally PGM); returns the RDF1 paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (_, t, u) in enumerate(result.snapshots):
        p = outdir / f"snap_{k:04d}.rdf"
        write_field(p, u, t)
        if pgm:
            write_pgm(outdir / f"snap_{k:04d}.pgm", u)
        paths.append(p)
    return paths
