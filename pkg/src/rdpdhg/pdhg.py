"""Preconditioned PDHG for ``F(U) = 0`` with a quadratic dual regularization.

One iteration, with ``Fh = M^{-1} F``::

    Q+  = (Q + tau_p Fh(U)) / (1 + eps tau_p)
    Qt  = Q+ + omega (Q+ - Q)
    U+  = U - tau_u DF(U)^T M^{-T} Qt

Iteration stops once ``max|F(U)| / h_t < tol``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .implicit import WindowProblem, apply_DF_transpose, eval_F
from .precond import Precond, apply_M_inverse, apply_M_inverse_transpose

__all__ = [
    "PdhgParams",
    "PdhgState",
    "SolveStats",
    "DivergenceError",
    "pdhg_step",
    "gprox_step",
    "solve_window",
    "rate_series",
    "write_stats_csv",
]

DIVERGENCE_LIMIT = 1e12


class DivergenceError(FloatingPointError):
    """The iteration produced non-finite or exploding values."""


@dataclass(frozen=True)
class PdhgParams:
    tau_u: float = 0.5
    tau_p: float = 0.9
    omega: float = 1.0
    epsilon: float = 0.1
    tol: float = 1e-6
    max_iter: int = 20000
    preconditioned: bool = True

    def __post_init__(self):
        for name in ("tau_u", "tau_p", "epsilon", "tol"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and positive, got {val}")
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise ValueError(f"omega must be finite and non-negative, got {self.omega}")
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be non-negative, got {self.max_iter}")


@dataclass
class PdhgState:
    u: np.ndarray
    q: np.ndarray
    iter: int = 0


@dataclass
class SolveStats:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    wall_time: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1][0] if self.residual_history else math.nan

    def fhat_norms(self) -> np.ndarray:
        return np.array([h[1] for h in self.residual_history])


def _precondition(pc: Precond, params: PdhgParams, F: np.ndarray) -> np.ndarray:
    return apply_M_inverse(pc, F) if params.preconditioned else F


def _advance(prob, pc, state, fhat, params) -> PdhgState:
    q_new = (state.q + params.tau_p * fhat) / (1.0 + params.epsilon * params.tau_p)
    q_tilde = q_new + params.omega * (q_new - state.q)
    y = apply_M_inverse_transpose(pc, q_tilde) if params.preconditioned else q_tilde
    u_new = state.u - params.tau_u * apply_DF_transpose(prob, state.u, y)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(q_new))):
        raise DivergenceError(f"non-finite iterate after step {state.iter + 1}")
    return PdhgState(u_new, q_new, state.iter + 1)


def pdhg_step(prob: WindowProblem, pc: Precond, state: PdhgState, params: PdhgParams) -> PdhgState:
    """One PDHG iteration; with ``params.preconditioned = False`` M is replaced by I."""
    fhat = _precondition(pc, params, eval_F(prob, state.u))
    return _advance(prob, pc, state, fhat, params)


def gprox_step(prob: WindowProblem, pc: Precond, state: PdhgState, params: PdhgParams) -> PdhgState:
    """G-prox PDHG with ``G = M M^T`` and an explicit primal update.

    ``state.q`` holds the G-prox dual variable P.  The iterates satisfy
    ``M^T P_k = Q_k`` with Q_k from :func:`pdhg_step` started at ``M^T P_0``.
    """
    F = eval_F(prob, state.u)
    g_inv_f = apply_M_inverse_transpose(pc, apply_M_inverse(pc, F))
    p_new = (state.q + params.tau_p * g_inv_f) / (1.0 + params.epsilon * params.tau_p)
    p_tilde = p_new + params.omega * (p_new - state.q)
    u_new = state.u - params.tau_u * apply_DF_transpose(prob, state.u, p_tilde)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(p_new))):
        raise DivergenceError(f"non-finite iterate after step {state.iter + 1}")
    return PdhgState(u_new, p_new, state.iter + 1)


def solve_window(
    prob: WindowProblem,
    pc: Precond,
    params: PdhgParams,
    u_init: np.ndarray | None = None,
    q_init: np.ndarray | None = None,
    callback: Callable[[PdhgState], None] | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Iterate until the residual drops below ``params.tol`` or ``max_iter`` is hit.

    Defaults: U starts as u0 replicated over the window, Q starts at zero.
    Divergence is reported through ``stats.diverged``; the last finite iterate is
    returned.  ``callback`` sees every state, including the initial one.
    """
    t0 = time.perf_counter()
    u = prob.replicate() if u_init is None else np.array(u_init, dtype=float)
    q = np.zeros(prob.shape) if q_init is None else np.array(q_init, dtype=float)
    state = PdhgState(u, q, 0)
    stats = SolveStats()
    while True:
        F = eval_F(prob, state.u)
        res = float(np.max(np.abs(F))) / prob.h_t
        fhat = _precondition(pc, params, F)
        fnorm = float(np.linalg.norm(fhat))
        stats.residual_history.append((res, fnorm))
        if callback is not None:
            callback(state)
        if not (math.isfinite(res) and res <= DIVERGENCE_LIMIT):
            stats.diverged = True
            break
        if res < params.tol:
            stats.converged = True
            break
        if state.iter >= params.max_iter:
            break
        try:
            state = _advance(prob, pc, state, fhat, params)
        except DivergenceError:
            stats.diverged = True
            break
    stats.iterations = len(stats.residual_history) - 1
    stats.wall_time = time.perf_counter() - t0
    stats.final_state = state
    return state.u, stats


def rate_series(history: Sequence, prefix: int | None = 500) -> tuple[np.ndarray, float]:
    """Per-step rates ``r_k = -log10(h[k+1]/h[k])`` and their mean over ``prefix`` steps.

    ``history`` holds positive norms, or ``(res_inf, fhat_l2)`` pairs from
    :class:`SolveStats` (the second entry is used).
    """
    vals = np.array([h[1] if isinstance(h, (tuple, list)) else h for h in history], dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two history entries")
    if np.any(~(vals > 0)):
        raise ValueError("history entries must be positive")
    r = -np.log10(vals[1:] / vals[:-1])
    head = r if prefix is None else r[:prefix]
    return r, float(np.mean(head))


def write_stats_csv(stats: SolveStats, path) -> None:
    """Columns iter, res_inf, fhat_l2, rate (rate of the step that produced the row)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "res_inf", "fhat_l2", "rate"])
        prev = None
        for k, (res, fn) in enumerate(stats.residual_history):
            rate = "" if prev is None or prev <= 0 or fn <= 0 else f"{-math.log10(fn / prev):.17g}"
            w.writerow([k, f"{res:.17g}", f"{fn:.17g}", rate])
            prev = fn
