"""The root-finding system for one window of ``n_t`` backward-Euler steps.

A space-time vector is an ``(n_t, n_x, n_x)`` array; block ``t`` holds the
solution at time node ``t + 1`` of the window (the window's initial state is
stored separately as ``u0``).  Output block ``t`` of ``F`` is the step from
node ``t`` to node ``t + 1``::

    F(U)_t = U_t - U_{t-1} + h_t G(a L U_t + b f(U_t)) - V_t,   U_{-1} := 0,
    V = [u0, 0, ..., 0].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equations import RDModel

__all__ = [
    "WindowProblem",
    "assemble_v",
    "make_problem",
    "eval_F",
    "residual_inf",
    "apply_DF",
    "apply_DF_transpose",
    "time_difference",
    "time_difference_transpose",
]


def assemble_v(u0: np.ndarray, n_t: int, h_t: float | None = None) -> np.ndarray:
    """Constant vector ``V``: the initial field in block 0, zeros after it."""
    u0 = np.asarray(u0, dtype=float)
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial field has non-finite entries")
    if n_t < 1:
        raise ValueError(f"n_t must be >= 1, got {n_t}")
    v = np.zeros((n_t,) + u0.shape)
    v[0] = u0
    return v


@dataclass(frozen=True, eq=False)
class WindowProblem:
    model: RDModel
    u0: np.ndarray
    n_t: int
    h_t: float
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if not self.h_t > 0:
            raise ValueError(f"h_t must be positive, got {self.h_t}")
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape != self.model.grid.shape:
            raise ValueError(f"u0 shape {u0.shape} does not match grid {self.model.grid.shape}")
        object.__setattr__(self, "u0", u0)
        if self.v is None:
            object.__setattr__(self, "v", assemble_v(u0, self.n_t))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_t,) + self.model.grid.shape

    def replicate(self, field_values: np.ndarray | None = None) -> np.ndarray:
        """Space-time vector with every block equal to ``field_values`` (default u0)."""
        base = self.u0 if field_values is None else np.asarray(field_values, float)
        return np.broadcast_to(base, self.shape).copy()

    def with_h_t(self, h_t: float) -> "WindowProblem":
        return WindowProblem(self.model, self.u0, self.n_t, h_t)


def make_problem(model: RDModel, u0: np.ndarray, n_t: int, h_t: float) -> WindowProblem:
    return WindowProblem(model, u0, n_t, h_t)


def _check(prob: WindowProblem, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != prob.shape:
        raise ValueError(f"space-time vector has shape {u.shape}, expected {prob.shape}")
    return u


def time_difference(u: np.ndarray) -> np.ndarray:
    """``D U``: block t is ``U_t - U_{t-1}`` with ``U_{-1} = 0``."""
    du = u.copy()
    du[1:] -= u[:-1]
    return du


def time_difference_transpose(p: np.ndarray) -> np.ndarray:
    """``D^T P``: block t is ``P_t - P_{t+1}`` with ``P_{n_t} = 0``."""
    dp = p.copy()
    dp[:-1] -= p[1:]
    return dp


def eval_F(prob: WindowProblem, u: np.ndarray) -> np.ndarray:
    u = _check(prob, u)
    m = prob.model
    inner = m.b * m.reaction.f(u)
    if m.a:
        inner = inner + m.a * m.l_op.apply(u)
    return time_difference(u) + prob.h_t * m.g_op.apply(inner) - prob.v


def residual_inf(prob: WindowProblem, u: np.ndarray, F: np.ndarray | None = None) -> float:
    """``max |F(U)| / h_t``; pass a precomputed ``F`` to skip the evaluation."""
    if F is None:
        F = eval_F(prob, u)
    return float(np.max(np.abs(F))) / prob.h_t


def apply_DF(prob: WindowProblem, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Jacobian action ``DF(U) w = D w + h_t G(a L w + b f'(U) w)``."""
    u = _check(prob, u)
    w = _check(prob, w)
    m = prob.model
    inner = m.b * m.reaction.f_prime(u) * w
    if m.a:
        inner = inner + m.a * m.l_op.apply(w)
    return time_difference(w) + prob.h_t * m.g_op.apply(inner)


def apply_DF_transpose(prob: WindowProblem, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``DF(U)^T p = D^T p + h_t (a L G p + b f'(U) * G p)``; uses G, L self-adjoint."""
    u = _check(prob, u)
    p = _check(prob, p)
    m = prob.model
    gp = m.g_op.apply(p)
    out = m.b * m.reaction.f_prime(u) * gp
    if m.a:
        out = out + m.a * m.l_op.apply(gp)
    return time_difference_transpose(p) + prob.h_t * out
