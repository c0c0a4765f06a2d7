"""Continuous-time PDHG flow and its Lyapunov function.

With ``Fh = M^{-1} F`` and ``DFh^T = DF^T M^{-T}`` the flow reads::

    dq/dt = -eps q + Fh(u)
    du/dt = -DFh(u)^T (q + gamma dq/dt) = -DFh(u)^T ((1 - gamma eps) q + gamma Fh(u))
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .implicit import WindowProblem, apply_DF_transpose, eval_F
from .pdhg import DIVERGENCE_LIMIT, DivergenceError
from .precond import Precond, apply_M_inverse, apply_M_inverse_transpose

__all__ = [
    "FlowParams",
    "Trajectory",
    "flow_rhs",
    "integrate_flow",
    "lyapunov_value",
    "fit_decay_rate",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class FlowParams:
    gamma: float
    epsilon: float
    dt: float
    t_end: float
    mu: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "epsilon", "dt", "t_end", "mu"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and positive, got {val}")

    def check_step(self, sigma_hi: float) -> bool:
        """True when ``dt`` is well inside the explicit stability scale ``1/(gamma sigma_hi^2 + eps)``."""
        return self.dt * (self.gamma * sigma_hi**2 + self.epsilon) <= 0.5


@dataclass
class Trajectory:
    t: np.ndarray
    fhat_l2: np.ndarray
    lyapunov: np.ndarray
    u: np.ndarray
    q: np.ndarray
    diverged: bool = False


def _fhat(prob, pc, u):
    return apply_M_inverse(pc, eval_F(prob, u))


def flow_rhs(prob: WindowProblem, pc: Precond, u, q, gamma: float, epsilon: float):
    """Return ``(du/dt, dq/dt)``."""
    fh = _fhat(prob, pc, u)
    dq = fh - epsilon * q
    y = apply_M_inverse_transpose(pc, (1.0 - gamma * epsilon) * q + gamma * fh)
    du = -apply_DF_transpose(prob, u, y)
    return du, dq


def lyapunov_value(prob: WindowProblem, pc: Precond, u, q, mu: float) -> float:
    """``||Fh(u)||^2 / 2 + mu ||q||^2 / 2``."""
    fh = _fhat(prob, pc, u)
    return 0.5 * float(np.vdot(fh, fh)) + 0.5 * mu * float(np.vdot(q, q))


def integrate_flow(
    prob: WindowProblem,
    pc: Precond,
    fp: FlowParams,
    u0: np.ndarray | None = None,
    q0: np.ndarray | None = None,
    sigma_hi: float | None = None,
) -> Trajectory:
    """Classical RK4 with fixed step; logs ``||Fh||_2`` and ``I_mu`` at every step.

    Passing ``sigma_hi`` enables a step-size sanity warning.  Blow-up stops the
    integration and sets ``diverged``.
    """
    if sigma_hi is not None and not fp.check_step(sigma_hi):
        warnings.warn(f"dt={fp.dt} is large relative to 1/(gamma sigma^2 + eps)", RuntimeWarning, stacklevel=2)
    u = prob.replicate() if u0 is None else np.array(u0, dtype=float)
    q = np.zeros(prob.shape) if q0 is None else np.array(q0, dtype=float)
    n_steps = int(math.ceil(fp.t_end / fp.dt - 1e-9))
    g, e = fp.gamma, fp.epsilon

    def rhs(uu, qq):
        return flow_rhs(prob, pc, uu, qq, g, e)

    ts, norms, lyap = [], [], []

    def log(t, uu, qq):
        fh = _fhat(prob, pc, uu)
        fn2 = float(np.vdot(fh, fh))
        ts.append(t)
        norms.append(math.sqrt(fn2))
        lyap.append(0.5 * fn2 + 0.5 * fp.mu * float(np.vdot(qq, qq)))

    log(0.0, u, q)
    diverged = False
    for k in range(1, n_steps + 1):
        h = fp.dt
        k1u, k1q = rhs(u, q)
        k2u, k2q = rhs(u + 0.5 * h * k1u, q + 0.5 * h * k1q)
        k3u, k3q = rhs(u + 0.5 * h * k2u, q + 0.5 * h * k2q)
        k4u, k4q = rhs(u + h * k3u, q + h * k3q)
        u_new = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        q_new = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(q_new))):
            diverged = True
            break
        u, q = u_new, q_new
        log(k * h, u, q)
        if norms[-1] > DIVERGENCE_LIMIT:
            diverged = True
            break
    return Trajectory(np.array(ts), np.array(norms), np.array(lyap), u, q, diverged)


def fit_decay_rate(t, values, skip_fraction: float = 0.2) -> float:
    """Least-squares exponential rate ``r`` with ``values ~ C exp(-r t)``.

    The first ``skip_fraction`` of the samples is treated as transient and dropped.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 2:
        raise ValueError("need matching arrays with at least two samples")
    if np.any(~(v > 0)):
        raise ValueError("values must be positive")
    start = int(math.floor(skip_fraction * t.size))
    start = min(start, t.size - 2)
    slope = np.polyfit(t[start:], np.log(v[start:]), 1)[0]
    return float(-slope)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "fhat_l2", "lyapunov"])
        for t, f, ly in zip(traj.t, traj.fhat_l2, traj.lyapunov):
            w.writerow([f"{t:.17g}", f"{f:.17g}", f"{ly:.17g}"])
