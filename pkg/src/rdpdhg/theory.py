"""Closed-form convergence quantities for the preconditioned PDHG method.

Covers the spectral contraction constant ``zeta``, the singular-value bounds
``1 -+ theta``, the Lyapunov rate ``beta`` of the continuous flow, parameter
choices for the flow and for the discrete iteration, and the existence limit
on ``h_t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .equations import RDModel, SpectralOp

__all__ = [
    "TheoryReport",
    "DiscreteParams",
    "zeta_theta",
    "sigma_kappa",
    "varphi",
    "varphi_beta",
    "lyapunov_conditions_hold",
    "continuous_params",
    "special_params",
    "rate_bound",
    "delta_rate_bound",
    "optimal_gamma_unit",
    "psi",
    "omega_bound",
    "general_tau_bar",
    "general_phi",
    "discrete_hyperparams",
    "log10_rate",
    "existence_ht_max",
    "existence_ht_max_modewise",
    "theory_report",
]

THETA_DISCRETE_MAX = math.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class TheoryReport:
    zeta: float
    theta: float
    theta_tilde: float
    sigma_lo: float
    sigma_hi: float
    kappa: float
    flow_rate_bound: float
    ht_max_existence: float
    surrogate: bool = False


@dataclass(frozen=True)
class DiscreteParams:
    u: float
    tau_p: float
    tau_u: float
    omega: float
    epsilon: float
    phi: float

    @property
    def log10_rate(self) -> float:
        return log10_rate(self.phi)


def _symbols(model: RDModel) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(model.g_op, SpectralOp):
        raise TypeError("G_h must be spectral for the closed-form theory")
    return model.g_op.symbol.multipliers, model.l_precond.multipliers


def zeta_theta(model: RDModel, h_t: float, n_t: int) -> tuple[float, float, float]:
    """``(zeta, theta, theta_tilde)`` for one window of length ``T = n_t h_t``.

    ``zeta = max_k g_k / (1 + h_t (a g_k l_k + b c g_k))``, ``theta = b T Lip(R) zeta``.
    ``theta_tilde`` is the mode-free upper bound available for G = I and for
    G = L; other models fall back to ``theta``.
    """
    if not (h_t > 0 and n_t >= 1):
        raise ValueError(f"need h_t > 0 and n_t >= 1, got {h_t}, {n_t}")
    g, lsym = _symbols(model)
    a, b = model.a, model.b
    c, lip = model.reaction.c, model.reaction.lip_r
    zeta = float(np.max(g / (1.0 + h_t * (a * g * lsym + b * c * g))))
    t_win = n_t * h_t
    theta = b * t_win * lip * zeta
    if model.ac_type:
        theta_tilde = b * lip * t_win
    elif model.ch_type:
        theta_tilde = b * lip * t_win / (2.0 * math.sqrt(a * h_t) + b * c * h_t)
    else:
        theta_tilde = theta
    return zeta, theta, theta_tilde


def sigma_kappa(theta: float) -> tuple[float, float, float]:
    """Singular-value bounds ``(1 - theta, 1 + theta)`` and their ratio."""
    if not 0 <= theta < 1:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    return 1.0 - theta, 1.0 + theta, (1.0 + theta) / (1.0 - theta)


def varphi(z, mu: float, gamma: float, epsilon: float):
    z = np.asarray(z, dtype=float)
    root = np.sqrt((gamma * z - mu * epsilon) ** 2 + (mu - (1.0 - gamma * epsilon) * z) ** 2)
    return 0.5 * (gamma * z + mu * epsilon - root)


def lyapunov_conditions_hold(mu, gamma, epsilon, sigma_lo, sigma_hi) -> bool:
    """Admissibility of ``(mu, gamma, epsilon)`` for the Lyapunov decay estimate."""
    if sigma_lo <= 0:
        return False
    rm = math.sqrt(mu)
    if not 1.0 / sigma_lo - 1.0 / sigma_hi < 2.0 / rm:
        return False
    ge = gamma * epsilon
    lower = max((1.0 - rm / sigma_hi) ** 2, (1.0 - rm / sigma_lo) ** 2)
    return lower < ge < (1.0 + rm / sigma_hi) ** 2


def varphi_beta(mu, gamma, epsilon, sigma_lo, sigma_hi, n_samples: int = 10_000) -> tuple[Callable, float]:
    """Return ``phi`` and ``beta = min phi`` over ``[sigma_lo^2, sigma_hi^2]``.

    The minimum is located by dense sampling and polished with a bounded
    scalar search between the neighbours of the best sample.  A warning is
    issued when the parameters violate the decay conditions; ``beta`` is
    returned regardless and may be non-positive.
    """
    if not (0 <= sigma_lo <= sigma_hi):
        raise ValueError(f"empty interval [{sigma_lo}, {sigma_hi}]")

    def phi(z):
        return varphi(z, mu, gamma, epsilon)

    if not lyapunov_conditions_hold(mu, gamma, epsilon, sigma_lo, sigma_hi):
        warnings.warn("(mu, gamma, epsilon) violate the Lyapunov decay conditions", RuntimeWarning, stacklevel=2)
    lo, hi = sigma_lo**2, sigma_hi**2
    if hi == lo:
        return phi, float(phi(lo))
    zs = np.linspace(lo, hi, n_samples)
    vals = phi(zs)
    k = int(np.argmin(vals))
    beta = float(vals[k])
    left, right = zs[max(k - 1, 0)], zs[min(k + 1, n_samples - 1)]
    res = minimize_scalar(lambda z: float(phi(z)), bounds=(left, right), method="bounded", options={"xatol": 1e-10})
    if res.success and res.fun < beta:
        beta = float(res.fun)
    return phi, beta


def continuous_params(kappa: float, delta: float) -> tuple[float, float]:
    """``gamma = (1 - delta)/kappa``, ``epsilon = (1 - delta) kappa``; needs ``|delta| < 1/kappa``."""
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if not abs(delta) < 1.0 / kappa:
        raise ValueError(f"|delta| must be below 1/kappa = {1.0 / kappa}, got {delta}")
    return (1.0 - delta) / kappa, (1.0 - delta) * kappa


def special_params(kappa: float) -> tuple[float, float]:
    """The ``delta = 1/(2 kappa)`` choice: ``gamma = 1/kappa - 1/(2 kappa^2)``, ``epsilon = kappa - 1/2``."""
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    return 1.0 / kappa - 0.5 / kappa**2, kappa - 0.5


def rate_bound(theta: float) -> float:
    """Guaranteed exponential decay rate of the flow residual, ``(5/32)(1-theta)^3/(1+theta)``."""
    if not 0 <= theta < 1:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    return 5.0 / 32.0 * (1.0 - theta) ** 3 / (1.0 + theta)


def delta_rate_bound(kappa: float, delta: float, sigma_lo: float) -> float:
    """Residual decay rate ``(1 - kappa|delta|)(3 - delta) min(sigma_lo^2, 1) / (8 kappa)``."""
    continuous_params(kappa, delta)
    return (1.0 - kappa * abs(delta)) * (3.0 - delta) * min(sigma_lo**2, 1.0) / (8.0 * kappa)


def optimal_gamma_unit(sigma1: float, sigma_n: float) -> tuple[float, float]:
    """Best ``gamma`` under ``gamma epsilon = 1`` and the resulting rate ``lambda = gamma sigma_n^2``."""
    if not (sigma1 >= sigma_n > 0):
        raise ValueError(f"need sigma1 >= sigma_n > 0, got {sigma1}, {sigma_n}")
    s1, sn = sigma1**2, sigma_n**2
    r = (s1 - sn) / (s1 + sn)
    gamma = (-0.5 * r + math.sqrt(0.25 * r * r + 4.0 * sn)) / (2.0 * sn)
    return gamma, gamma * sn


def psi(theta: float) -> float:
    return 1.0 - 2.0 * theta - theta * theta


def omega_bound(v: float, rho: float, theta: float) -> float:
    return abs(1.0 - v - rho) + (abs(1.0 - v) + rho) * theta


def _margin(theta, gamma_t, epsilon, rho):
    ge = gamma_t * epsilon
    return rho * ge * psi(theta) - 0.25 * omega_bound(ge, rho, theta) ** 2


def _scale(theta, gamma_t, epsilon, rho):
    ge = gamma_t * epsilon
    return (1.0 + theta) ** 2 * max(gamma_t**2 * (1.0 + theta) ** 2, (1.0 - ge) ** 2)


def general_tau_bar(theta: float, gamma_t: float, epsilon: float, rho: float) -> float:
    """Largest admissible step scale for ``gamma_t = omega tau_u``, ``rho = tau_p/tau_u``.

    The recommended dual step is ``tau_p = tau_bar / 2``.
    """
    return _margin(theta, gamma_t, epsilon, rho) / (2.0 * (gamma_t + rho * epsilon) * _scale(theta, gamma_t, epsilon, rho))


def general_phi(theta: float, gamma_t: float, epsilon: float, rho: float) -> float:
    m = _margin(theta, gamma_t, epsilon, rho)
    return m * m / (2.0 * _scale(theta, gamma_t, epsilon, rho) * (gamma_t + rho * epsilon) ** 2)


def discrete_hyperparams(theta: float, u: float) -> DiscreteParams:
    """Step sizes with a guaranteed per-iteration contraction, parametrized by ``u``.

    Requires ``0 <= theta < sqrt(2) - 1`` and ``theta^2/(1 - 2 theta) < u < 1``.
    """
    if not 0 <= theta < THETA_DISCRETE_MAX:
        raise ValueError(f"theta must lie in [0, sqrt(2)-1), got {theta}")
    u_min = theta * theta / (1.0 - 2.0 * theta)
    if not u_min < u < 1:
        raise ValueError(f"u must lie in ({u_min}, 1), got {u}")
    s = math.sqrt(u * (1.0 - u))
    tau_p = (u * (1.0 - 2.0 * theta) - theta**2) / (
        8.0 * s * (1.0 + theta) ** 2 * max(u * (1.0 + theta) ** 2, 1.0 - u)
    )
    tau_u = tau_p / (1.0 - u)
    omega = s / tau_u
    epsilon = math.sqrt(u / (1.0 - u))
    phi = (
        (1.0 - 2.0 * theta) ** 2
        / (8.0 * (1.0 + theta) ** 2)
        * (1.0 - theta**2 / ((1.0 - 2.0 * theta) * u)) ** 2
        / max((1.0 + theta) ** 2, (1.0 - u) / u)
    )
    return DiscreteParams(u, tau_p, tau_u, omega, epsilon, phi)


def log10_rate(phi: float) -> float:
    """Guaranteed decay of ``||U_k - U*||^2`` per iteration, in decades."""
    return math.log((phi + math.sqrt(phi * phi + 4.0)) / 2.0) / math.log(10.0)


def existence_ht_max_modewise(model: RDModel) -> float:
    """Largest ``h_t`` for which the unique-solvability condition holds mode by mode.

    For each mode with ``g_k > 0`` the condition reads
    ``1/(g_k h_t) + a l_k + b K > b Lip(phi)``.
    """
    g, lsym = _symbols(model)
    rx = model.reaction
    deficit = model.b * (rx.lip_phi - rx.k_convex) - model.a * lsym
    active = (g > 0) & (deficit > 0)
    if not np.any(active):
        return math.inf
    return float(np.min(1.0 / (g[active] * deficit[active])))


def existence_ht_max(model: RDModel) -> float:
    """Sufficient upper bound on ``h_t`` for a unique root.

    G = I gives ``1/(Lip(phi) b)``.  G = L uses ``2 sqrt(a/h_t) > b Lip(phi)``,
    i.e. ``4a/(b Lip(phi))^2``, capped by ``4a^2/(b Lip(phi))^2``.  Other models
    use the mode-wise condition.
    """
    rx = model.reaction
    b_eff = model.b * (rx.lip_phi - rx.k_convex)
    if b_eff <= 0:
        return math.inf
    if model.ac_type:
        return 1.0 / b_eff
    if model.ch_type:
        a = model.a
        return min(4.0 * a, 4.0 * a * a) / b_eff**2
    return existence_ht_max_modewise(model)


def theory_report(model: RDModel, h_t: float, n_t: int) -> TheoryReport:
    zeta, theta, theta_tilde = zeta_theta(model, h_t, n_t)
    if theta < 1:
        lo, hi, kappa = sigma_kappa(theta)
        bound = rate_bound(theta)
    else:
        lo, hi, kappa, bound = 1.0 - theta, 1.0 + theta, math.inf, math.nan
    return TheoryReport(zeta, theta, theta_tilde, lo, hi, kappa, bound, existence_ht_max(model), model.surrogate)
