"""Reaction-diffusion models ``u_t = -G(a L u + b f(u))`` on periodic squares.

Four presets are provided: Allen-Cahn, Cahn-Hilliard, a variable-mobility
Allen-Cahn variant and a sixth-order Cahn-Hilliard-type equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .spectral import Grid2D, SpectralDiag, build_neg_laplacian, identity_symbol

__all__ = [
    "ReactionSpec",
    "double_well",
    "reaction_eval",
    "SpectralOp",
    "MobilityStencil",
    "LinearOp",
    "RDModel",
    "MODEL_KINDS",
    "build_model",
    "apply_operator",
    "as_stencil",
    "initial_condition",
]


def _dw_f(u):
    return u * u * u - u


def _dw_fprime(u):
    return 3.0 * u * u - 1.0


def _dw_w(u):
    return 0.25 * (u * u - 1.0) ** 2


@dataclass(frozen=True)
class ReactionSpec:
    """Pointwise reaction ``f = W'`` with its linearization constant ``c``.

    ``lip_r`` bounds ``|R'|`` for ``R(u) = f(u) - c u`` on the working range;
    ``lip_phi`` and ``k_convex`` describe a split ``f = V' + phi`` with V
    ``k_convex``-strongly convex and phi Lipschitz (used for the existence bound).
    """

    f: Callable
    f_prime: Callable
    w: Callable
    c: float = 2.0
    lip_r: float = 3.0
    lip_phi: float = 2.0
    k_convex: float = 0.0
    u_equilibria: tuple = (-1.0, 1.0)

    def remainder(self, u):
        return self.f(u) - self.c * u


def double_well(c: float = 2.0, lip_r: float = 3.0) -> ReactionSpec:
    """``W(u) = (u^2 - 1)^2 / 4``, ``f(u) = u^3 - u``; ``c = f'(+-1) = 2``."""
    return ReactionSpec(_dw_f, _dw_fprime, _dw_w, c=c, lip_r=lip_r)


def reaction_eval(spec: ReactionSpec, u: float) -> tuple[float, float, float, float]:
    """Return ``(f(u), f'(u), W(u), R(u))``."""
    return (float(spec.f(u)), float(spec.f_prime(u)), float(spec.w(u)), float(spec.remainder(u)))


@dataclass(frozen=True, eq=False)
class SpectralOp:
    """Linear operator given by a Fourier symbol."""

    symbol: SpectralDiag
    identity: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "identity", self.symbol.is_identity())

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.identity:
            return np.array(values, dtype=float, copy=True)
        return self.symbol.apply(values)


@dataclass(frozen=True, eq=False)
class MobilityStencil:
    """``-div(sigma grad u)`` with mobility sampled on cell faces.

    ``sigma_x[i, j]`` sits at ``((i + 1/2) h, j h)`` and ``sigma_y[i, j]`` at
    ``(i h, (j + 1/2) h)`` (0-based node indices).  Non-negative and self-adjoint.
    """

    grid: Grid2D
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    identity: bool = field(default=False, init=False)

    @classmethod
    def from_function(cls, grid: Grid2D, sigma: Callable) -> "MobilityStencil":
        h = grid.h_x
        idx = np.arange(grid.n_x) * h
        xs, ys = np.meshgrid(idx, idx, indexing="ij")
        return cls(grid, np.asarray(sigma(xs + 0.5 * h, ys), float), np.asarray(sigma(xs, ys + 0.5 * h), float))

    def apply(self, values: np.ndarray) -> np.ndarray:
        u = np.asarray(values, dtype=float)
        if u.shape[-2:] != self.grid.shape:
            raise ValueError(f"field shape {u.shape[-2:]} does not match grid {self.grid.shape}")
        fx = self.sigma_x * (np.roll(u, -1, axis=-2) - u)
        fy = self.sigma_y * (np.roll(u, -1, axis=-1) - u)
        div = fx - np.roll(fx, 1, axis=-2) + fy - np.roll(fy, 1, axis=-1)
        return -div / self.grid.h_x**2


LinearOp = Union[SpectralOp, MobilityStencil]


def apply_operator(op: LinearOp, values: np.ndarray, grid: Grid2D | None = None) -> np.ndarray:
    if grid is not None and np.shape(values)[-2:] != grid.shape:
        raise ValueError(f"field shape {np.shape(values)[-2:]} does not match grid {grid.shape}")
    return op.apply(values)


def as_stencil(op: LinearOp, grid: Grid2D) -> MobilityStencil:
    """Express ``op`` as a face-weighted stencil; only ``-Delta_h`` multiples qualify."""
    if isinstance(op, MobilityStencil):
        return op
    lap = build_neg_laplacian(grid).multipliers
    m = op.symbol.multipliers
    scale = m[1, 0] / lap[1, 0] if lap[1, 0] else 0.0
    if not np.allclose(m, scale * lap, rtol=1e-12, atol=1e-12 * np.abs(lap).max()):
        raise ValueError("operator is not a multiple of the 5-point Laplacian")
    ones = np.full(grid.shape, float(scale))
    return MobilityStencil(grid, ones, ones.copy())


@dataclass(frozen=True, eq=False)
class RDModel:
    """One reaction-diffusion problem instance on a periodic grid.

    ``l_precond`` is the Fourier surrogate of ``l_op`` used wherever a spectral
    inverse is needed; it equals ``l_op``'s symbol when ``l_op`` is spectral.
    """

    name: str
    grid: Grid2D
    a: float
    b: float
    g_op: LinearOp
    l_op: LinearOp
    l_precond: SpectralDiag
    reaction: ReactionSpec
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"coefficients must be non-negative, got a={self.a}, b={self.b}")

    @property
    def g_symbol(self) -> SpectralDiag:
        if not isinstance(self.g_op, SpectralOp):
            raise TypeError("G_h has no Fourier symbol")
        return self.g_op.symbol

    @property
    def surrogate(self) -> bool:
        """True when some operator is only represented spectrally by an approximation."""
        return not (isinstance(self.g_op, SpectralOp) and isinstance(self.l_op, SpectralOp))

    @property
    def ac_type(self) -> bool:
        return isinstance(self.g_op, SpectralOp) and self.g_op.identity

    @property
    def ch_type(self) -> bool:
        return (
            isinstance(self.g_op, SpectralOp)
            and isinstance(self.l_op, SpectralOp)
            and np.array_equal(self.g_op.symbol.multipliers, self.l_op.symbol.multipliers)
        )

    def sigma_faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Face mobilities for the free energy; unit mobility unless L is a stencil."""
        if isinstance(self.l_op, MobilityStencil):
            return self.l_op.sigma_x, self.l_op.sigma_y
        ones = np.ones(self.grid.shape)
        return ones, ones


MODEL_KINDS = ("allen_cahn", "cahn_hilliard", "var_coeff", "sixth_order")
_DEFAULT_EPS0 = {"allen_cahn": 0.01, "cahn_hilliard": 0.1, "var_coeff": 0.01, "sixth_order": 0.18}


def build_model(kind: str, eps0: float | None = None, mu: float = 5.0, n_x: int = 64) -> RDModel:
    """Construct one of the preset models.

    Domains are ``[0, 0.5]^2`` for Allen-Cahn and ``[0, 2 pi]^2`` otherwise.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    eps0 = _DEFAULT_EPS0[kind] if eps0 is None else float(eps0)
    if eps0 <= 0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    reaction = double_well()
    params = {"eps0": eps0}

    if kind == "allen_cahn":
        grid = Grid2D(n_x, 0.5)
        lap = build_neg_laplacian(grid)
        return RDModel(kind, grid, eps0, 1.0 / eps0, SpectralOp(identity_symbol(grid)), SpectralOp(lap), lap, reaction, params)

    grid = Grid2D(n_x, 2.0 * np.pi)
    lap = build_neg_laplacian(grid)
    if kind == "cahn_hilliard":
        return RDModel(kind, grid, eps0**2, 1.0, SpectralOp(lap), SpectralOp(lap), lap, reaction, params)

    if kind == "var_coeff":
        params["mu"] = mu

        def sigma(x, y):
            return 1.0 + 0.5 * mu * (np.sin(x) ** 2 + np.sin(y) ** 2)

        stencil = MobilityStencil.from_function(grid, sigma)
        sigma_bar = 1.0 + 0.5 * mu
        params["sigma_bar"] = sigma_bar
        return RDModel(kind, grid, eps0, 1.0 / eps0, SpectralOp(identity_symbol(grid)), stencil, sigma_bar * lap, reaction, params)

    # sixth order: G ~ Delta_h (eps^2 Delta_h - W''(+-1) + eps^2) -> lam (eps^2 lam + 2 - eps^2)
    e2 = eps0**2
    g = lap.map(lambda lam: lam * (e2 * lam + 2.0 - e2))
    if np.any(g.multipliers < 0):
        raise ValueError(f"sixth-order G symbol is negative for eps0={eps0}")
    l_sym = e2 * lap
    return RDModel(kind, grid, 1.0, 1.0, SpectralOp(g), SpectralOp(l_sym), l_sym, reaction, params)


def _mollified_bump(s: np.ndarray, eps: float = 0.1) -> np.ndarray:
    out = np.zeros_like(s)
    neg = s < 0
    out[neg] = 2.0 * np.exp(-(eps**2) / s[neg] ** 2)
    return out


_SEVEN_CIRCLES = [
    (np.pi / 2, np.pi / 2, np.pi / 5),
    (np.pi / 4, 3 * np.pi / 4, 2 * np.pi / 15),
    (np.pi / 2, 5 * np.pi / 4, np.pi / 15),
    (np.pi, np.pi / 4, np.pi / 10),
    (3 * np.pi / 2, np.pi / 4, np.pi / 10),
    (np.pi, np.pi, np.pi / 4),
    (3 * np.pi / 2, 3 * np.pi / 2, np.pi / 4),
]


def initial_condition(model: RDModel) -> np.ndarray:
    """The benchmark initial field associated with each preset."""
    x, y = model.grid.coords()
    kind = model.name
    if kind == "allen_cahn":
        inside = (x - 0.25) ** 2 + (y - 0.25) ** 2 < 0.2**2
        return np.where(inside, 1.0, -1.0)
    if kind == "cahn_hilliard":
        u = -np.ones_like(x)
        for xc, yc, r in _SEVEN_CIRCLES:
            u += _mollified_bump(np.sqrt((x - xc) ** 2 + (y - yc) ** 2) - r)
        return u
    if kind == "var_coeff":
        return 0.5 * (np.cos(4 * x) + np.cos(4 * y))
    if kind == "sixth_order":
        s = np.sin(x) + np.sin(y)
        return 2.0 * np.exp(s - 2.0) + 2.2 * np.exp(-s - 2.0) - 1.0
    raise ValueError(f"no initial condition for model {kind!r}")
