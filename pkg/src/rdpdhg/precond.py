"""Block lower-bidiagonal preconditioner ``M`` (the linear part of ``F``).

``M`` has ``X = I + h_t (a G L + b c G)`` on the diagonal and ``-I`` below it.
``X`` is diagonal in Fourier space, so the block substitutions for ``M^{-1}``
and ``M^{-T}`` run entirely on transformed coefficients: one batched forward
FFT, an ``n_t``-step recurrence, one batched inverse FFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .equations import RDModel
from .spectral import SpectralDiag, fft_workers

__all__ = [
    "Precond",
    "build_precond",
    "apply_M",
    "apply_M_inverse",
    "apply_M_inverse_transpose",
    "apply_M_transpose",
]


@dataclass(frozen=True, eq=False)
class Precond:
    x_symbol: SpectralDiag
    n_t: int
    h_t: float
    _inv_half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = self.x_symbol.multipliers
        if np.any(x == 0):
            raise ZeroDivisionError("preconditioner block X is singular")
        n = x.shape[1]
        object.__setattr__(self, "_inv_half", 1.0 / x[:, : n // 2 + 1])

    @property
    def is_identity(self) -> bool:
        return self.n_t == 1 and self.x_symbol.is_identity()

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.n_t or v.shape[1:] != self.x_symbol.multipliers.shape:
            raise ValueError(
                f"space-time vector has shape {v.shape}, expected {(self.n_t,) + self.x_symbol.multipliers.shape}"
            )
        return v


def build_precond(model: RDModel, n_t: int, h_t: float) -> Precond:
    """``x(k,l) = 1 + h_t (a g l + b c g)`` from G's symbol and the L surrogate."""
    g = model.g_symbol.multipliers
    lsym = model.l_precond.multipliers
    c = model.reaction.c
    x = 1.0 + h_t * (model.a * g * lsym + model.b * c * g)
    return Precond(SpectralDiag(x), n_t, h_t)


def apply_M(pc: Precond, v: np.ndarray) -> np.ndarray:
    v = pc._check(v)
    out = pc.x_symbol.apply(v)
    out[1:] -= v[:-1]
    return out


def apply_M_transpose(pc: Precond, v: np.ndarray) -> np.ndarray:
    v = pc._check(v)
    out = pc.x_symbol.apply(v)
    out[:-1] -= v[1:]
    return out


def _substitute(pc: Precond, v: np.ndarray, reverse: bool) -> np.ndarray:
    w = fft_workers()
    spec = sfft.rfft2(v, workers=w)
    inv = pc._inv_half
    order = range(pc.n_t - 1, -1, -1) if reverse else range(pc.n_t)
    prev = None
    for t in order:
        if prev is not None:
            spec[t] += spec[prev]
        spec[t] *= inv
        prev = t
    return sfft.irfft2(spec, s=v.shape[-2:], workers=w)


def apply_M_inverse(pc: Precond, v: np.ndarray) -> np.ndarray:
    """Forward substitution ``w_0 = X^{-1} v_0``, ``w_t = X^{-1}(v_t + w_{t-1})``."""
    return _substitute(pc, pc._check(v), reverse=False)


def apply_M_inverse_transpose(pc: Precond, v: np.ndarray) -> np.ndarray:
    """Backward substitution ``w_{T} = X^{-1} v_T``, ``w_t = X^{-1}(v_t + w_{t+1})``."""
    return _substitute(pc, pc._check(v), reverse=True)
