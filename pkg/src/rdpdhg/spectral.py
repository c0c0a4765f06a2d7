"""Periodic square grids and operators that are diagonal in the discrete Fourier basis.

Every operator built from the periodic 5-point Laplacian shares the Fourier modes
as eigenvectors, so it is stored as a table of per-mode multipliers and applied
with a pair of FFTs.  The forward transform is unnormalized and the inverse
carries the ``1/n_x**2`` factor (numpy/scipy ``norm="backward"``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid2D",
    "SpectralDiag",
    "PoleError",
    "build_neg_laplacian",
    "identity_symbol",
    "apply_symbol",
    "fft_workers",
]


def fft_workers() -> int:
    """Worker count for scipy.fft, capped by ``RD_PDHG_THREADS`` when set."""
    env = os.environ.get("RD_PDHG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


class PoleError(ZeroDivisionError):
    """A spectral function was evaluated at one of its poles."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform ``n_x`` by ``n_x`` grid on the periodic square ``[0, length]^2``."""

    n_x: int
    length: float

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 2:
            raise ValueError(f"n_x must be an integer >= 2, got {self.n_x}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def h_x(self) -> float:
        return self.length / self.n_x

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_x)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``; axis 0 runs along x, axis 1 along y."""
        x = np.arange(self.n_x) * self.h_x
        return np.meshgrid(x, x, indexing="ij")

    def cell_area(self) -> float:
        return self.h_x * self.h_x


@dataclass(frozen=True, eq=False)
class SpectralDiag:
    """Per-mode real multipliers of an operator diagonal in the Fourier basis.

    ``multipliers[k, l]`` is the eigenvalue on mode ``(k, l)`` for
    ``k, l in 0..n_x-1``.  Every table built here is even under
    ``k -> n_x - k`` so the half-spectrum used by the real FFT is sufficient.
    """

    multipliers: np.ndarray
    _half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.multipliers, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("multipliers must be a square 2-D array")
        if not np.all(np.isfinite(m)):
            raise ValueError("multipliers must be finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "multipliers", m)
        object.__setattr__(self, "_half", m[:, : m.shape[1] // 2 + 1])

    @property
    def n_x(self) -> int:
        return self.multipliers.shape[0]

    def map(self, g: Callable[[np.ndarray], np.ndarray]) -> "SpectralDiag":
        """Symbol of ``g(op)``; raises PoleError if g is not finite on every mode."""
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.asarray(g(self.multipliers), dtype=float)
        vals = np.broadcast_to(vals, self.multipliers.shape)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise PoleError(
                f"spectral function is not finite on mode {tuple(int(i) for i in bad)} "
                f"(multiplier {self.multipliers[tuple(bad)]!r})"
            )
        return SpectralDiag(vals)

    def __mul__(self, other):
        if isinstance(other, SpectralDiag):
            return SpectralDiag(self.multipliers * other.multipliers)
        return SpectralDiag(self.multipliers * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, SpectralDiag):
            return SpectralDiag(self.multipliers + other.multipliers)
        return SpectralDiag(self.multipliers + float(other))

    __radd__ = __add__

    def is_identity(self) -> bool:
        return bool(np.all(self.multipliers == 1.0))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply the operator to a field or to a stack of fields (last two axes)."""
        return _apply_half(self._half, values)

    def solve(self, values: np.ndarray) -> np.ndarray:
        """Apply the inverse operator; raises PoleError on a zero multiplier."""
        return self.map(lambda lam: 1.0 / lam).apply(values)


def _apply_half(half: np.ndarray, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if values.shape[-2:] != (half.shape[0], n) or half.shape[1] != n // 2 + 1:
        raise ValueError(
            f"field shape {values.shape[-2:]} does not match operator grid "
            f"{(half.shape[0], half.shape[0])}"
        )
    w = fft_workers()
    spec = sfft.rfft2(values, workers=w)
    spec *= half
    return sfft.irfft2(spec, s=values.shape[-2:], workers=w)


def build_neg_laplacian(grid: Grid2D) -> SpectralDiag:
    """Symbol of the periodic 5-point operator ``-Delta_h``.

    ``(4/h^2) * (sin^2(pi k/n) + sin^2(pi l/n))``; zero on the constant mode.
    """
    k = np.arange(grid.n_x)
    s = (4.0 / grid.h_x**2) * np.sin(np.pi * k / grid.n_x) ** 2
    return SpectralDiag(s[:, None] + s[None, :])


def identity_symbol(grid: Grid2D) -> SpectralDiag:
    return SpectralDiag(np.ones(grid.shape))


def apply_symbol(op: SpectralDiag, g: Callable[[np.ndarray], np.ndarray], values: np.ndarray) -> np.ndarray:
    """Return ``IFFT(g(multipliers) * FFT(values))`` as a real array.

    ``g`` acts elementwise on the multiplier table, e.g. ``lambda lam: lam`` applies
    the operator and ``lambda lam: 1/(1 + a*lam)`` a shifted inverse.
    """
    return op.map(g).apply(values)
