"""Centered finite-difference weights for the approximate Taylor recurrences.

The weights are found by solving the moment system

    sum_j beta_j * j**m = p! * [m == p],    m = 0, ..., 2*gamma

over the symmetric offsets j = -gamma..gamma, with gamma = ceil(p/2) + q - 1.
The system is solved exactly over the rationals, so the stored weights are
correctly rounded in whatever floating type the integrators run in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial

import numpy as np

__all__ = ["StencilWeights", "make_stencil", "stencil_for", "half_width"]


def half_width(p: int, q: int) -> int:
    """Half-width of the minimal symmetric stencil for the p-th derivative to order 2q."""
    return (p + 1) // 2 + q - 1


def _solve_rational(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    # Gaussian elimination with partial pivoting on exact rationals.
    n = len(rhs)
    a = [row[:] + [b] for row, b in zip(matrix, rhs)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[piv][col] == 0:
            raise ArithmeticError("singular moment system")
        a[col], a[piv] = a[piv], a[col]
        for r in range(col + 1, n):
            factor = a[r][col] / a[col][col]
            if factor:
                for c in range(col, n + 1):
                    a[r][c] -= factor * a[col][c]
    x = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        s = a[r][n] - sum(a[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / a[r][r]
    return x


@dataclass(frozen=True)
class StencilWeights:
    """Weights of the centered operator approximating a ``derivative_order``-th
    derivative to order ``2 * accuracy_pairs`` on a unit grid.

    ``exact[i]`` is the rational weight at offset ``i - half_width``; the
    center weight is kept even when it vanishes.
    """

    derivative_order: int
    accuracy_pairs: int
    half_width: int
    exact: tuple[Fraction, ...]
    weights: np.ndarray = field(repr=False, compare=False)

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    @property
    def order(self) -> int:
        return 2 * self.accuracy_pairs

    def as_dtype(self, dtype) -> np.ndarray:
        """Weights rounded directly from the rationals into ``dtype``."""
        dtype = np.dtype(dtype)
        if dtype == np.float64:
            return self.weights
        return np.array([_fraction_to(w, dtype) for w in self.exact], dtype=dtype)

    def apply(self, values: np.ndarray, h: float) -> np.ndarray:
        """h**-p * sum_j beta_j * values[j], summing over the leading axis."""
        w = self.as_dtype(np.asarray(values).dtype if np.asarray(values).dtype.kind == "f" else np.float64)
        return np.tensordot(w, values, axes=(0, 0)) / h**self.derivative_order


def _fraction_to(x: Fraction, dtype: np.dtype):
    num = dtype.type(x.numerator)
    den = dtype.type(x.denominator)
    return num / den


@lru_cache(maxsize=None)
def make_stencil(p: int, q: int) -> StencilWeights:
    """Minimal symmetric stencil approximating the p-th derivative to order 2q.

    >>> [float(w) for w in make_stencil(1, 1).exact]
    [-0.5, 0.0, 0.5]
    """
    if int(p) != p or p < 1:
        raise ValueError(f"derivative order must be a positive integer, got {p!r}")
    if int(q) != q or q < 1:
        raise ValueError(f"accuracy pairs must be a positive integer, got {q!r}")
    p, q = int(p), int(q)
    gamma = half_width(p, q)
    offsets = range(-gamma, gamma + 1)
    moments = [[Fraction(j) ** m for j in offsets] for m in range(2 * gamma + 1)]
    rhs = [Fraction(factorial(p)) if m == p else Fraction(0) for m in range(2 * gamma + 1)]
    exact = tuple(_solve_rational(moments, rhs))
    weights = np.array([float(w) for w in exact])
    weights.setflags(write=False)
    return StencilWeights(p, q, gamma, exact, weights)


def stencil_for(k: int, R: int) -> StencilWeights:
    """Stencil used for the (k+1)-th derivative approximant of an order-R method."""
    if not 1 <= k <= R - 1:
        raise ValueError(f"Taylor stage k={k} outside [1, {R - 1}] for order R={R}")
    return make_stencil(k, (R - k + 1) // 2)
