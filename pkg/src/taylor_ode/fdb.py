"""Faa di Bruno combinatorics for derivatives of f(u(t)).

Derivative chains are passed as callables ``f_derivs(u, n)`` returning the
sequence ``[f(u), f'(u), ..., f^(n)(u)]``.  Jets are sequences
``(z_0, z_1, ..., z_r)`` where ``z_k`` stands for the k-th time derivative of
``u`` at the expansion point.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "PartitionIndex",
    "partitions",
    "partition_table",
    "jet_matrix",
    "derivative_action",
    "fdb_sum",
    "fdb_sum_partials",
    "fdb_derivative",
    "fdb_partials",
    "DerivChain",
]

DerivChain = Callable[[object, int], Sequence]


@dataclass(frozen=True)
class PartitionIndex:
    """Multi-index s with sum_nu nu * s_nu == order."""

    s: tuple[int, ...]

    @property
    def order(self) -> int:
        return len(self.s)

    @property
    def magnitude(self) -> int:
        return sum(self.s)

    @property
    def weight(self) -> int:
        w = factorial(self.order)
        for sv in self.s:
            w //= factorial(sv)
        return w


def _compositions(r: int, largest: int) -> list[tuple[int, ...]]:
    # Multiplicity vectors (s_1..s_largest) with sum nu*s_nu == r.
    if largest == 0:
        return [()] if r == 0 else []
    out = []
    for count in range(r // largest, -1, -1):
        for rest in _compositions(r - count * largest, largest - 1):
            out.append(rest + (count,))
    return out


@lru_cache(maxsize=None)
def partitions(r: int) -> tuple[PartitionIndex, ...]:
    """All s in N_0^r with sum_nu nu*s_nu == r, e.g. r=3 gives (3,0,0), (1,1,0), (0,0,1)."""
    if int(r) != r or r < 1:
        raise ValueError(f"partition order must be a positive integer, got {r!r}")
    return tuple(PartitionIndex(s) for s in _compositions(int(r), int(r)))


@lru_cache(maxsize=None)
def partition_table(r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised view of ``partitions(r)``: (S, magnitudes, weights).

    ``S`` has one row per partition and r columns.
    """
    parts = partitions(r)
    S = np.array([p.s for p in parts], dtype=np.int64)
    mags = S.sum(axis=1)
    weights = np.array([p.weight for p in parts], dtype=np.int64)
    for a in (S, mags, weights):
        a.setflags(write=False)
    return S, mags, weights


def jet_matrix(s: Sequence[int], jet: Sequence) -> np.ndarray:
    """M x |s| matrix whose columns are z_j / j!, each repeated s_j times."""
    cols = []
    for j, sj in enumerate(s, start=1):
        col = np.atleast_1d(np.asarray(jet[j])) / factorial(j)
        cols.extend([col] * sj)
    if not cols:
        return np.zeros((np.atleast_1d(np.asarray(jet[0])).size, 0))
    return np.stack(cols, axis=1)


def derivative_action(tensor: np.ndarray, A: np.ndarray) -> np.ndarray:
    """f^(k) . A: contract the k input axes of a derivative tensor with the columns of A.

    ``tensor`` has shape (M,) * (k + 1), output index first; ``A`` is M x k.
    """
    k = A.shape[1]
    if tensor.ndim != k + 1:
        raise ValueError(f"derivative tensor with {tensor.ndim} axes cannot act on {k} columns")
    out = tensor
    for col in range(k - 1, -1, -1):
        out = out @ A[:, col]
    return out


def _scaled_jet(r: int, jet: Sequence) -> np.ndarray:
    return np.array([jet[j] / factorial(j) for j in range(1, r + 1)])


def _derivs_at(f_derivs: DerivChain, z0, n: int) -> np.ndarray:
    d = np.asarray(f_derivs(z0, n))
    if d.shape[0] < n + 1:
        raise ValueError(f"derivative chain returned {d.shape[0]} terms, need {n + 1}")
    return d


def fdb_sum(r: int, derivs: np.ndarray, jet: Sequence) -> object:
    """r-th derivative of f(u(t)) from precomputed ``derivs[m] = f^(m)(z_0)``."""
    S, mags, weights = partition_table(r)
    c = _scaled_jet(r, jet)
    return np.sum(weights * derivs[mags] * np.prod(c ** S, axis=1))


def fdb_sum_partials(r: int, derivs: np.ndarray, jet: Sequence) -> np.ndarray:
    """Gradient of ``fdb_sum`` with respect to (z_0, ..., z_r); needs derivs up to order r+1."""
    S, mags, weights = partition_table(r)
    c = _scaled_jet(r, jet)
    powers = c ** S
    out = np.empty(r + 1, dtype=np.result_type(derivs.dtype, c.dtype))
    out[0] = np.sum(weights * derivs[mags + 1] * np.prod(powers, axis=1))
    base = weights * derivs[mags]
    for j in range(1, r + 1):
        sj = S[:, j - 1]
        lowered = powers.copy()
        lowered[:, j - 1] = c[j - 1] ** np.maximum(sj - 1, 0)
        out[j] = np.sum(base * sj * np.prod(lowered, axis=1)) / factorial(j)
    return out


def fdb_derivative(r: int, f_derivs: DerivChain, jet: Sequence):
    """d^r/dt^r f(u(t)) for scalar u, evaluated from the jet (z_0, ..., z_r).

    Parameters
    ----------
    r : int
        Derivative order, r >= 1.
    f_derivs : callable
        ``f_derivs(u, n)`` -> ``[f(u), f'(u), ..., f^(n)(u)]``.
    jet : sequence
        ``z_0, ..., z_r`` with ``z_k`` the k-th derivative of u.
    """
    if r < 1:
        raise ValueError(f"derivative order must be >= 1, got {r}")
    derivs = _derivs_at(f_derivs, jet[0], r)
    return fdb_sum(r, derivs, jet)


def fdb_partials(r: int, f_derivs: DerivChain, jet: Sequence) -> np.ndarray:
    """Partials of ``fdb_derivative`` with respect to z_0, z_1, ..., z_r."""
    if r < 1:
        raise ValueError(f"derivative order must be >= 1, got {r}")
    derivs = _derivs_at(f_derivs, jet[0], r + 1)
    return fdb_sum_partials(r, derivs, jet)
