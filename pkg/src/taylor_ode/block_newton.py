"""Structured solve of the AIT Newton system.

The Jacobian has the block form

    [ F00    F0,1:R  ] [ d0    ]     [ F0    ]
    [ F1:R,0 F1:R,1:R] [ d1:R  ] = - [ F1:R  ]

where F1:R,1:R is block lower triangular with -I on its diagonal.  Block
forward substitution gives A = F1:R,1:R^-1 F1:R and B = F1:R,1:R^-1 F1:R,0,
after which only the M x M Schur complement F00 - F0,1:R B is factorised.

Everything here works for any numpy floating dtype, including ``longdouble``,
which is why the LU kernel is kept in-repo.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NewtonBreakdown, SingularMatrixError

__all__ = [
    "BlockJacobian",
    "NewtonStats",
    "OpCounter",
    "lu_factor",
    "lu_solve_factored",
    "lu_solve",
    "forward_B",
    "forward_A",
    "SchurFactor",
    "schur_factor",
    "schur_solve",
    "newton_update",
    "op_count",
    "assemble_dense",
]

PIVOT_FLOOR = 1e-300
SCHUR_RTOL = 1e-14


@dataclass
class BlockJacobian:
    """(R+1) x (R+1) grid of M x M blocks, stored as an array of shape (R+1, R+1, M, M).

    Only the first block row and the lower triangle of the trailing rows are
    ever read by the structured solver.
    """

    blocks: np.ndarray

    def __post_init__(self):
        b = self.blocks
        if b.ndim != 4 or b.shape[0] != b.shape[1] or b.shape[2] != b.shape[3]:
            raise ValueError(f"blocks must have shape (R+1, R+1, M, M), got {b.shape}")

    @property
    def order(self) -> int:
        return self.blocks.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.blocks.shape[2]

    def __getitem__(self, key):
        return self.blocks[key]

    def check_structure(self, atol: float = 0.0) -> bool:
        """True if the trailing rows are block lower triangular with -I diagonal."""
        R, M = self.order, self.dim
        eye = np.eye(M)
        for k in range(1, R + 1):
            if np.max(np.abs(self.blocks[k, k] + eye)) > atol:
                return False
            for l in range(k + 1, R + 1):
                if np.max(np.abs(self.blocks[k, l]), initial=0.0) > atol:
                    return False
        return True


@dataclass
class NewtonStats:
    iterations: int = 0
    final_residual: float = 0.0
    converged: bool = False


@dataclass
class OpCounter:
    """Tallies of M x M block products and LU factorisations."""

    forward_products: int = 0
    schur_products: int = 0
    lu_factorizations: int = 0

    @property
    def block_products(self) -> int:
        return self.forward_products + self.schur_products

    def reset(self):
        self.forward_products = self.schur_products = self.lu_factorizations = 0


def op_count(R: int, M: int) -> OpCounter:
    """Per-iteration tallies the structured solve must hit exactly.

    (R^2 - R)/2 products in the forward substitution for B, R products to form
    F0,1:R B, and one LU factorisation of the M x M Schur complement.  The
    count does not depend on M; it is taken only for the cost model.
    """
    if R < 1 or M < 1:
        raise ValueError("R and M must be >= 1")
    return OpCounter(forward_products=(R * R - R) // 2, schur_products=R, lu_factorizations=1)


def lu_factor(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-pivoted LU of a square matrix; returns (packed LU, permutation)."""
    A = np.array(A, copy=True)
    if A.dtype.kind not in "fc":
        A = A.astype(np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"lu_factor needs a square matrix, got shape {A.shape}")
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.abs(A[k:, k]).argmax())
        if not abs(A[p, k]) >= PIVOT_FLOOR:
            raise SingularMatrixError(f"pivot {abs(A[p, k])!r} in column {k}")
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            col = A[k + 1:, k] / A[k, k]
            A[k + 1:, k] = col
            A[k + 1:, k + 1:] -= col[:, None] * A[k, k + 1:]
    return A, perm


def lu_solve_factored(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    b = np.asarray(rhs)
    x = np.array(b[perm], dtype=np.result_type(lu.dtype, b.dtype), copy=True)
    n = lu.shape[0]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= lu[i, i + 1:] @ x[i + 1:]
        x[i] /= lu[i, i]
    return x


def lu_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve A X = rhs by LU with partial pivoting; rhs may be a vector or n x m."""
    A = np.asarray(A)
    rhs = np.asarray(rhs)
    if rhs.shape[0] != A.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {A.shape[0]}")
    lu, perm = lu_factor(A)
    return lu_solve_factored(lu, perm, rhs)


def forward_B(jac: BlockJacobian, counter: OpCounter | None = None) -> np.ndarray:
    """B_k = -F_k0 + sum_{i<k} F_ki B_i for k = 1..R; returns shape (R, M, M)."""
    F = jac.blocks
    R = jac.order
    B = np.empty((R,) + F.shape[2:], dtype=F.dtype)
    B[0] = -F[1, 0]
    for k in range(2, R + 1):
        # k-1 block products F_ki B_i, i = 1..k-1, batched
        B[k - 1] = (F[k, 1:k] @ B[: k - 1]).sum(axis=0) - F[k, 0]
    if counter is not None:
        counter.forward_products += (R * R - R) // 2
    return B


def forward_A(jac: BlockJacobian, residual_blocks: np.ndarray) -> np.ndarray:
    """A_k = -F_k + sum_{i<k} F_ki A_i for k = 1..R, with F_k = residual_blocks[k-1]."""
    F = jac.blocks
    R = jac.order
    res = np.asarray(residual_blocks)
    A = np.empty((R, F.shape[2]), dtype=np.result_type(F.dtype, res.dtype))
    A[0] = -res[0]
    for k in range(2, R + 1):
        A[k - 1] = np.einsum("iab,ib->a", F[k, 1:k], A[: k - 1]) - res[k - 1]
    return A


@dataclass
class SchurFactor:
    """Residual-independent part of the structured solve, reusable for chord steps."""

    B: np.ndarray
    lu: np.ndarray
    perm: np.ndarray


def schur_factor(jac: BlockJacobian, counter: OpCounter | None = None) -> SchurFactor:
    """Form B and factorise the Schur complement F00 - F0,1:R B.

    Raises NewtonBreakdown if the Schur complement is singular relative to
    its own infinity norm.
    """
    F = jac.blocks
    B = forward_B(jac, counter)
    schur = F[0, 0] - (F[0, 1:] @ B).sum(axis=0)
    if counter is not None:
        counter.schur_products += jac.order
        counter.lu_factorizations += 1
    scale = np.abs(schur).sum(axis=1).max()
    try:
        lu, perm = lu_factor(schur)
    except SingularMatrixError as exc:
        raise NewtonBreakdown(f"singular Schur complement: {exc}") from exc
    if not np.abs(lu.diagonal()).min() >= SCHUR_RTOL * scale:
        raise NewtonBreakdown("Schur complement is numerically singular")
    return SchurFactor(B, lu, perm)


def schur_solve(jac: BlockJacobian, factor: SchurFactor, residual: np.ndarray) -> np.ndarray:
    """Correction delta solving J delta = -F given a factorisation of J."""
    F = jac.blocks
    residual = np.asarray(residual)
    A = forward_A(jac, residual[1:])
    rhs = residual[0] - np.einsum("lab,lb->a", F[0, 1:], A)
    delta = np.empty((jac.order + 1, F.shape[2]), dtype=np.result_type(F.dtype, residual.dtype))
    delta[0] = -lu_solve_factored(factor.lu, factor.perm, rhs)
    delta[1:] = -(A + factor.B @ delta[0])
    return delta


def newton_update(jac: BlockJacobian, residual: np.ndarray,
                  counter: OpCounter | None = None) -> np.ndarray:
    """Newton correction delta solving J delta = -F, returned with shape (R+1, M).

    Raises NewtonBreakdown if the Schur complement F00 - F0,1:R B is singular
    relative to its own infinity norm.
    """
    return schur_solve(jac, schur_factor(jac, counter), residual)


def assemble_dense(jac: BlockJacobian) -> np.ndarray:
    """Full (R+1)M x (R+1)M matrix; only for checks and oracles."""
    n, _, M, _ = jac.blocks.shape
    return jac.blocks.transpose(0, 2, 1, 3).reshape(n * M, n * M)
