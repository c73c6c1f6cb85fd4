"""CSR matrices, Jacobi-preconditioned conjugate gradients and the dual norm.

Matrix-vector products are delegated to ``scipy.sparse``, whose CSR kernel
sums each row sequentially in stored column order, so results are
bit-reproducible for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearSolverError",
    "SparseMatrixCSR",
    "spmv",
    "cg_solve",
    "dual_norm",
    "CGResult",
]


class LinearSolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class SparseMatrixCSR:
    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.asarray(self.row_offsets, dtype=np.int64)
        ci = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        if len(ro) != self.nrows + 1 or ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(vals):
            raise ValueError("inconsistent CSR arrays")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row offsets must be non-decreasing")
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrixCSR":
        """Build from triplets; duplicates are summed in input order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        nrows, ncols = shape
        key = rows * ncols + cols
        uniq, inv = np.unique(key, return_inverse=True)
        merged = np.bincount(inv.ravel(), weights=vals, minlength=len(uniq))
        r, c = np.divmod(uniq, ncols)
        offsets = np.zeros(nrows + 1, dtype=np.int64)
        np.add.at(offsets, r + 1, 1)
        return cls(nrows, ncols, np.cumsum(offsets), c, merged)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrixCSR":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrixCSR":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrixCSR":
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def diagonal(self) -> np.ndarray:
        return self.scipy.diagonal()

    def same_pattern(self, other: "SparseMatrixCSR") -> bool:
        return (
            self.shape == other.shape
            and (self.row_offsets is other.row_offsets or np.array_equal(self.row_offsets, other.row_offsets))
            and (self.col_indices is other.col_indices or np.array_equal(self.col_indices, other.col_indices))
        )

    def with_values(self, values) -> "SparseMatrixCSR":
        return SparseMatrixCSR(self.nrows, self.ncols, self.row_offsets, self.col_indices, values)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        d = self.scipy - self.scipy.T
        scale = max(np.abs(self.values).max(initial=0.0), 1.0)
        return bool(np.abs(d.data).max(initial=0.0) <= tol * scale)

    def has_sorted_rows(self) -> bool:
        ci, ro = self.col_indices, self.row_offsets
        if len(ci) < 2:
            return True
        inc = np.diff(ci) > 0
        # positions where a new row starts are exempt
        boundaries = ro[1:-1] - 1
        boundaries = boundaries[(boundaries >= 0) & (boundaries < len(inc))]
        inc[boundaries] = True
        return bool(inc.all())

    def __add__(self, other: "SparseMatrixCSR") -> "SparseMatrixCSR":
        if self.same_pattern(other):
            return self.with_values(self.values + other.values)
        return SparseMatrixCSR.from_scipy(self.scipy + other.scipy)

    def __sub__(self, other: "SparseMatrixCSR") -> "SparseMatrixCSR":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "SparseMatrixCSR":
        return self.with_values(float(scalar) * self.values)

    __rmul__ = __mul__

    def __matmul__(self, x):
        return spmv(self, x)

    @property
    def T(self) -> "SparseMatrixCSR":
        return SparseMatrixCSR.from_scipy(self.scipy.T)


def spmv(A: SparseMatrixCSR, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.ncols:
        raise ValueError(f"dimension mismatch: matrix has {A.ncols} columns, vector has {x.shape[0]} entries")
    return A.scipy @ x


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(
    A: SparseMatrixCSR,
    b,
    tol: float = 1e-12,
    max_iter: int | None = None,
    x0=None,
    check_symmetry: bool = False,
    full_output: bool = False,
):
    """Jacobi-preconditioned CG; stops when ||Ax - b|| <= tol ||b||.

    Raises LinearSolverError on a zero diagonal or if ``max_iter`` is reached.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (A.nrows,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.nrows},)")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    if check_symmetry and not A.is_symmetric(1e-12):
        raise LinearSolverError("matrix is not symmetric")
    diag = A.diagonal()
    if np.any(diag == 0):
        raise LinearSolverError("zero diagonal entry; Jacobi preconditioner undefined")
    inv_diag = 1.0 / diag
    if max_iter is None:
        max_iter = max(10 * A.nrows, 100)

    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        out = CGResult(np.zeros_like(b), 0, 0.0)
        return out if full_output else out.x
    r = b - spmv(A, x)
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r)
    k = 0
    while res > tol * bnorm:
        if k >= max_iter:
            raise LinearSolverError(
                f"CG did not converge in {max_iter} iterations (relative residual {res / bnorm:.3e})",
                residual=res / bnorm,
                iterations=k,
            )
        Ap = spmv(A, p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        k += 1
        res = np.linalg.norm(r)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    out = CGResult(x, k, res / bnorm)
    return out if full_output else out.x


def dual_norm(M: SparseMatrixCSR, S: SparseMatrixCSR, r, tol: float = 1e-12) -> float:
    """sqrt(w^T (S + M)^{-1} w) with w = M r."""
    w = spmv(M, r)
    if not np.any(w):
        return 0.0
    y = cg_solve(S + M, w, tol=tol)
    return float(np.sqrt(max(w @ y, 0.0)))
