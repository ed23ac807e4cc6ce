"""Dense and sparse linear algebra kernels.

Dense matrices are plain 2-D numpy arrays. Sparse matrices use a minimal
CSR container with deterministic assembly from COO triplets. The
eigensolver is a cyclic Jacobi iteration (the matrices it sees are small,
dense and symmetric), the sparse iterative solver is BiCGStab with an
optional Jacobi preconditioner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SingularMatrixError(Exception):
    """Raised when a direct solve meets a pivot at working precision zero."""

    def __init__(self, pivot: float):
        super().__init__(f"matrix is singular to working precision (pivot {pivot:.3e})")
        self.pivot = pivot


class ConvergenceError(Exception):
    """Raised when an iterative solver fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# sparse storage
# ---------------------------------------------------------------------------


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix with sorted column indices per row."""

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.row_offsets) != self.rows + 1:
            raise ValueError("row_offsets must have length rows + 1")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(self.col_indices) != len(self.values):
            raise ValueError("col_indices and values must have equal length")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.cols
        ):
            raise ValueError("column index out of range")

    @property
    def nnz(self) -> int:
        return len(self.values)

    # row index per stored entry; cached because matvec needs it repeatedly
    _row_of_entry: np.ndarray | None = field(default=None, repr=False, compare=False)

    def row_indices(self) -> np.ndarray:
        if self._row_of_entry is None:
            self._row_of_entry = np.repeat(
                np.arange(self.rows, dtype=np.int64), np.diff(self.row_offsets)
            )
        return self._row_of_entry

    @staticmethod
    def from_coo(rows: int, cols: int, ri, ci, vals) -> "CsrMatrix":
        """Build CSR from triplets, summing duplicates, columns sorted per row."""
        ri = np.asarray(ri, dtype=np.int64)
        ci = np.asarray(ci, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((ci, ri))
        ri, ci, vals = ri[order], ci[order], vals[order]
        if len(ri):
            new = np.ones(len(ri), dtype=bool)
            new[1:] = (ri[1:] != ri[:-1]) | (ci[1:] != ci[:-1])
            starts = np.flatnonzero(new)
            summed = np.add.reduceat(vals, starts)
            ri, ci, vals = ri[starts], ci[starts], summed
        offsets = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(offsets, ri + 1, 1)
        offsets = np.cumsum(offsets)
        return CsrMatrix(rows, cols, offsets, ci, vals)

    @staticmethod
    def identity(n: int) -> "CsrMatrix":
        idx = np.arange(n, dtype=np.int64)
        return CsrMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return csr_matvec(self, x)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.row_indices(), self.col_indices] = self.values
        return out

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.rows, self.cols))
        on_diag = self.row_indices() == self.col_indices
        d[self.col_indices[on_diag]] = self.values[on_diag]
        return d

    def scaled(self, c: float) -> "CsrMatrix":
        return CsrMatrix(self.rows, self.cols, self.row_offsets, self.col_indices, c * self.values)


def csr_matvec(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector (or matrix-matrix, columnwise) product."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.cols:
        raise ValueError(f"dimension mismatch: matrix has {a.cols} cols, vector {x.shape[0]}")
    rows = a.row_indices()
    if x.ndim == 1:
        return np.bincount(rows, weights=a.values * x[a.col_indices], minlength=a.rows)
    out = np.zeros((a.rows, x.shape[1]))
    np.add.at(out, rows, a.values[:, None] * x[a.col_indices])
    return out


def block_csr(pattern: CsrMatrix, blocks: dict, n_blocks: int) -> CsrMatrix:
    """Assemble an (n_blocks x n_blocks) block matrix sharing one scalar pattern.

    ``blocks`` maps (bi, bj) to a value array aligned with ``pattern.values``;
    missing blocks are structurally zero.
    """
    n = pattern.rows
    ri = pattern.row_indices()
    ci = pattern.col_indices
    rr, cc, vv = [], [], []
    for (bi, bj), vals in sorted(blocks.items()):
        rr.append(ri + bi * n)
        cc.append(ci + bj * n)
        vv.append(np.asarray(vals, dtype=np.float64))
    return CsrMatrix.from_coo(
        n_blocks * n, n_blocks * n, np.concatenate(rr), np.concatenate(cc), np.concatenate(vv)
    )


# ---------------------------------------------------------------------------
# symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------


@dataclass
class EigenDecomposition:
    eigenvalues: np.ndarray  # sorted descending
    eigenvectors: np.ndarray  # columns aligned with eigenvalues


def sym_eigen(a: np.ndarray, max_sweeps: int = 50) -> EigenDecomposition:
    """Full spectrum of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("sym_eigen requires a square matrix")
    scale = np.linalg.norm(a)
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("sym_eigen requires a symmetric matrix")
    n = a.shape[0]
    A = 0.5 * (a + a.T)
    V = np.eye(n)
    if n == 1:
        return EigenDecomposition(A.diagonal().copy(), V)
    fro = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(A.diagonal()))
        if off <= 1e-15 * max(fro, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-18 * fro:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    lam = A.diagonal().copy()
    order = np.argsort(-lam, kind="stable")
    return EigenDecomposition(lam[order], V[:, order])


# ---------------------------------------------------------------------------
# dense direct solve
# ---------------------------------------------------------------------------


def dense_lu_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b by LU with partial pivoting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("dense_lu_solve requires a square matrix")
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("right-hand side does not conform")
    one_dim = b.ndim == 1
    lu = a.copy()
    x = b.reshape(n, -1).astype(np.float64).copy()
    tiny = 1e-300 + 1e-16 * np.linalg.norm(a)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[piv, k]) <= tiny:
            raise SingularMatrixError(abs(lu[piv, k]))
        if piv != k:
            lu[[k, piv]] = lu[[piv, k]]
            x[[k, piv]] = x[[piv, k]]
        m = lu[k + 1 :, k] / lu[k, k]
        lu[k + 1 :, k:] -= np.outer(m, lu[k, k:])
        x[k + 1 :] -= np.outer(m, x[k])
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1 :] @ x[k + 1 :]) / lu[k, k]
    return x[:, 0] if one_dim else x


# ---------------------------------------------------------------------------
# Krylov solve (BiCGStab)
# ---------------------------------------------------------------------------


def krylov_solve(
    a: CsrMatrix,
    b: np.ndarray,
    tol: float = 1e-12,
    max_iter: int | None = None,
    preconditioner: str = "jacobi",
    x0: np.ndarray | None = None,
):
    """BiCGStab iterate with ||a x - b|| <= tol * ||b||.

    Returns (x, iteration_count). Raises ConvergenceError on breakdown or
    iteration exhaustion.
    """
    if a.rows != a.cols:
        raise ValueError("krylov_solve requires a square matrix")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.cols:
        raise ValueError("right-hand side does not conform")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = a.rows
    if max_iter is None:
        max_iter = 10 * n
    if preconditioner == "jacobi":
        d = a.diagonal()
        d = np.where(np.abs(d) > 0, d, 1.0)
        apply_m = lambda v: v / d
    elif preconditioner == "none":
        apply_m = lambda v: v
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - a.matvec(x)
    if np.linalg.norm(r) <= tol * bnorm:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = p = np.zeros(n)
    for it in range(1, max_iter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0 or omega == 0.0:
            raise ConvergenceError("BiCGStab breakdown", float(np.linalg.norm(r)))
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = apply_m(p)
        v = a.matvec(p_hat)
        denom = r_hat @ v
        if denom == 0.0:
            raise ConvergenceError("BiCGStab breakdown", float(np.linalg.norm(r)))
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= tol * bnorm:
            x = x + alpha * p_hat
            return x, it
        s_hat = apply_m(s)
        t = a.matvec(s_hat)
        tt = t @ t
        if tt == 0.0:
            raise ConvergenceError("BiCGStab breakdown", float(np.linalg.norm(s)))
        omega = (t @ s) / tt
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
    raise ConvergenceError(
        f"BiCGStab did not converge in {max_iter} iterations", float(np.linalg.norm(r))
    )
