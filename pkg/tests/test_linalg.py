"""Dense/sparse kernels checked against independent small-scale oracles:
bisection on Sturm-like inertia counts for eigenvalues, Cramer's rule with
subset-DP determinants for the LU solver, and densification for the sparse
paths.
"""

import numpy as np
import pytest

from podrom.linalg import (
    ConvergenceError,
    CsrMatrix,
    SingularMatrixError,
    block_csr,
    csr_matvec,
    dense_lu_solve,
    krylov_solve,
    sym_eigen,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def _inertia_below(a, x):
    """Number of eigenvalues of symmetric a strictly below x, via the signs
    of the pivots of an LDL^T-style elimination of a - x I (Sylvester's law).
    """
    m = a - x * np.eye(len(a))
    n = len(m)
    count = 0
    m = m.copy()
    for k in range(n):
        piv = m[k, k]
        if piv == 0.0:
            piv = 1e-300
        if piv < 0:
            count += 1
        m[k + 1 :, k + 1 :] -= np.outer(m[k + 1 :, k], m[k, k + 1 :]) / piv
    return count


def eigenvalues_by_bisection(a, tol=1e-11):
    """All eigenvalues of a symmetric matrix by inertia bisection."""
    n = len(a)
    radius = float(np.max(np.sum(np.abs(a), axis=1))) + 1.0
    eigs = []
    for k in range(1, n + 1):  # k-th smallest
        lo, hi = -radius, radius
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _inertia_below(a, mid) >= k:
                hi = mid
            else:
                lo = mid
        eigs.append(0.5 * (lo + hi))
    return np.array(sorted(eigs, reverse=True))


def determinant_by_expansion(a):
    """Determinant via dynamic programming over column subsets (no LU)."""
    n = len(a)
    prev = {0: 1.0}
    for i in range(n):
        nxt = {}
        for mask, val in prev.items():
            for j in range(n):
                bit = 1 << j
                if mask & bit:
                    continue
                sign = (-1.0) ** bin(mask & (bit - 1)).count("1")
                key = mask | bit
                nxt[key] = nxt.get(key, 0.0) + sign * a[i, j] * val
        prev = nxt
    return prev[(1 << n) - 1]


def solve_by_cramer(a, b):
    det = determinant_by_expansion(a)
    x = np.empty(len(b))
    for j in range(len(b)):
        aj = a.copy()
        aj[:, j] = b
        x[j] = determinant_by_expansion(aj) / det
    return x


def random_csr(rng, rows, cols, density=0.2):
    dense = rng.standard_normal((rows, cols)) * (rng.random((rows, cols)) < density)
    ri, ci = np.nonzero(dense)
    return CsrMatrix.from_coo(rows, cols, ri, ci, dense[ri, ci]), dense


# ---------------------------------------------------------------------------
# sym_eigen
# ---------------------------------------------------------------------------


class TestSymEigen:
    def test_identity(self):
        e = sym_eigen(np.eye(3))
        assert np.allclose(e.eigenvalues, [1.0, 1.0, 1.0])

    def test_diagonal(self):
        e = sym_eigen(np.diag([4.0, 1.0, 0.0]))
        assert np.allclose(e.eigenvalues, [4.0, 1.0, 0.0], atol=1e-14)
        # axis eigenvectors up to sign
        assert np.allclose(np.abs(e.eigenvectors), np.eye(3), atol=1e-14)

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8, 8))
        a = a + a.T
        e = sym_eigen(a)
        oracle = eigenvalues_by_bisection(a)
        assert np.max(np.abs(e.eigenvalues - oracle)) < 1e-9

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((12, 12))
        a = a + a.T
        e = sym_eigen(a)
        v, lam = e.eigenvectors, e.eigenvalues
        assert np.all(np.diff(lam) <= 1e-12)
        rel = np.linalg.norm(v @ np.diag(lam) @ v.T - a) / np.linalg.norm(a)
        assert rel < 1e-10
        assert np.max(np.abs(v.T @ v - np.eye(12))) < 1e-12
        for k in range(12):
            assert np.linalg.norm(a @ v[:, k] - lam[k] * v[:, k]) <= 1e-10 * np.linalg.norm(a)

    def test_trace_and_shift(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((6, 6))
        a = a + a.T
        lam = sym_eigen(a).eigenvalues
        assert abs(lam.sum() - np.trace(a)) < 1e-10 * max(1.0, abs(np.trace(a)))
        shifted = sym_eigen(a + 2.5 * np.eye(6)).eigenvalues
        assert np.max(np.abs(shifted - (lam + 2.5))) < 1e-10

    def test_rejects_nonsquare_and_asymmetric(self):
        with pytest.raises(ValueError):
            sym_eigen(np.ones((2, 3)))
        bad = np.array([[1.0, 2.0], [0.5, 1.0]])
        with pytest.raises(ValueError):
            sym_eigen(bad)


# ---------------------------------------------------------------------------
# CSR
# ---------------------------------------------------------------------------


class TestCsr:
    def test_identity_matvec(self):
        x = np.arange(5.0)
        assert np.array_equal(CsrMatrix.identity(5).matvec(x), x)

    def test_zero_matrix(self):
        a = CsrMatrix.from_coo(4, 4, [], [], [])
        assert np.array_equal(a.matvec(np.ones(4)), np.zeros(4))

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        a, dense = random_csr(rng, 20, 20)
        x = rng.standard_normal(20)
        assert np.max(np.abs(a.matvec(x) - dense @ x)) < 1e-14

    def test_linearity(self):
        rng = np.random.default_rng(9)
        a, _ = random_csr(rng, 15, 15)
        x, y = rng.standard_normal(15), rng.standard_normal(15)
        lhs = a.matvec(x + y)
        rhs = a.matvec(x) + a.matvec(y)
        assert np.max(np.abs(lhs - rhs)) < 1e-13

    def test_duplicate_triplets_are_summed(self):
        a = CsrMatrix.from_coo(2, 2, [0, 0, 1], [1, 1, 0], [2.0, 3.0, 4.0])
        assert np.allclose(a.to_dense(), [[0.0, 5.0], [4.0, 0.0]])

    def test_column_indices_sorted_within_rows(self):
        a = CsrMatrix.from_coo(2, 3, [0, 0, 1], [2, 0, 1], [1.0, 2.0, 3.0])
        s, e = a.row_offsets[0], a.row_offsets[1]
        assert np.all(np.diff(a.col_indices[s:e]) > 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            CsrMatrix.identity(3).matvec(np.ones(4))

    def test_matrix_matrix_matvec(self):
        rng = np.random.default_rng(13)
        a, dense = random_csr(rng, 8, 6)
        x = rng.standard_normal((6, 4))
        assert np.max(np.abs(csr_matvec(a, x) - dense @ x)) < 1e-13

    def test_block_csr(self):
        rng = np.random.default_rng(17)
        pattern, dense = random_csr(rng, 5, 5, density=0.4)
        vals2 = rng.standard_normal(pattern.nnz)
        blocks = {(0, 0): pattern.values, (1, 0): vals2}
        big = block_csr(pattern, blocks, 2)
        lower = np.zeros((5, 5))
        lower[pattern.row_indices(), pattern.col_indices] = vals2
        expect = np.zeros((10, 10))
        expect[:5, :5] = dense
        expect[5:, :5] = lower
        assert np.max(np.abs(big.to_dense() - expect)) < 1e-14


# ---------------------------------------------------------------------------
# dense LU
# ---------------------------------------------------------------------------


class TestDenseLu:
    def test_identity(self):
        b = np.array([3.0, -1.0, 2.0])
        assert np.array_equal(dense_lu_solve(np.eye(3), b), b)

    def test_diagonal_2x2(self):
        x = dense_lu_solve(np.array([[2.0, 0.0], [0.0, 4.0]]), np.array([2.0, 4.0]))
        assert np.allclose(x, [1.0, 1.0])

    def test_matches_cramer_oracle(self):
        rng = np.random.default_rng(21)
        a = rng.standard_normal((10, 10)) + 10.0 * np.eye(10)
        b = rng.standard_normal(10)
        x = dense_lu_solve(a, b)
        assert np.max(np.abs(x - solve_by_cramer(a, b))) < 1e-9

    def test_residual_bound(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal((30, 30))
        b = rng.standard_normal(30)
        x = dense_lu_solve(a, b)
        res = np.linalg.norm(a @ x - b)
        assert res <= 1e-10 * (np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(b))

    def test_multiple_rhs(self):
        rng = np.random.default_rng(25)
        a = rng.standard_normal((6, 6)) + 6.0 * np.eye(6)
        b = rng.standard_normal((6, 3))
        x = dense_lu_solve(a, b)
        assert np.max(np.abs(a @ x - b)) < 1e-12

    def test_singular_raises_with_pivot(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError) as exc:
            dense_lu_solve(a, np.array([1.0, 1.0]))
        assert exc.value.pivot >= 0.0

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            dense_lu_solve(np.ones((2, 3)), np.ones(2))


# ---------------------------------------------------------------------------
# BiCGStab
# ---------------------------------------------------------------------------


def laplacian_1d(n):
    ri, ci, vals = [], [], []
    for i in range(n):
        ri.append(i), ci.append(i), vals.append(2.0)
        if i > 0:
            ri.append(i), ci.append(i - 1), vals.append(-1.0)
        if i < n - 1:
            ri.append(i), ci.append(i + 1), vals.append(-1.0)
    return CsrMatrix.from_coo(n, n, ri, ci, vals)


class TestKrylov:
    def test_identity_one_iteration(self):
        b = np.array([1.0, 2.0, 3.0])
        x, iters = krylov_solve(CsrMatrix.identity(3), b, tol=1e-12)
        assert np.allclose(x, b)
        assert iters <= 1

    def test_zero_rhs(self):
        x, iters = krylov_solve(laplacian_1d(10), np.zeros(10), tol=1e-12)
        assert np.array_equal(x, np.zeros(10))
        assert iters == 0

    def test_matches_dense_lu_oracle(self):
        n = 50
        a = laplacian_1d(n)
        b = np.ones(n)
        x, _ = krylov_solve(a, b, tol=1e-12)
        oracle = dense_lu_solve(a.to_dense(), b)
        assert np.linalg.norm(a.matvec(x) - b) <= 1e-12 * np.linalg.norm(b) * 1.001
        assert np.max(np.abs(x - oracle)) < 1e-7  # Laplacian condition number ~ n^2

    def test_spd_converges_within_10n(self):
        n = 40
        a = laplacian_1d(n)
        rng = np.random.default_rng(31)
        b = rng.standard_normal(n)
        x, iters = krylov_solve(a, b, tol=1e-12)
        assert iters <= 10 * n
        assert np.linalg.norm(a.matvec(x) - b) <= 1e-12 * np.linalg.norm(b) * 1.001

    def test_no_preconditioner(self):
        a = laplacian_1d(20)
        b = np.ones(20)
        x, _ = krylov_solve(a, b, tol=1e-10, preconditioner="none")
        assert np.linalg.norm(a.matvec(x) - b) <= 1e-10 * np.linalg.norm(b) * 1.001

    def test_max_iter_exhaustion(self):
        a = laplacian_1d(50)
        with pytest.raises(ConvergenceError) as exc:
            krylov_solve(a, np.ones(50), tol=1e-14, max_iter=2)
        assert exc.value.residual > 0

    def test_invalid_inputs(self):
        a = laplacian_1d(5)
        with pytest.raises(ValueError):
            krylov_solve(a, np.ones(5), tol=-1.0)
        with pytest.raises(ValueError):
            krylov_solve(a, np.ones(6))
