"""Snapshot sets of tau-scaled first-order difference quotients, correlation
matrices in the H^1_0 (or L^2) inner product, POD modes, projectors and the
eigenvalue-tail identities.

With N = M + 1 snapshots the first column is sqrt(N) w0 (w0 = initial state,
trajectory mean, or identically zero after mean subtraction) and columns
2..N are tau (u(t_{j-1}) - u(t_{j-2})) / dt. The zero column contributed in
the zero-after-mean mode is kept so the 1/N scaling is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mmio
from .fom import Trajectory, save_trajectory, load_trajectory
from .linalg import CsrMatrix, block_csr, sym_eigen
from .mesh_fem import FeSpace

W0_INITIAL = "initial"
W0_MEAN = "mean"
W0_ZERO = "zero-after-mean-subtraction"

H10 = "H10"
L2 = "L2"

#: Poincare constant upper bound on the unit square, reporting only.
POINCARE_UNIT_SQUARE = 1.0 / (np.pi * np.sqrt(2.0))


class DegenerateSnapshotsError(Exception):
    pass


class InvalidRankError(ValueError):
    pass


@dataclass
class SnapshotSet:
    columns: np.ndarray  # (dim, N)
    tau: float
    dt: float
    w0_mode: str
    mean: np.ndarray  # stored mean (zero unless mean-subtraction was applied)

    @property
    def n_snapshots(self) -> int:
        return self.columns.shape[1]


@dataclass
class PodBasis:
    inner_product: str
    eigenvalues: np.ndarray  # strictly positive, descending
    modes: np.ndarray  # (dim, d_r), orthonormal in the declared inner product
    gram_operator: CsrMatrix

    @property
    def d_r(self) -> int:
        return len(self.eigenvalues)


def build_snapshots(traj: Trajectory, tau: float, w0_mode: str = W0_ZERO) -> SnapshotSet:
    """Assemble the N = M + 1 snapshot columns from a trajectory."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if traj.n_steps < 1:
        raise ValueError("trajectory needs at least one interval")
    u = traj.stacked()  # (M + 1, dim)
    m = traj.n_steps
    n = m + 1
    mean = u.mean(axis=0)
    if w0_mode == W0_INITIAL:
        w0 = u[0]
        stored_mean = np.zeros_like(mean)
    elif w0_mode == W0_MEAN:
        w0 = mean
        stored_mean = np.zeros_like(mean)
    elif w0_mode == W0_ZERO:
        w0 = np.zeros_like(mean)
        stored_mean = mean
    else:
        raise ValueError(f"unknown w0 mode {w0_mode!r}")
    cols = np.empty((u.shape[1], n))
    cols[:, 0] = np.sqrt(n) * w0
    cols[:, 1:] = (tau / traj.dt) * (u[1:] - u[:-1]).T
    return SnapshotSet(cols, tau, traj.dt, w0_mode, stored_mean)


def gram_matrix(space: FeSpace, inner_product: str, n_components: int) -> CsrMatrix:
    """Block-diagonal stiffness (H10) or mass (L2) operator for stacked fields."""
    scalar = space.stiffness_matrix() if inner_product == H10 else space.mass_matrix()
    if n_components == 1:
        return scalar
    blocks = {(c, c): scalar.values for c in range(n_components)}
    return block_csr(space.pattern, blocks, n_components)


def correlation_matrix(snaps: SnapshotSet, gram: CsrMatrix) -> np.ndarray:
    """K_ij = (1/N) (y_i, y_j)_X for the chosen inner product."""
    if gram.cols != snaps.columns.shape[0]:
        raise ValueError("gram operator does not conform with the snapshot columns")
    gy = gram.matvec(snaps.columns)
    return (snaps.columns.T @ gy) / snaps.n_snapshots


def pod_basis(
    snaps: SnapshotSet,
    k: np.ndarray,
    gram: CsrMatrix,
    inner_product: str = H10,
    rank_tol: float = 1e-12,
    r: int | None = None,
) -> PodBasis:
    """Eigenpairs of the correlation matrix and the induced orthonormal modes.

    Eigenvalues below rank_tol * lambda_1 are discarded as numerically zero;
    an explicit ``r`` truncates further.
    """
    eig = sym_eigen(k)
    lam = eig.eigenvalues
    if len(lam) == 0 or lam[0] <= 0:
        raise DegenerateSnapshotsError("all correlation eigenvalues are numerically zero")
    d_r = int(np.sum(lam > rank_tol * lam[0]))
    if d_r == 0:
        raise DegenerateSnapshotsError("all correlation eigenvalues are numerically zero")
    if r is not None:
        if r > d_r:
            raise InvalidRankError(f"requested rank {r} exceeds numerical rank {d_r}")
        d_r = r
    lam = lam[:d_r]
    vecs = eig.eigenvectors[:, :d_r]
    n = snaps.n_snapshots
    modes = snaps.columns @ (vecs / (np.sqrt(n) * np.sqrt(lam))[None, :])
    # deterministic sign: largest-magnitude entry of each mode made positive
    for j in range(d_r):
        i = int(np.argmax(np.abs(modes[:, j])))
        if modes[i, j] < 0:
            modes[:, j] = -modes[:, j]
    return PodBasis(inner_product, lam.copy(), modes, gram)


def build_pod_basis(
    traj: Trajectory,
    tau: float = 1.0,
    w0_mode: str = W0_ZERO,
    inner_product: str = H10,
    rank_tol: float = 1e-12,
):
    """Convenience pipeline: snapshots -> correlation matrix -> basis."""
    snaps = build_snapshots(traj, tau, w0_mode)
    n_comp = traj.states.shape[1]
    gram = gram_matrix(traj.space, inner_product, n_comp)
    k = correlation_matrix(snaps, gram)
    basis = pod_basis(snaps, k, gram, inner_product, rank_tol)
    return snaps, basis


def project(basis: PodBasis, r: int, v: np.ndarray):
    """Best approximation in span of the first r modes; returns
    (coefficients, reconstruction)."""
    if r > basis.d_r:
        raise InvalidRankError(f"rank {r} exceeds basis dimension {basis.d_r}")
    phi = basis.modes[:, :r]
    coeffs = phi.T @ basis.gram_operator.matvec(np.asarray(v, dtype=np.float64))
    return coeffs, phi @ coeffs


def tail_identity_check(snaps: SnapshotSet, basis: PodBasis, r: int):
    """Both sides of the projection identity: the mean-square projection error
    of the snapshot columns versus the eigenvalue tail sum_{k>r} lambda_k."""
    if r > basis.d_r:
        raise InvalidRankError(f"rank {r} exceeds basis dimension {basis.d_r}")
    y = snaps.columns
    phi = basis.modes[:, :r]
    gy = basis.gram_operator.matvec(y)
    resid = y - phi @ (phi.T @ gy)
    lhs = float(np.sum(resid * basis.gram_operator.matvec(resid))) / snaps.n_snapshots
    rhs = float(np.sum(basis.eigenvalues[r:]))
    return lhs, rhs


def split_tail_identity_check(snaps: SnapshotSet, basis: PodBasis, r: int):
    """Tail identity with the w0 column and the difference columns separated:
    ||(I-P^r) w0||_X^2 + (tau^2 / (N dt^2)) sum_j ||(I-P^r) D u(t_j)||_X^2."""
    if r > basis.d_r:
        raise InvalidRankError(f"rank {r} exceeds basis dimension {basis.d_r}")
    y = snaps.columns
    n = snaps.n_snapshots
    phi = basis.modes[:, :r]
    resid = y - phi @ (phi.T @ basis.gram_operator.matvec(y))
    sq = np.sum(resid * basis.gram_operator.matvec(resid), axis=0)
    w0_term = sq[0] / n  # (sqrt(N) w0 scaling)^2 / N = ||(I-P^r) w0||^2
    diff_term = float(np.sum(sq[1:])) / n  # = (tau^2 / (N dt^2)) sum ||(I-P^r) D u||^2
    lhs = float(w0_term + diff_term)
    rhs = float(np.sum(basis.eigenvalues[r:]))
    return lhs, rhs


def pointwise_projection_report(
    traj: Trajectory,
    basis: PodBasis,
    r: int,
    tau: float,
    w0_mode: str,
    mean: np.ndarray | None = None,
    mass_gram: CsrMatrix | None = None,
):
    """Measured pointwise projection maxima against the eigenvalue-tail bound.

    Returns (max_l2, max_h1, bound_l2, bound_h1). The H1 bound
    (2 + 4 Ctilde T^2 / tau^2) * tail is constant-free; the L2 bound uses the
    analytic unit-square Poincare constant and is informational only.
    """
    c_tilde = 1.0 if w0_mode == W0_INITIAL else 4.0
    u = traj.stacked()
    if mean is not None:
        u = u - mean[None, :]
    phi = basis.modes[:, :r]
    resid = u.T - phi @ (phi.T @ basis.gram_operator.matvec(u.T))
    h1_sq = np.sum(resid * basis.gram_operator.matvec(resid), axis=0)
    if mass_gram is None:
        mass_gram = gram_matrix(traj.space, L2, traj.states.shape[1])
    l2_sq = np.sum(resid * mass_gram.matvec(resid), axis=0)
    t_total = traj.times[-1] - traj.times[0]
    tail = float(np.sum(basis.eigenvalues[r:]))
    factor = 2.0 + 4.0 * c_tilde * t_total**2 / tau**2
    bound_h1 = factor * tail
    bound_l2 = POINCARE_UNIT_SQUARE**2 * bound_h1
    return (
        float(np.sqrt(np.max(l2_sq))),
        float(np.sqrt(np.max(h1_sq))),
        float(np.sqrt(bound_l2)),
        float(np.sqrt(bound_h1)),
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_basis(basis: PodBasis, stem: str):
    mmio.write_dense(stem + ".modes.mtx", basis.modes)
    with open(stem + ".eigs.txt", "w") as fh:
        fh.write(f"# inner_product = {basis.inner_product}\n")
        for lam in basis.eigenvalues:
            fh.write(f"{lam:.17g}\n")


def load_basis(stem: str, gram: CsrMatrix) -> PodBasis:
    modes = np.asarray(mmio.read(stem + ".modes.mtx"))
    eigenvalues = []
    inner_product = H10
    with open(stem + ".eigs.txt") as fh:
        for line in fh:
            if line.startswith("#"):
                if "inner_product" in line:
                    inner_product = line.split("=", 1)[1].strip()
                continue
            eigenvalues.append(float(line))
    return PodBasis(inner_product, np.array(eigenvalues), modes, gram)


def save_snapshots(snaps: SnapshotSet, stem: str):
    mmio.write_dense(stem + ".snaps.mtx", snaps.columns)
    mmio.write_dense(stem + ".mean.mtx", snaps.mean[:, None])
    with open(stem + ".snapmeta", "w") as fh:
        fh.write(f"tau = {snaps.tau:.17g}\n")
        fh.write(f"dt = {snaps.dt:.17g}\n")
        fh.write(f"w0_mode = {snaps.w0_mode}\n")


def load_snapshots(stem: str) -> SnapshotSet:
    cols = np.asarray(mmio.read(stem + ".snaps.mtx"))
    mean = np.asarray(mmio.read(stem + ".mean.mtx"))[:, 0]
    meta = {}
    with open(stem + ".snapmeta") as fh:
        for line in fh:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return SnapshotSet(cols, float(meta["tau"]), float(meta["dt"]), meta["w0_mode"], mean)
