"""Structured triangulation of the unit square and P1/P2 Lagrange elements.

The mesh is uniform with southwest-northeast diagonals. The boundary is
split into gamma1 = {x=1} u {y=1} (Dirichlet, closed: shared corners
belong to gamma1) and gamma2 = {x=0} u {y=0} (natural/Neumann).

Assembly is vectorized over elements: each FeSpace precomputes element
dof maps, physical basis gradients at quadrature points and a COO -> CSR
coalescing plan, so every assembled operator shares one sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import CsrMatrix

GAMMA1 = "gamma1"
GAMMA2 = "gamma2"


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass
class TriMesh:
    n_side: int
    vertices: np.ndarray  # (n_vert, 2)
    triangles: np.ndarray  # (n_tri, 3), positively oriented
    boundary_edges: list  # [(v0, v1, tag)]


def build_mesh(n_side: int) -> TriMesh:
    """Uniform triangulation of [0,1]^2 with SW-NE diagonals."""
    if n_side < 1:
        raise ValueError("n_side must be at least 1")
    n = n_side
    grid = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(grid, grid, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))  # below the SW-NE diagonal
            tris.append((a, c, d))  # above it
    triangles = np.array(tris, dtype=np.int64)

    edges = []
    for i in range(n):
        edges.append((vid(i, 0), vid(i + 1, 0), GAMMA2))  # y = 0
        edges.append((vid(0, i), vid(0, i + 1), GAMMA2))  # x = 0
        edges.append((vid(i, n), vid(i + 1, n), GAMMA1))  # y = 1
        edges.append((vid(n, i), vid(n, i + 1), GAMMA1))  # x = 1
    return TriMesh(n, vertices, triangles, edges)


def export_mesh(mesh: TriMesh, path):
    """Plain-text node / element / boundary-edge lists."""
    with open(path, "w") as fh:
        fh.write(f"# unit-square mesh, n_side = {mesh.n_side}\n")
        fh.write(f"nodes {len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"triangles {len(mesh.triangles)}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        for a, b, tag in mesh.boundary_edges:
            fh.write(f"{a} {b} {tag}\n")


# ---------------------------------------------------------------------------
# quadrature on the reference triangle
# ---------------------------------------------------------------------------


@dataclass
class Quadrature:
    degree: int
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # sum to 1 (reference measure normalized)


def quadrature_for_degree(degree: int) -> Quadrature:
    if degree <= 2:
        pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        w = np.full(3, 1.0 / 3.0)
        return Quadrature(2, pts, w)
    if degree <= 4:
        a = 0.445948490915964886318329253883254
        b = 0.091576213509770743459571463402202
        wa = 0.223381589678011471811203136894619
        wb = 0.109951743655321868602240736415305
        pts = np.array(
            [
                [a, a, 1 - 2 * a],
                [a, 1 - 2 * a, a],
                [1 - 2 * a, a, a],
                [b, b, 1 - 2 * b],
                [b, 1 - 2 * b, b],
                [1 - 2 * b, b, b],
            ]
        )
        w = np.array([wa, wa, wa, wb, wb, wb])
        return Quadrature(4, pts, w)
    raise ValueError(f"no quadrature rule of degree {degree}")


def _basis_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Lagrange basis values at barycentric points; shape (npts, nloc)."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    if degree == 1:
        return np.column_stack([l0, l1, l2])
    if degree == 2:
        return np.column_stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l1 * l2,  # edge opposite vertex 0
                4 * l0 * l2,  # edge opposite vertex 1
                4 * l0 * l1,  # edge opposite vertex 2
            ]
        )
    raise ValueError("degree must be 1 or 2")


def _basis_ref_grads(degree: int, bary: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients; shape (npts, nloc, 2), with x=l1, y=l2."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    one = np.ones_like(l0)
    zero = np.zeros_like(l0)
    # dl0 = (-1,-1), dl1 = (1,0), dl2 = (0,1)
    if degree == 1:
        gx = np.column_stack([-one, one, zero])
        gy = np.column_stack([-one, zero, one])
    elif degree == 2:
        gx = np.column_stack(
            [-(4 * l0 - 1), 4 * l1 - 1, zero, 4 * l2, -4 * l2, 4 * (l0 - l1)]
        )
        gy = np.column_stack(
            [-(4 * l0 - 1), zero, 4 * l2 - 1, 4 * l1, 4 * (l0 - l2), -4 * l1]
        )
    else:
        raise ValueError("degree must be 1 or 2")
    return np.stack([gx, gy], axis=-1)


# ---------------------------------------------------------------------------
# finite element space
# ---------------------------------------------------------------------------


@dataclass
class FeSpace:
    mesh: TriMesh
    degree: int
    dof_coords: np.ndarray  # (n_dof, 2)
    dirichlet_mask: np.ndarray  # bool per dof
    n_dof: int
    cell_dofs: np.ndarray  # (n_tri, nloc)
    quad: Quadrature
    _cache: dict = field(default_factory=dict, repr=False)

    # -- assembly plan -------------------------------------------------------

    def _geometry(self):
        key = "geometry"
        if key not in self._cache:
            tri = self.mesh.triangles
            p = self.mesh.vertices
            p0, p1, p2 = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
            j11 = p1[:, 0] - p0[:, 0]
            j12 = p2[:, 0] - p0[:, 0]
            j21 = p1[:, 1] - p0[:, 1]
            j22 = p2[:, 1] - p0[:, 1]
            det = j11 * j22 - j12 * j21
            area = 0.5 * det
            # inverse transpose of the affine Jacobian, per element
            jinv_t = np.empty((len(tri), 2, 2))
            jinv_t[:, 0, 0] = j22 / det
            jinv_t[:, 0, 1] = -j21 / det
            jinv_t[:, 1, 0] = -j12 / det
            jinv_t[:, 1, 1] = j11 / det
            nvals = _basis_values(self.degree, self.quad.points)  # (nq, nloc)
            rgrads = _basis_ref_grads(self.degree, self.quad.points)  # (nq, nloc, 2)
            # physical gradients: (ne, nq, nloc, 2)
            pgrads = np.einsum("eab,qlb->eqla", jinv_t, rgrads)
            # physical quadrature coordinates: (ne, nq, 2)
            verts = np.stack([p0, p1, p2], axis=1)  # (ne, 3, 2)
            qcoords = np.einsum("qv,eva->eqa", self.quad.points, verts)
            self._cache[key] = (area, nvals, pgrads, qcoords)
        return self._cache[key]

    def _coo_plan(self):
        """Sort/segment plan turning element matrices into one shared CSR pattern."""
        key = "coo_plan"
        if key not in self._cache:
            ne, nloc = self.cell_dofs.shape
            ri = np.repeat(self.cell_dofs, nloc, axis=1).ravel()
            ci = np.tile(self.cell_dofs, (1, nloc)).ravel()
            order = np.lexsort((ci, ri))
            rs, cs = ri[order], ci[order]
            new = np.ones(len(rs), dtype=bool)
            new[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
            starts = np.flatnonzero(new)
            offsets = np.zeros(self.n_dof + 1, dtype=np.int64)
            np.add.at(offsets, rs[starts] + 1, 1)
            pattern = CsrMatrix(
                self.n_dof, self.n_dof, np.cumsum(offsets), cs[starts], np.zeros(len(starts))
            )
            self._cache[key] = (order, starts, pattern)
        return self._cache[key]

    def assemble_from_element_matrices(self, elem_mats: np.ndarray) -> np.ndarray:
        """Coalesce (ne, nloc, nloc) element matrices into pattern-aligned values."""
        order, starts, _ = self._coo_plan()
        return np.add.reduceat(elem_mats.ravel()[order], starts)

    @property
    def pattern(self) -> CsrMatrix:
        return self._coo_plan()[2]

    def csr_from_values(self, values: np.ndarray) -> CsrMatrix:
        p = self.pattern
        return CsrMatrix(p.rows, p.cols, p.row_offsets, p.col_indices, values)

    # -- cached operators ----------------------------------------------------

    def mass_matrix(self) -> CsrMatrix:
        if "mass" not in self._cache:
            self._cache["mass"] = assemble_mass(self)
        return self._cache["mass"]

    def stiffness_matrix(self) -> CsrMatrix:
        if "stiffness" not in self._cache:
            self._cache["stiffness"] = assemble_stiffness(self)
        return self._cache["stiffness"]


def build_space(mesh: TriMesh, degree: int, dirichlet: str = GAMMA1) -> FeSpace:
    """Lagrange space of degree 1 or 2 with Dirichlet dofs on gamma1 (or 'all')."""
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    n_vert = len(mesh.vertices)
    if degree == 1:
        coords = mesh.vertices.copy()
        cell_dofs = mesh.triangles.copy()
    else:
        tri = mesh.triangles
        # edges keyed by sorted endpoints, numbered lexicographically
        pairs = np.concatenate(
            [
                np.sort(tri[:, [1, 2]], axis=1),
                np.sort(tri[:, [0, 2]], axis=1),
                np.sort(tri[:, [0, 1]], axis=1),
            ]
        )
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        ne = len(tri)
        edge_of = inverse.reshape(3, ne).T  # local edges opposite vertices 0,1,2
        cell_dofs = np.column_stack([tri, n_vert + edge_of])
        midpoints = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
        coords = np.vstack([mesh.vertices, midpoints])
    tol = 1e-12
    x, y = coords[:, 0], coords[:, 1]
    if dirichlet == GAMMA1:
        mask = (np.abs(x - 1.0) < tol) | (np.abs(y - 1.0) < tol)
    elif dirichlet == "all":
        mask = (np.abs(x) < tol) | (np.abs(y) < tol) | (np.abs(x - 1.0) < tol) | (np.abs(y - 1.0) < tol)
    else:
        raise ValueError(f"unknown dirichlet selector {dirichlet!r}")
    quad = quadrature_for_degree(2 if degree == 1 else 4)
    return FeSpace(mesh, degree, coords, mask, len(coords), cell_dofs, quad)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def assemble_mass(space: FeSpace) -> CsrMatrix:
    area, nvals, _, _ = space._geometry()
    ref = np.einsum("q,qi,qj->ij", space.quad.weights, nvals, nvals)
    elem = area[:, None, None] * ref[None, :, :]
    return space.csr_from_values(space.assemble_from_element_matrices(elem))


def assemble_stiffness(space: FeSpace) -> CsrMatrix:
    area, _, pgrads, _ = space._geometry()
    elem = np.einsum("q,eqia,eqja->eij", space.quad.weights, pgrads, pgrads)
    elem *= area[:, None, None]
    return space.csr_from_values(space.assemble_from_element_matrices(elem))


def assemble_load(space: FeSpace, f, t: float | None = None) -> np.ndarray:
    """Load vector with entries int f phi_i; f maps (x, y [, t]) -> values."""
    area, nvals, _, qc = space._geometry()
    fx = f(qc[..., 0], qc[..., 1]) if t is None else f(qc[..., 0], qc[..., 1], t)
    fx = np.broadcast_to(np.asarray(fx, dtype=np.float64), qc.shape[:2])
    elem = area[:, None] * np.einsum("q,eq,qi->ei", space.quad.weights, fx, nvals)
    return np.bincount(space.cell_dofs.ravel(), weights=elem.ravel(), minlength=space.n_dof)


def _states_at_quadrature(space: FeSpace, states: np.ndarray) -> np.ndarray:
    """Interpolate (n_comp, n_dof) nodal fields at quadrature points -> (n_comp, ne, nq)."""
    _, nvals, _, _ = space._geometry()
    local = states[:, space.cell_dofs]  # (n_comp, ne, nloc)
    return np.einsum("cel,ql->ceq", local, nvals)


def assemble_reaction_system(space: FeSpace, states: np.ndarray, g) -> np.ndarray:
    """Vectors with entries int g_c(u) phi_i for a multi-component state.

    ``states`` is (n_comp, n_dof); ``g`` maps (n_comp, ...) values to
    (n_comp, ...) values pointwise. Returns (n_comp, n_dof).
    """
    area, nvals, _, _ = space._geometry()
    uq = _states_at_quadrature(space, states)
    gq = np.asarray(g(uq), dtype=np.float64)
    elem = np.einsum("q,ceq,qi->cei", space.quad.weights, gq, nvals)
    elem *= area[None, :, None]
    n_comp = states.shape[0]
    out = np.empty((n_comp, space.n_dof))
    for c in range(n_comp):
        out[c] = np.bincount(
            space.cell_dofs.ravel(), weights=elem[c].ravel(), minlength=space.n_dof
        )
    return out


def assemble_reaction_jacobian_system(space: FeSpace, states: np.ndarray, g_prime) -> np.ndarray:
    """Pattern-aligned value blocks of the reaction Jacobian.

    ``g_prime`` maps (n_comp, ...) values to (n_comp, n_comp, ...) partial
    derivatives. Returns (n_comp, n_comp, nnz) values on ``space.pattern``.
    """
    area, nvals, _, _ = space._geometry()
    uq = _states_at_quadrature(space, states)
    dq = np.asarray(g_prime(uq), dtype=np.float64)  # (n_comp, n_comp, ne, nq)
    n_comp = states.shape[0]
    nnz = space.pattern.nnz
    out = np.empty((n_comp, n_comp, nnz))
    for a in range(n_comp):
        for b in range(n_comp):
            elem = np.einsum("q,eq,qi,qj->eij", space.quad.weights, dq[a, b], nvals, nvals)
            elem *= area[:, None, None]
            out[a, b] = space.assemble_from_element_matrices(elem)
    return out


def assemble_reaction(space: FeSpace, state: np.ndarray, g) -> np.ndarray:
    """Vector with entries int g(u_h) phi_i for a scalar nodal field."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (space.n_dof,):
        raise ValueError("state length must equal n_dof")
    return assemble_reaction_system(space, state[None, :], lambda u: g(u))[0]


def assemble_reaction_jacobian(space: FeSpace, state: np.ndarray, g_prime) -> CsrMatrix:
    """Matrix with entries int g'(u_h) phi_i phi_j, on the mass pattern."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (space.n_dof,):
        raise ValueError("state length must equal n_dof")
    vals = assemble_reaction_jacobian_system(
        space, state[None, :], lambda u: g_prime(u)[None, ...]
    )
    return space.csr_from_values(vals[0, 0])


def interpolate(space: FeSpace, f) -> np.ndarray:
    """Nodal values f(dof_coords)."""
    return np.asarray(f(space.dof_coords[:, 0], space.dof_coords[:, 1]), dtype=np.float64)


def apply_dirichlet(space: FeSpace, system: CsrMatrix, rhs: np.ndarray, lift: np.ndarray):
    """Symmetric elimination of Dirichlet dofs; solution equals lift on gamma1.

    Works for block systems whose size is a multiple of n_dof (the mask is
    tiled per component). Returns (constrained CsrMatrix, adjusted rhs).
    """
    if system.rows % space.n_dof != 0:
        raise ValueError("system size is not a multiple of n_dof")
    n_comp = system.rows // space.n_dof
    mask = np.tile(space.dirichlet_mask, n_comp)
    lift_full = np.where(mask, np.asarray(lift, dtype=np.float64), 0.0)
    rhs = np.asarray(rhs, dtype=np.float64) - system.matvec(lift_full)
    rhs[mask] = lift_full[mask]
    ri = system.row_indices()
    ci = system.col_indices
    keep = ~(mask[ri] | mask[ci])
    rr = np.concatenate([ri[keep], np.flatnonzero(mask)])
    cc = np.concatenate([ci[keep], np.flatnonzero(mask)])
    vv = np.concatenate([system.values[keep], np.ones(int(mask.sum()))])
    return CsrMatrix.from_coo(system.rows, system.cols, rr, cc, vv), rhs


def norms(space: FeSpace, v: np.ndarray):
    """(L2 norm, H1 seminorm) of a nodal field; multi-component fields are
    stacked and the quadratic forms summed over components."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        if v.size % space.n_dof != 0:
            raise ValueError("vector length must be a multiple of n_dof")
        v = v.reshape(-1, space.n_dof)
    m = space.mass_matrix()
    a = space.stiffness_matrix()
    l2sq = sum(float(c @ m.matvec(c)) for c in v)
    h1sq = sum(float(c @ a.matvec(c)) for c in v)
    return np.sqrt(max(l2sq, 0.0)), np.sqrt(max(h1sq, 0.0))
