"""Measurement layer and pipeline orchestration: error norms against
references, convergence-slope estimation, and the CSV tables behind the
r-refinement, temporal-order and starting-value studies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .bdf import NewtonConfig
from .fom import (
    Trajectory,
    brusselator_system,
    fom_integrate,
    heat_system,
    perturbed_equilibrium,
)
from .mesh_fem import FeSpace, build_mesh, build_space, interpolate
from .pod import H10, W0_ZERO, PodBasis, build_pod_basis, project
from .rom import (
    RomSystem,
    RomTrajectory,
    rom_assemble,
    rom_integrate,
)

DEFAULT_T = 7.090636  # integration window used by the desk-scale protocol
DEFAULT_M_SWEEP = (64, 128, 256, 512, 1024)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    n_side: int = 16
    degree: int = 2
    system: str = "brusselator"
    nu: float = 0.002
    T: float = DEFAULT_T
    M: int = 128
    q: int = 5
    r_grid: tuple = (6, 10, 14, 18)
    tau: float = 1.0
    w0_mode: str = W0_ZERO
    inner_product: str = H10
    newton_rule: str = "step-coupled"
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.n_side < 1 or self.nu <= 0 or self.T <= 0 or self.M < 1 or self.tau <= 0:
            raise ValueError("all physical parameters must be positive")
        if not 1 <= self.q <= 5:
            raise ValueError("q must be in 1..5")


def parse_config(path: str) -> RunConfig:
    """Flat key = value file with # comments."""
    kwargs = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.rstrip()}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in ("n_side", "degree", "M", "q", "seed"):
                kwargs[key] = int(val)
            elif key in ("nu", "T", "tau"):
                kwargs[key] = float(val)
            elif key == "r_grid":
                kwargs[key] = tuple(int(v) for v in val.split(","))
            elif key in ("system", "w0_mode", "inner_product", "newton_rule", "out_dir"):
                kwargs[key] = val
            else:
                raise ValueError(f"unknown config key: {key}")
    return RunConfig(**kwargs)


# ---------------------------------------------------------------------------
# error measurement
# ---------------------------------------------------------------------------


def compare_trajectories(a: Trajectory, b: Trajectory, space: FeSpace, nu: float, start: int = 0):
    """(max L2, max H1-seminorm, time-integrated nu-weighted H1) of a - b
    over indices start..M."""
    if len(a.times) != len(b.times) or abs(a.dt - b.dt) > 1e-12 * max(a.dt, b.dt):
        raise ValueError("trajectories are not on the same grid")
    m = space.mass_matrix()
    k = space.stiffness_matrix()
    max_l2 = max_h1 = integ = 0.0
    ea = a.stacked()
    eb = b.stacked()
    for n in range(start, len(a.times)):
        e = (ea[n] - eb[n]).reshape(a.states.shape[1], -1)
        l2sq = sum(float(c @ m.matvec(c)) for c in e)
        h1sq = sum(float(c @ k.matvec(c)) for c in e)
        max_l2 = max(max_l2, l2sq)
        max_h1 = max(max_h1, h1sq)
        integ += a.dt * nu * h1sq
    return np.sqrt(max_l2), np.sqrt(max_h1), integ


def estimate_order(errors):
    """Least-squares slope of log err versus log dt, plus pairwise orders.

    ``errors`` is a list of (dt, err) with err > 0. Returns (slope, pairwise)
    where pairwise[i] = log2(err_i / err_{i+1}) for a dyadic dt sequence.
    """
    if len(errors) < 2:
        raise ValueError("need at least two (dt, err) points")
    dts = np.array([d for d, _ in errors], dtype=np.float64)
    errs = np.array([e for _, e in errors], dtype=np.float64)
    if np.any(errs <= 0) or np.any(dts <= 0):
        raise ValueError("errors and steps must be positive")
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    pairwise = [
        float(np.log(errs[i] / errs[i + 1]) / np.log(dts[i] / dts[i + 1]))
        for i in range(len(errs) - 1)
    ]
    return float(slope), pairwise


def l2_error_vs_exact(space: FeSpace, nodal: np.ndarray, exact) -> float:
    """Quadrature L2 norm of u_h - u for a scalar field and exact u(x, y)."""
    area, nvals, _, qc = space._geometry()
    uh = np.einsum("el,ql->eq", nodal[space.cell_dofs], nvals)
    diff = uh - exact(qc[..., 0], qc[..., 1])
    return float(np.sqrt(np.einsum("e,q,eq->", area, space.quad.weights, diff**2)))


# ---------------------------------------------------------------------------
# desk-scale pipeline
# ---------------------------------------------------------------------------


@dataclass
class DeskSetup:
    cfg: RunConfig
    space: FeSpace
    system: object
    fom_traj: Trajectory
    snaps: object
    basis: PodBasis
    lift: np.ndarray


def make_system(cfg: RunConfig):
    if cfg.system == "brusselator":
        return brusselator_system(cfg.nu)
    if cfg.system == "heat":
        return heat_system(cfg.nu)
    raise ValueError(f"unknown system {cfg.system!r}")


def initial_state(cfg: RunConfig, space: FeSpace):
    if cfg.system == "brusselator":
        return perturbed_equilibrium(space)
    u0 = interpolate(space, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    u0[space.dirichlet_mask] = 0.0
    return u0[None, :]


def build_desk_setup(cfg: RunConfig, fom_traj: Trajectory | None = None) -> DeskSetup:
    """FOM snapshot run plus POD basis per the configured protocol."""
    space = build_space(build_mesh(cfg.n_side), cfg.degree)
    system = make_system(cfg)
    if fom_traj is None:
        dt = cfg.T / cfg.M
        fom_traj = fom_integrate(system, space, initial_state(cfg, space), dt, cfg.T, cfg.q)
    snaps, basis = build_pod_basis(fom_traj, cfg.tau, cfg.w0_mode, cfg.inner_product)
    lift = snaps.mean if cfg.w0_mode == W0_ZERO else np.zeros(fom_traj.stacked().shape[1])
    return DeskSetup(cfg, space, system, fom_traj, snaps, basis, lift)


def make_rom(setup: DeskSetup, r: int) -> RomSystem:
    return rom_assemble(setup.basis, r, setup.space, setup.system, setup.lift)


def initial_coords(romsys: RomSystem, nodal0: np.ndarray) -> np.ndarray:
    coeffs, _ = project(romsys.basis, romsys.r, nodal0.reshape(-1) - romsys.lift)
    return coeffs


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _reduced_norms(romsys: RomSystem, d: np.ndarray):
    """(L2, H1) norms of the lifted coordinate difference Phi d."""
    l2 = float(np.sqrt(max(0.0, d @ romsys.reduced_mass @ d)))
    h1 = float(np.sqrt(max(0.0, d @ romsys.reduced_stiffness @ d)))
    return l2, h1


def temporal_convergence_study(
    romsys: RomSystem,
    coords0: np.ndarray,
    t_end: float,
    q_values=(1, 2, 3, 4, 5),
    m_values=DEFAULT_M_SWEEP,
    ref_factor: int = 8,
    newton_rule="step-coupled",
):
    """Temporal-order sweep: ROM at each (q, M) against a tight BDF-5 ROM
    reference on a ref_factor-times-finer grid.

    Returns a dict keyed by q with rows (M, max_l2, max_h1, start_l2,
    start_h1, newton_counts).
    """
    m_ref = ref_factor * max(m_values)
    # the reference solve gets a fixed tight tolerance: the step-coupled rule
    # would demand residuals below roundoff at the reference step size
    ref = rom_integrate(
        romsys, 5, t_end / m_ref, t_end, ("bootstrap", coords0), 1e-12
    )
    results = {}
    for q in q_values:
        rows = []
        for m in m_values:
            dt = t_end / m
            rt = rom_integrate(romsys, q, dt, t_end, ("bootstrap", coords0), newton_rule)
            stride = m_ref // m
            ref_coords = ref.coords[::stride]
            max_l2 = max_h1 = 0.0
            for n in range(q, m + 1):
                l2, h1 = _reduced_norms(romsys, rt.coords[n] - ref_coords[n])
                max_l2 = max(max_l2, l2)
                max_h1 = max(max_h1, h1)
            start_l2 = start_h1 = 0.0
            for n in range(1, q):
                l2, h1 = _reduced_norms(romsys, rt.coords[n] - ref_coords[n])
                start_l2 = max(start_l2, l2)
                start_h1 = max(start_h1, h1)
            rows.append(
                {
                    "M": m,
                    "max_l2": max_l2,
                    "max_h1": max_h1,
                    "start_l2": start_l2,
                    "start_h1": start_h1,
                    "newton_counts": rt.newton_iteration_counts,
                }
            )
        results[q] = rows
    return results


def r_refinement_study(
    setup: DeskSetup,
    fom_fine: Trajectory,
    r_values,
    q: int = 5,
    newton_rule="step-coupled",
):
    """Rank-refinement table: max errors of u_r^n against P^r u_h(t_n) and
    the projection errors (I - P^r) u_h(t_n), on the fine FOM grid."""
    t_end = fom_fine.times[-1]
    m = fom_fine.n_steps
    dt = fom_fine.dt
    fluct = fom_fine.stacked() - setup.lift[None, :]
    gram = setup.basis.gram_operator
    mass_gram = None
    rows = []
    for r in r_values:
        romsys = make_rom(setup, r)
        if mass_gram is None:
            from .pod import L2, gram_matrix

            mass_gram = gram_matrix(setup.space, L2, setup.system.n_components)
        coords0 = initial_coords(romsys, fom_fine.states[0])
        rt = rom_integrate(romsys, q, dt, t_end, ("bootstrap", coords0), newton_rule)
        phi = romsys.modes
        proj_coords = (gram.matvec(fluct.T).T @ phi)  # (M+1, r)
        resid = fluct.T - phi @ proj_coords.T
        proj_h1_sq = np.sum(resid * gram.matvec(resid), axis=0)
        proj_l2_sq = np.sum(resid * mass_gram.matvec(resid), axis=0)
        pod_l2 = pod_h1 = 0.0
        for n in range(q, m + 1):
            l2, h1 = _reduced_norms(romsys, rt.coords[n] - proj_coords[n])
            pod_l2 = max(pod_l2, l2)
            pod_h1 = max(pod_h1, h1)
        rows.append(
            {
                "r": r,
                "pod_l2": pod_l2,
                "pod_h1": pod_h1,
                "proj_l2": float(np.sqrt(np.max(proj_l2_sq[q:]))),
                "proj_h1": float(np.sqrt(np.max(proj_h1_sq[q:]))),
            }
        )
    return rows


def spatial_convergence_study(nu: float, n_sides=(8, 16, 32), t_end: float = 0.1, q: int = 3):
    """Manufactured heat solution u = e^{-t} cos(pi x / 2) cos(pi y / 2):
    L2 spatial errors on a sequence of P2 meshes under tight time stepping."""
    lam = -1.0 + nu * np.pi**2 / 2.0

    def exact(x, y, t):
        return np.exp(-t) * np.cos(np.pi * x / 2.0) * np.cos(np.pi * y / 2.0)

    system = heat_system(nu, forcing=lambda x, y, t: lam * exact(x, y, t))
    out = []
    for n_side in n_sides:
        space = build_space(build_mesh(n_side), 2)
        u0 = interpolate(space, lambda x, y: exact(x, y, 0.0))[None, :]
        dt = t_end / 100
        traj = fom_integrate(system, space, u0, dt, t_end, q, NewtonConfig(tol=1e-12))
        err = l2_error_vs_exact(space, traj.states[-1, 0], lambda x, y: exact(x, y, t_end))
        out.append((1.0 / n_side, err))
    return out


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _fmt(x, digits=6):
    return f"{x:.{digits}g}"


def write_csv(path, header_comment, columns, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        for line in header_comment:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def emit_convergence_csv(path, results, t_end):
    columns = ["q", "M", "dt", "max_l2", "max_h1", "start_l2", "start_h1", "pairwise_order_l2"]
    rows = []
    for q in sorted(results):
        prev = None
        for row in results[q]:
            dt = t_end / row["M"]
            order = ""
            if prev is not None and prev["max_l2"] > 0 and row["max_l2"] > 0:
                order = _fmt(np.log2(prev["max_l2"] / row["max_l2"]))
            rows.append(
                [
                    str(q),
                    str(row["M"]),
                    _fmt(dt),
                    _fmt(row["max_l2"]),
                    _fmt(row["max_h1"]),
                    _fmt(row["start_l2"]),
                    _fmt(row["start_h1"]),
                    order,
                ]
            )
            prev = row
    write_csv(path, ["maximum errors along the window vs tight BDF-5 reference"], columns, rows)


def emit_r_refinement_csv(path, rows):
    columns = ["r", "pod_max_l2", "proj_max_l2", "pod_max_h1", "proj_max_h1"]
    out = [
        [str(r["r"]), _fmt(r["pod_l2"]), _fmt(r["proj_l2"]), _fmt(r["pod_h1"]), _fmt(r["proj_h1"])]
        for r in rows
    ]
    write_csv(path, ["maximum errors vs reduced rank (L2 norm; H1 seminorm)"], columns, out)


def emit_starting_values_csv(path, results):
    ms = sorted({row["M"] for rows in results.values() for row in rows})
    qs = [q for q in sorted(results) if q >= 2]
    columns = ["M"] + [f"q{q}_l2" for q in qs] + [f"q{q}_h1" for q in qs]
    out = []
    for m in ms:
        row = [str(m)]
        for norm in ("start_l2", "start_h1"):
            for q in qs:
                match = [r for r in results[q] if r["M"] == m]
                row.append(_fmt(match[0][norm]) if match else "")
        out.append(row)
    write_csv(path, ["maximum errors at the starting values, per order and step count"], columns, out)
