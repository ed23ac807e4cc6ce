"""Command-line pipeline: podrom <subcommand> --config <path> [options].

Subcommands: mesh, fom, pod, rom, errors, convergence, tables, check.
PODROM_THREADS caps worker parallelism (the current implementation is
single-flow; the variable is honored as an upper bound of 1..N).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness, pod as pod_mod, rom as rom_mod
from .bdf import bdf_apply, bdf_apply_as_differences, bdf_coefficients
from .fom import fom_integrate, load_trajectory, save_trajectory
from .harness import RunConfig, build_desk_setup, parse_config
from .mesh_fem import build_mesh, build_space, export_mesh

USAGE_ERROR = 2
PIPELINE_ERROR = 1


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.q is not None:
        cfg.q = args.q
    if args.M is not None:
        cfg.M = args.M
    if args.r is not None:
        cfg.r_grid = (args.r,)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _fom_stem(cfg):
    return os.path.join(cfg.out_dir, "fom")


def cmd_mesh(cfg: RunConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    mesh = build_mesh(cfg.n_side)
    path = os.path.join(cfg.out_dir, "mesh.txt")
    export_mesh(mesh, path)
    print(f"wrote {path}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return 0


def cmd_fom(cfg: RunConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    space = build_space(build_mesh(cfg.n_side), cfg.degree)
    system = harness.make_system(cfg)
    u0 = harness.initial_state(cfg, space)
    traj = fom_integrate(system, space, u0, cfg.T / cfg.M, cfg.T, cfg.q)
    save_trajectory(traj, _fom_stem(cfg))
    print(f"wrote {_fom_stem(cfg)}.traj ({cfg.M} steps, {space.n_dof} dofs/component)")
    return 0


def cmd_pod(cfg: RunConfig) -> int:
    traj, _ = load_trajectory(_fom_stem(cfg))
    setup = build_desk_setup(cfg, fom_traj=traj)
    stem = os.path.join(cfg.out_dir, "pod")
    pod_mod.save_basis(setup.basis, stem)
    pod_mod.save_snapshots(setup.snaps, stem)
    print(f"wrote {stem}.modes.mtx (d_r = {setup.basis.d_r})")
    return 0


def cmd_rom(cfg: RunConfig) -> int:
    traj, _ = load_trajectory(_fom_stem(cfg))
    setup = build_desk_setup(cfg, fom_traj=traj)
    r = cfg.r_grid[0]
    romsys = harness.make_rom(setup, r)
    coords0 = harness.initial_coords(romsys, traj.states[0])
    rt = rom_mod.rom_integrate(
        romsys, cfg.q, cfg.T / cfg.M, cfg.T, ("bootstrap", coords0), cfg.newton_rule
    )
    stem = os.path.join(cfg.out_dir, f"rom_q{cfg.q}_r{r}_M{cfg.M}")
    rom_mod.save_rom_trajectory(romsys, rt, stem, cfg.newton_rule)
    counts = rt.newton_iteration_counts
    print(f"wrote {stem}.traj (Newton iterations: min {counts.min()}, max {counts.max()})")
    return 0


def cmd_errors(cfg: RunConfig) -> int:
    traj, _ = load_trajectory(_fom_stem(cfg))
    setup = build_desk_setup(cfg, fom_traj=traj)
    rows = harness.r_refinement_study(setup, traj, cfg.r_grid, cfg.q, cfg.newton_rule)
    path = os.path.join(cfg.out_dir, "errors_vs_r.csv")
    harness.emit_r_refinement_csv(path, rows)
    print(f"wrote {path}")
    return 0


def cmd_convergence(cfg: RunConfig, q_values) -> int:
    setup = build_desk_setup(cfg)
    romsys = harness.make_rom(setup, cfg.r_grid[-1])
    coords0 = harness.initial_coords(romsys, setup.fom_traj.states[0])
    scale = max(1, cfg.M // 128)
    m_values = tuple(m * scale for m in harness.DEFAULT_M_SWEEP)
    results = harness.temporal_convergence_study(
        romsys, coords0, cfg.T, q_values, m_values, newton_rule=cfg.newton_rule
    )
    path = os.path.join(cfg.out_dir, "convergence.csv")
    harness.emit_convergence_csv(path, results, cfg.T)
    sv_path = os.path.join(cfg.out_dir, "starting_values.csv")
    harness.emit_starting_values_csv(sv_path, results)
    print(f"wrote {path} and {sv_path}")
    return 0


def cmd_tables(cfg: RunConfig, which: str) -> int:
    if which == "r-refinement":
        return cmd_errors(cfg)
    if which == "starting-values":
        return cmd_convergence(cfg, tuple(range(2, 6)))
    print(f"unknown table selection {which!r}", file=sys.stderr)
    return USAGE_ERROR


def cmd_check(cfg: RunConfig) -> int:
    """Fast identity suites; exits nonzero on any failure."""
    rng = np.random.default_rng(cfg.seed)
    failures = []

    for q in range(1, 6):
        scheme = bdf_coefficients(q)
        if sum(scheme.delta) != 0:
            failures.append(f"BDF-{q}: consistency sum(delta) != 0")
        seq = [rng.standard_normal(8) for _ in range(q + 1)]
        a = bdf_apply(scheme, seq, 0.01)
        b = bdf_apply_as_differences(scheme, seq, 0.01)
        if np.linalg.norm(a - b) > 1e-13 * max(1.0, np.linalg.norm(a)):
            failures.append(f"BDF-{q}: first-difference decomposition mismatch")
    print(f"bdf identities: {'FAIL' if failures else 'ok'}")

    # synthetic snapshot set on a small mesh: tail identity and orthonormality
    from .fom import Trajectory

    space = build_space(build_mesh(4), 1)
    m_small = 12
    states = rng.standard_normal((m_small + 1, 1, space.n_dof))
    states[:, :, space.dirichlet_mask] = 0.0
    traj = Trajectory(0.1 * np.arange(m_small + 1), states, 0.1, space)
    snaps, basis = pod_mod.build_pod_basis(traj, tau=1.0, w0_mode=pod_mod.W0_INITIAL)
    gram = basis.gram_operator
    g = basis.modes.T @ gram.matvec(basis.modes)
    if np.max(np.abs(g - np.eye(basis.d_r))) > 1e-10:
        failures.append("POD modes not orthonormal")
    for r in (0, basis.d_r // 2, basis.d_r):
        lhs, rhs = pod_mod.tail_identity_check(snaps, basis, r)
        if abs(lhs - rhs) > 1e-10 * basis.eigenvalues[0]:
            failures.append(f"tail identity fails at r = {r}")
    print(f"pod identities: {'FAIL' if failures else 'ok'}")

    for msg in failures:
        print(f"FAIL: {msg}", file=sys.stderr)
    return PIPELINE_ERROR if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="podrom", description=__doc__)
    parser.add_argument("subcommand", choices=[
        "mesh", "fom", "pod", "rom", "errors", "convergence", "tables", "check",
    ])
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--q", type=int, default=None)
    parser.add_argument("--r", type=int, default=None)
    parser.add_argument("--M", type=int, default=None)
    parser.add_argument("--which", default="r-refinement", help="table selection for `tables`")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else 0
    threads = os.environ.get("PODROM_THREADS")
    if threads is not None and int(threads) < 1:
        print("PODROM_THREADS must be positive", file=sys.stderr)
        return USAGE_ERROR
    try:
        cfg = _load_config(args)
        if args.subcommand == "mesh":
            return cmd_mesh(cfg)
        if args.subcommand == "fom":
            return cmd_fom(cfg)
        if args.subcommand == "pod":
            return cmd_pod(cfg)
        if args.subcommand == "rom":
            return cmd_rom(cfg)
        if args.subcommand == "errors":
            return cmd_errors(cfg)
        if args.subcommand == "convergence":
            q_values = (args.q,) if args.q else (1, 2, 3, 4, 5)
            return cmd_convergence(cfg, q_values)
        if args.subcommand == "tables":
            return cmd_tables(cfg, args.which)
        if args.subcommand == "check":
            return cmd_check(cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # pipeline failures carry step diagnostics
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return PIPELINE_ERROR
    return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
