"""Command line entry point ``al-fem``."""
from __future__ import annotations

import argparse
import sys

from . import albasis, galerkin, harness, regularity
from .mesh import build_structured_mesh, refine_red, save_mesh


def _level(config: harness.RunConfig, n: int | None) -> int:
    if n is None:
        return config.levels[0]
    if n not in config.levels:
        raise SystemExit(f"level {n} is not among the configured levels {list(config.levels)}")
    return n


def _basis(config: harness.RunConfig, n: int):
    coarse = config.coarse_mesh(n)
    hier = albasis.FineHierarchy(coarse, config.fine_depth(n), config.coefficient_on)
    return albasis.build_al_basis(
        coarse, None, c0=config.c0, t=config.t_override, hier=hier, boundary_nodes=config.boundary_nodes,
        snapshot_method=config.snapshot_method, snapshot_cap=config.snapshot_cap,
    )


def cmd_mesh(args) -> None:
    mesh = build_structured_mesh(args.n, tuple(args.domain))
    if args.refine:
        mesh = refine_red(mesh, args.refine)
    save_mesh(mesh, args.out)
    print(f"{mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {args.out}")


def cmd_basis(args) -> None:
    config = harness.RunConfig.load(args.config)
    n = _level(config, args.level)
    basis = _basis(config, n)
    rep = galerkin.dimension_report(basis)
    if args.export:
        albasis.export_basis(basis, args.export)
    print(f"n={n}: {rep.n_nodes} nodes, dim V_AL = {rep.total}, dim/(N ell^3) = {rep.ratio:.4f}")


def cmd_solve(args) -> None:
    config = harness.RunConfig.load(args.config)
    n = _level(config, args.level)
    basis = _basis(config, n)
    system = galerkin.assemble_al_system(basis, f=harness.make_rhs(config.f))
    sol = galerkin.solve_al(system)
    if args.out:
        galerkin.export_solution(sol, args.out)
    if args.system:
        galerkin.export_system(system, args.system)
    print(f"n={n}: dim V_AL = {system.dim}, dropped {len(sol.dropped)} dependent functions, "
          f"relative residual {sol.residual:.2e}")


def cmd_convergence(args) -> None:
    config = harness.RunConfig.load(args.config)
    report = harness.run_convergence(config, log=lambda s: print(s, file=sys.stderr))
    harness.emit(report, args.csv or config.csv, args.json or config.json)
    sys.stdout.write(harness.report_csv(report))


def cmd_regularity(args) -> None:
    ctx = regularity.RegularityContext(args.P, args.KP, args.alpha, args.beta)
    if args.csv:
        regularity.write_pstar_csv(args.csv, ctx, args.points)
    print(f"p*(alpha/beta) = {regularity.p_star(ctx.alpha / ctx.beta, ctx):.6g}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="al-fem", description="Adaptive local basis finite elements")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="write a structured mesh as JSON")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--domain", type=float, nargs=4, default=[0.0, 1.0, 0.0, 1.0], metavar=("X0", "X1", "Y0", "Y1"))
    m.add_argument("--refine", type=int, default=0, help="red refinements applied afterwards")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)

    b = sub.add_parser("basis", help="build (and export) the AL basis of one level")
    b.add_argument("--config", required=True)
    b.add_argument("--level", type=int)
    b.add_argument("--export")
    b.set_defaults(func=cmd_basis)

    s = sub.add_parser("solve", help="solve in the AL space on one level")
    s.add_argument("--config", required=True)
    s.add_argument("--level", type=int)
    s.add_argument("--out", help="solution JSON")
    s.add_argument("--system", help="system matrix in coordinate text format")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("convergence", help="run the convergence study")
    c.add_argument("--config", required=True)
    c.add_argument("--csv")
    c.add_argument("--json")
    c.set_defaults(func=cmd_convergence)

    r = sub.add_parser("regularity", help="tabulate p*(t)")
    r.add_argument("--KP", type=float, required=True)
    r.add_argument("--P", type=float, required=True)
    r.add_argument("--alpha", type=float, default=1.0)
    r.add_argument("--beta", type=float, default=1.0)
    r.add_argument("--points", type=int, default=101)
    r.add_argument("--csv")
    r.set_defaults(func=cmd_regularity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, MemoryError) as err:
        print(f"al-fem: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
