"""Command-line entry point: ``mixedvhi {study,solve,verify-theory,check-infsup}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import abstract_vhi
from .fem_stokes import assemble, infsup_constant
from .friction import MonotoneFriction, NonmonotoneFriction
from .mesh import load_gmsh_file, structured_unit_square
from .study import SOURCES, LevelSolution, StudyConfig, emit_table, field_norms, parse_tag_map, run_study, write_profiles
from .uzawa import UzawaConfig, UzawaSolver, complementarity_report


def _cmd_study(args):
    cfg = StudyConfig.from_file(args.config)
    if args.out:
        cfg.out_dir = args.out
    t0 = time.perf_counter()
    res = run_study(cfg)
    print(emit_table(res.report), end="")
    print(f"wrote {res.paths.get('csv')} and {res.paths.get('table')} in {time.perf_counter() - t0:.1f} s")
    return 0


def _cmd_solve(args):
    if (args.n is None) == (args.mesh is None):
        print("solve: give exactly one of --n or --mesh", file=sys.stderr)
        return 2
    if args.n:
        mesh = structured_unit_square(args.n)
    else:
        mesh = load_gmsh_file(args.mesh, parse_tag_map(args.tag_map))
    system = assemble(mesh, args.mu, SOURCES[args.source])
    f1, f2 = MonotoneFriction(args.g), NonmonotoneFriction(args.a, args.b, args.beta)
    state = UzawaSolver(system, f1, f2, UzawaConfig(args.rho, args.max_iter, args.tol)).run()
    sol = LevelSolution(str(args.n or args.mesh), 1.0 / args.n if args.n else mesh.h_max(), mesh, system, state)
    norms = field_norms(sol)
    print(f"cells={mesh.n_cells} iterations={state.iteration} converged={state.converged}")
    print(" ".join(f"{k}={v:.6e}" for k, v in norms.items()))
    for tag, (res, umax) in complementarity_report(system, state).items():
        print(f"{tag.name.lower()}: complementarity={res:.3e} max|u_tau|={umax:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        state.write_increments(os.path.join(args.out, "increments.csv"))
        coords = (args.coord_slip1, args.coord_slip2)
        for p in write_profiles(sol, f1, f2, args.out, coords=coords):
            print(f"wrote {p}")
    return 0 if state.converged else 1


def _cmd_verify(args):
    t0 = time.perf_counter()
    checks = abstract_vhi.verify_batch(args.instances, seed=args.seed, workers=args.workers)
    ok = True
    for c in checks:
        ok &= c.passed
        print(f"seed={c.seed:3d} {'pass' if c.passed else 'FAIL'} kappa={c.kappa:.4f} "
              f"max_ratio={c.max_tail_ratio:.4f} lipschitz={c.lipschitz_ratio:.4f}<= {c.lipschitz_bound:.4f} "
              f"uniq={c.uniqueness_gap:.1e} iters={c.iterations}")
    print(f"{sum(c.passed for c in checks)}/{len(checks)} instances pass in {time.perf_counter() - t0:.1f} s")
    return 0 if ok else 1


def _cmd_infsup(args):
    levels = [int(s) for s in args.levels.split(",")]
    for bubble in (True, False):
        name = "P1b/P1" if bubble else "P1/P1"
        for n in levels:
            beta = infsup_constant(assemble(structured_unit_square(n), 1.0, with_bubble=bubble))
            print(f"{name:7s} h=1/{n:<4d} inf-sup={beta:.6f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="mixedvhi", description="Stokes flow with two slip friction laws")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("study", help="convergence study from a key = value config file")
    p.add_argument("config")
    p.add_argument("--out", help="override out_dir")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("solve", help="solve a single level")
    p.add_argument("--n", type=int, help="structured unit-square mesh with n cells per side")
    p.add_argument("--mesh", help="Gmsh MSH 2.2 ASCII file")
    p.add_argument("--tag-map", default="1:dirichlet,2:slip1,3:slip2", help="physical id : tag pairs")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--g", type=float, default=0.2)
    p.add_argument("--a", type=float, default=0.35)
    p.add_argument("--b", type=float, default=0.25)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=10.0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--source", choices=sorted(SOURCES), default="channel")
    p.add_argument("--coord-slip1", choices=("x", "angle"), default="x")
    p.add_argument("--coord-slip2", choices=("x", "angle"), default="x")
    p.add_argument("--out", help="directory for increments.csv and boundary profiles")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("verify-theory", help="check the projection iteration on random instances")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("check-infsup", help="discrete inf-sup constants on structured meshes")
    p.add_argument("--levels", default="8,16,32")
    p.set_defaults(func=_cmd_infsup)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
