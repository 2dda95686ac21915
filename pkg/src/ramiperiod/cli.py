"""Batch command line interface.

Exit codes: 0 success, 2 validation error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .covering import load_curve
from .covermesh import REGION_NAMES, lift_to_cover, load_rpm, mesh_stats, save_rpm
from .errors import OutputError, RamiperiodError
from .harness import SCHEMES, ExperimentPlan, run_convergence
from .homology import hyperelliptic_basis, tree_cotree_basis
from .meshgen import build_base_mesh
from .periods import compare, period_matrix, save_result_json
from .weights import build_weight_set


def _cmd_mesh_gen(args):
    cover = load_curve(args.curve)
    tri = build_base_mesh(cover, args.sampler, args.n, seed=args.seed,
                          adapt=args.adapt == "on", h_target=args.h_target)
    mesh = lift_to_cover(tri, cover)
    try:
        save_rpm(mesh, args.out)
    except OSError as exc:
        raise OutputError(f"cannot write {args.out}: {exc}") from exc
    st = mesh_stats(mesh)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_faces} faces, "
          f"genus {mesh.genus()}, h={st.h:.6g}")
    return 0


def _cmd_mesh_check(args):
    mesh = load_rpm(args.mesh)
    st = mesh_stats(mesh)
    counts = {name: int(np.sum(mesh.region == tag))
              for tag, name in REGION_NAMES.items()}
    print(f"vertices:        {st.n_vertices}")
    print(f"faces:           {st.n_faces} ({counts['inner']} inner, "
          f"{counts['boundary']} boundary, {counts['outer']} outer per sheet set)")
    print(f"genus:           {mesh.genus()}")
    print(f"max edge h:      {st.h:.6g}")
    print(f"min angle (A):   {st.min_angle:.6g} rad")
    print(f"max opp. sum (D): {st.max_opposite_sum:.6g} rad "
          f"({'Delaunay' if st.max_opposite_sum <= np.pi + 1e-9 else 'NOT Delaunay'})")
    print(f"max disk count (U): {st.max_local_density}")
    return 0


def _cmd_periods_compute(args):
    cover = load_curve(args.curve) if args.curve else None
    mesh = load_rpm(args.mesh, cover)
    weights = build_weight_set(mesh, args.weights)
    if mesh.degree == 2:
        cuts = hyperelliptic_basis(mesh)
    else:
        cuts = tree_cotree_basis(mesh)
    result = period_matrix(mesh, weights, cuts, method=args.method)
    err = None
    if cover is not None and cover.reference_pi is not None:
        mode = "modular_g1" if cuts.genus == 1 else "signed_permutation"
        err = compare(result, cover.reference_pi, mode)
    try:
        save_result_json(result, args.out,
                         curve=cover.name if cover else "",
                         error_vs_reference=err)
    except OSError as exc:
        raise OutputError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}; Pi[0,0] = {result.pi[0, 0]:.6f}, "
          f"symmetry defect {result.symmetry_defect:.3e}"
          + (f", error vs reference {err:.3e}" if err is not None else ""))
    if args.dump_functions:
        _dump_functions(mesh, weights, cuts, args.dump_functions)
    return 0


def _dump_functions(mesh, weights, cuts, path):
    """Diagnostic text table of the first holomorphic integral."""
    from .periods import holomorphic_integral
    u, v, A, B = holomorphic_integral(mesh, weights, cuts, 1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vertex u0\n")
        for i, val in enumerate(u.base):
            fh.write(f"{i} {val!r}\n")
        fh.write("# face v0\n")
        for i, val in enumerate(v.values):
            fh.write(f"{i} {val!r}\n")
    print(f"wrote diagnostics to {path}")


def _cmd_convergence_run(args):
    plan = ExperimentPlan(
        curve=args.curve,
        schemes=tuple(args.schemes),
        sizes=tuple(args.sizes),
        seeds=tuple(args.seeds),
        weight_mode=args.weights,
        csv_path=args.csv,
        svg_path=args.svg,
        json_dir=args.json_dir,
    )
    rows, slopes = run_convergence(plan)
    failed = [r for r in rows if r.error]
    print(f"{len(rows)} cells, {len(failed)} failed")
    for scheme in plan.schemes:
        s = slopes.get(scheme)
        print(f"  {scheme:24s} slope = {'n/a' if s is None else f'{s:.3f}'}")
    for r in failed:
        print(f"  FAILED {r.scheme} n={r.n_base} seed={r.seed}: {r.error}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ramiperiod",
                                description="Discrete period matrices of "
                                            "branched coverings of the sphere")
    sub = p.add_subparsers(dest="group", required=True)

    mesh = sub.add_parser("mesh", help="mesh generation and inspection")
    msub = mesh.add_subparsers(dest="cmd", required=True)
    gen = msub.add_parser("gen", help="generate a covering mesh")
    gen.add_argument("--curve", required=True)
    gen.add_argument("--sampler", choices=("fibonacci", "random"), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--adapt", choices=("on", "off"), default="on")
    gen.add_argument("--h-target", type=float, default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_mesh_gen)
    chk = msub.add_parser("check", help="print mesh statistics and the "
                                        "angle/Delaunay/density report")
    chk.add_argument("--mesh", required=True)
    chk.set_defaults(func=_cmd_mesh_check)

    per = sub.add_parser("periods", help="period matrix computation")
    psub = per.add_subparsers(dest="cmd", required=True)
    comp = psub.add_parser("compute")
    comp.add_argument("--mesh", required=True)
    comp.add_argument("--method", choices=("direct", "energy", "both"),
                      default="direct")
    comp.add_argument("--weights", choices=("chart", "spherical"),
                      default="chart")
    comp.add_argument("--curve", default=None,
                      help="optional curve file for the reference comparison")
    comp.add_argument("--dump-functions", default=None,
                      help="write u0/v0 tables of the first integral here")
    comp.add_argument("--out", required=True)
    comp.set_defaults(func=_cmd_periods_compute)

    conv = sub.add_parser("convergence", help="convergence sweeps")
    csub = conv.add_subparsers(dest="cmd", required=True)
    run = csub.add_parser("run")
    run.add_argument("--curve", required=True)
    run.add_argument("--schemes", nargs="+", default=list(SCHEMES),
                     choices=list(SCHEMES))
    run.add_argument("--sizes", nargs="+", type=int,
                     default=[250, 500, 1000, 2000, 4000, 8000])
    run.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3])
    run.add_argument("--weights", choices=("chart", "spherical"),
                     default="chart")
    run.add_argument("--csv", required=True)
    run.add_argument("--svg", default=None)
    run.add_argument("--json-dir", default=None)
    run.set_defaults(func=_cmd_convergence_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RamiperiodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
