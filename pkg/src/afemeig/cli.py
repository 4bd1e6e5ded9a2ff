"""Command line front end: ``afem run ...``.

Exit codes: 0 on completion, 2 when the tracked cluster's identity is lost,
1 on any other error.
"""

import argparse
import os
import sys

from .driver import (AfemConfig, ClusterIdentityError, emit_plot, export_trace,
                     run_afem, run_afem_first_n)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="afem",
        description="Adaptive finite element eigenvalue solver "
                    "(Solve -> Estimate -> Mark -> Refine).")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the adaptive loop on a model problem")
    run.add_argument("--problem", default="square",
                     help="square | lshape | oscillator | file:<spec.json>")
    run.add_argument("--degree", type=int, default=1, choices=(1, 2))
    run.add_argument("--theta", type=float, default=0.5,
                     help="Dörfler bulk fraction in (0, 1)")
    group = run.add_mutually_exclusive_group()
    group.add_argument("--cluster", type=int, default=1, metavar="K",
                       help="1-based position of the tracked cluster")
    group.add_argument("--first-n", type=int, default=0, metavar="N",
                       help="track the first N eigenvalues instead")
    run.add_argument("--multiplicity", type=int, default=1, metavar="Q",
                     help="multiplicity of the tracked cluster")
    run.add_argument("--max-dof", type=float, default=5e4)
    run.add_argument("--b", type=int, default=1, dest="bisections",
                     help="bisections per marked element")
    run.add_argument("--eig-tol", type=float, default=1e-10)
    run.add_argument("--no-gap", action="store_true",
                     help="skip eigenspace-gap computation")
    run.add_argument("--uniform", action="store_true",
                     help="refine uniformly instead of marking (control runs)")
    run.add_argument("--trace", metavar="OUT.CSV", help="write the trace CSV")
    run.add_argument("--plot", metavar="OUT.SVG", help="write a log-log SVG plot")
    run.add_argument("--mesh-out", metavar="DIR",
                     help="write the final mesh (JSON + legacy VTK) into DIR")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    config = AfemConfig(
        problem=args.problem,
        degree=args.degree,
        theta=args.theta,
        bisections=args.bisections,
        cluster_index=args.cluster,
        multiplicity=args.multiplicity,
        first_n=args.first_n,
        max_dof=int(args.max_dof),
        eig_tol=args.eig_tol,
        compute_gap=not args.no_gap,
        marking="uniform" if args.uniform else "dorfler",
    )
    try:
        trace = run_afem_first_n(config) if args.first_n else run_afem(config)
    except ClusterIdentityError as exc:
        print(f"afem: cluster identity lost: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"afem: error: {exc}", file=sys.stderr)
        return 1

    lam = ", ".join(f"{v:.9g}" for v in trace.lambdas[-1])
    print(f"{trace.meta['label']}: {len(trace)} iterations, "
          f"{trace.n_dofs[-1]} dofs, status={trace.meta['status']}")
    print(f"  lambda = [{lam}]")
    print(f"  eta2 = {trace.eta2[-1]:.6e}  gap2 = {trace.gap2[-1]:.6e}")
    if args.trace:
        export_trace(trace, args.trace)
        print(f"  trace -> {args.trace}")
    if args.plot:
        series = ("eta2",) if not config.compute_gap else ("eta2", "gap2")
        emit_plot(trace, args.plot, series=series)
        print(f"  plot -> {args.plot}")
    if args.mesh_out:
        os.makedirs(args.mesh_out, exist_ok=True)
        trace.final_mesh.to_json(os.path.join(args.mesh_out, "mesh_final.json"))
        trace.final_mesh.to_vtk(os.path.join(args.mesh_out, "mesh_final.vtk"))
        print(f"  mesh -> {args.mesh_out}/mesh_final.{{json,vtk}}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
