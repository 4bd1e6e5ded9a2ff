#!/usr/bin/env python3
"""Convergence of the double eigenvalue 5*pi^2 on the unit square.

Runs the adaptive loop for cluster 2 (q=2) with P1 and P2 elements, writes
trace CSVs and log-log SVG plots, and prints the fitted rates (expected:
eigenvalue error slope -1 for P1 and -2 for P2 against dofs; estimator slope
-1/2 and -1).
"""

import argparse
import os

from afemeig import AfemConfig, emit_plot, export_trace, fit_slope, run_afem


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--max-dof", type=float, default=5e4)
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for degree in (1, 2):
        cfg = AfemConfig(problem="square", degree=degree, theta=args.theta,
                         cluster_index=2, multiplicity=2,
                         max_dof=int(args.max_dof), compute_gap=(degree == 1))
        tr = run_afem(cfg)
        base = os.path.join(args.out, f"square_p{degree}")
        export_trace(tr, base + ".csv")
        export_trace(tr, base + ".json", fmt="json")
        series = ("eta2", "gap2") if degree == 1 else ("eta2",)
        emit_plot(tr, base + ".svg", series=series, guide_slope=-float(degree))
        print(f"P{degree}: {len(tr)} iterations to {tr.n_dofs[-1]} dofs")
        print(f"  lambda error slope : {fit_slope(tr, 'lambda_err_1'):+.3f}"
              f"   (expected {-degree})")
        print(f"  estimator slope    : {fit_slope(tr, 'eta'):+.3f}"
              f"   (expected {-degree / 2})")
        if degree == 1:
            print(f"  gap^2 slope        : {fit_slope(tr, 'gap2'):+.3f}   (expected -1)")


if __name__ == "__main__":
    main()
