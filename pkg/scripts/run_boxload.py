#!/usr/bin/env python3
"""Adaptive vs uniform estimator study for the piecewise-constant load."""

import sys
from pathlib import Path

import numpy as np

from rdhybrid.driver import BoxLoadProblem, refinement_localization, run_adaptive, run_uniform

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("results/boxload")


def dump(path, records):
    lines = ["dof,errUP0L2,errUP1L2,errUS1L2,est"]
    for r in records:
        lines.append(f"{r.ndof},nan,nan,nan,{r.est_total:.17g}")
    path.write_text("\n".join(lines) + "\n")


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    for eps in (1e-3, 1e-4):
        prob = BoxLoadProblem(eps)
        tag = f"{eps:.0e}".replace("e-0", "e-")
        for method in ("phfem", "dhfem"):
            ada = run_adaptive(prob, method, theta=0.25, max_dof=10_000)
            uni = run_uniform(prob, method, levels=5, compute_errors=False)
            dump(OUT / f"est_{method}_{tag}_adaptive.csv", ada)
            dump(OUT / f"est_{method}_{tag}_uniform.csv", uni)
            print(f"{method} eps={eps:g}: adaptive {len(ada)} iterations "
                  f"to {ada[-1].n_elements} elements")
    prob = BoxLoadProblem(1e-8)
    ada = run_adaptive(prob, "phfem", theta=0.25, max_dof=15_000)
    print(f"eps=1e-8: final #T={ada[-1].n_elements}")
    try:
        import plotkit

        series = []
        for kind in ("adaptive", "uniform"):
            for tag in ("1e-3", "1e-4"):
                series.append(
                    (str(OUT / f"est_phfem_{tag}_{kind}.csv"), "est", f"rho {tag} {kind}")
                )
        plotkit.plot_convergence(
            plotkit.FigureSpec(series=tuple(series), output=str(OUT / "estimators.png"))
        )
    except ImportError:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
