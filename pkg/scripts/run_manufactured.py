#!/usr/bin/env python3
"""Reproduce the manufactured-solution study: solutions, projections, errors.

Writes errors CSVs and patch files for all three methods on the uniform
ladder, then renders the comparison figures if plotkit is installed.
"""

import subprocess
import sys
from pathlib import Path

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("results/manufactured")


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    code = subprocess.call(
        [sys.executable, "-m", "rdhybrid", "run",
         "--problem", "manufactured", "--method", "all",
         "--eps", "1e-4", "--levels", "4", "--initial-n", "4",
         "--output", str(OUT)]
    )
    if code:
        return code
    try:
        import plotkit
    except ImportError:
        print("plotkit not installed; skipping figures")
        return 0
    spec = plotkit.FigureSpec(
        series=(
            (str(OUT / "errors_phfem.csv"), "errUP0L2", "primal hybrid, P0 projection"),
            (str(OUT / "errors_dhfem.csv"), "errUP0L2", "dual hybrid, P0 projection"),
            (str(OUT / "errors_cg.csv"), "errUS1L2", "continuous Galerkin"),
        ),
        output=str(OUT / "convergence.png"),
    )
    plotkit.plot_convergence(spec)
    for patch in sorted(OUT.glob("phfem_p0_lvl*.dat")):
        plotkit.plot_patch(patch, str(patch.with_suffix(".png")), zlim=(0.0, 1.0))
    for patch in sorted(OUT.glob("cg_s1_lvl*.dat")):
        plotkit.plot_patch(patch, str(patch.with_suffix(".png")))
    print(f"figures in {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
