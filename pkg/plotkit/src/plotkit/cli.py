"""Batch front end: turn a solver output directory into figures."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, plot_convergence, plot_patch
from .io import PlotkitError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="log-log error/estimator curves")
    conv.add_argument("csvs", nargs="+", help="errors CSV files")
    conv.add_argument("--column", default="errUP0L2")
    conv.add_argument("--output", default="convergence.png")
    conv.add_argument("--slope", type=float, default=-0.25)

    patch = sub.add_parser("patch", help="3D patch plot of a solution file")
    patch.add_argument("patchfile")
    patch.add_argument("--output", default="patch.png")
    patch.add_argument("--zmin", type=float, default=None)
    patch.add_argument("--zmax", type=float, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "convergence":
            series = tuple((p, args.column, Path(p).stem) for p in args.csvs)
            spec = FigureSpec(series=series, output=args.output, reference_slope=args.slope)
            plot_convergence(spec)
        else:
            zlim = None
            if args.zmin is not None or args.zmax is not None:
                zlim = (args.zmin or 0.0, args.zmax or 1.0)
            plot_patch(args.patchfile, args.output, zlim=zlim)
    except (PlotkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
