"""Figures for the hybrid FEM experiment outputs."""

from .figures import FigureSpec, fit_loglog_slope, plot_convergence, plot_patch
from .io import PlotkitError, read_errors_csv, read_patch

__all__ = [
    "FigureSpec",
    "PlotkitError",
    "fit_loglog_slope",
    "plot_convergence",
    "plot_patch",
    "read_errors_csv",
    "read_patch",
]
