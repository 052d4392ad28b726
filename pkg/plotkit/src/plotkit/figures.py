"""Log-log convergence figures and 3D patch plots of element-wise fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from mpl_toolkits.mplot3d.art3d import Poly3DCollection

from .io import PlotkitError, read_errors_csv, read_patch


@dataclass(frozen=True)
class FigureSpec:
    """One convergence figure: series = (csv path, column, label)."""

    series: tuple  # of (path, column, label)
    output: str
    reference_slope: float = -0.25
    xlabel: str = "dof"
    ylabel: str = "error / estimator"
    title: str | None = None


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope on the last half of the points (asymptotic range)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    x, y = x[keep], y[keep]
    if x.size < 2:
        raise PlotkitError("need at least two positive points for a slope fit")
    half = max(2, x.size // 2 + x.size % 2)
    lx, ly = np.log10(x[-half:]), np.log10(y[-half:])
    return float(np.polyfit(lx, ly, 1)[0])


def plot_convergence(spec: FigureSpec) -> str:
    """Draw the requested series plus a dof^slope guide line anchored at the
    first data point of the first series."""
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    anchor = None
    for path, column, label in spec.series:
        table = read_errors_csv(path)
        if "dof" not in table:
            raise PlotkitError(f"{path}: missing column 'dof'")
        if column not in table:
            raise PlotkitError(f"{path}: missing column {column!r}")
        dof = table["dof"]
        val = table[column]
        keep = np.isfinite(val) & (val > 0)
        ax.loglog(dof[keep], val[keep], marker="o", markersize=3, label=label)
        if anchor is None and keep.any():
            anchor = (dof[keep][0], val[keep][0])
    if anchor is None:
        raise PlotkitError("no plottable data in any series")
    d0, v0 = anchor
    dmax = max(read_errors_csv(p)["dof"].max() for p, _, _ in spec.series)
    guide = np.array([d0, dmax])
    ax.loglog(
        guide,
        v0 * (guide / d0) ** spec.reference_slope,
        "k:",
        label=f"O(dof^{{{spec.reference_slope:g}}})",
    )
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, which="major", alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return spec.output


def plot_patch(patch_path, output, zlim=None, title=None, cmap="viridis") -> str:
    """3D surface of a per-triangle nodal field from a patch file."""
    verts, vals = read_patch(patch_path)
    fig = plt.figure(figsize=(5.2, 4.4))
    ax = fig.add_subplot(projection="3d")
    polys = [
        [(verts[t, i, 0], verts[t, i, 1], vals[t, i]) for i in range(3)]
        for t in range(verts.shape[0])
    ]
    means = vals.mean(axis=1)
    norm = plt.Normalize(vals.min(), max(vals.max(), vals.min() + 1e-15))
    colors = plt.get_cmap(cmap)(norm(means))
    coll = Poly3DCollection(polys, facecolors=colors, edgecolors="k", linewidths=0.1)
    ax.add_collection3d(coll)
    ax.set_xlim(verts[..., 0].min(), verts[..., 0].max())
    ax.set_ylim(verts[..., 1].min(), verts[..., 1].max())
    if zlim is not None:
        ax.set_zlim(*zlim)
    else:
        lo, hi = float(vals.min()), float(vals.max())
        pad = 0.05 * max(hi - lo, 1e-12)
        ax.set_zlim(lo - pad, hi + pad)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(output, dpi=150)
    plt.close(fig)
    return output
