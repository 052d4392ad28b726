import subprocess
import sys

import numpy as np
import pytest

import plotkit
from plotkit import FigureSpec, PlotkitError, fit_loglog_slope, plot_convergence, plot_patch


def write_csv(path, dof, cols):
    header = ["dof"] + list(cols)
    rows = [header] + [
        [str(d)] + [f"{cols[c][i]:.17g}" for c in cols] for i, d in enumerate(dof)
    ]
    path.write_text("\n".join(",".join(r) for r in rows) + "\n")


@pytest.mark.parametrize("alpha", [0.25, 0.5])
def test_synthetic_slope_recovery(tmp_path, alpha):
    dof = np.logspace(1, 5, 9)
    err = 3.0 * dof ** (-alpha)
    csv = tmp_path / "errors.csv"
    write_csv(csv, dof.astype(int), {"errUP0L2": err})
    table = plotkit.read_errors_csv(csv)
    slope = fit_loglog_slope(table["dof"], table["errUP0L2"])
    assert slope == pytest.approx(-alpha, abs=0.01)


def test_plot_convergence_creates_file(tmp_path):
    dof = np.array([10, 100, 1000, 10000])
    write_csv(tmp_path / "a.csv", dof, {"errUP0L2": 2.0 * dof ** -0.25})
    write_csv(tmp_path / "b.csv", dof, {"errUP0L2": 1.0 * dof ** -0.25})
    spec = FigureSpec(
        series=(
            (str(tmp_path / "a.csv"), "errUP0L2", "method a"),
            (str(tmp_path / "b.csv"), "errUP0L2", "method b"),
        ),
        output=str(tmp_path / "fig.png"),
    )
    out = plot_convergence(spec)
    assert (tmp_path / "fig.png").stat().st_size > 0
    assert out.endswith("fig.png")


def test_missing_column_is_named(tmp_path):
    dof = np.array([10, 100])
    write_csv(tmp_path / "a.csv", dof, {"errUP0L2": dof * 1.0})
    spec = FigureSpec(
        series=((str(tmp_path / "a.csv"), "nope", "x"),), output=str(tmp_path / "f.png")
    )
    with pytest.raises(PlotkitError, match="nope"):
        plot_convergence(spec)


def test_empty_csv_rejected(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(PlotkitError):
        plotkit.read_errors_csv(tmp_path / "e.csv")


def test_patch_roundtrip_and_plot(tmp_path):
    blocks = []
    vals = []
    for t, z in enumerate([0.0, 1.0, 0.5]):
        x0 = float(t)
        blocks.append(
            f"{x0} 0 {z}\n{x0 + 1} 0 {z}\n{x0} 1 {z}"
        )
        vals.append(z)
    p = tmp_path / "patch.dat"
    p.write_text("\n\n".join(blocks) + "\n")
    verts, z = plotkit.read_patch(p)
    assert verts.shape == (3, 3, 2)
    assert np.allclose(z.mean(axis=1), vals)
    out = plot_patch(p, str(tmp_path / "patch.png"), zlim=(0.0, 1.1))
    assert (tmp_path / "patch.png").stat().st_size > 0


def test_malformed_patch_reports_line(tmp_path):
    p = tmp_path / "bad.dat"
    p.write_text("0 0 1\n1 0 1\n\n")
    with pytest.raises(PlotkitError, match=r":3"):
        plotkit.read_patch(p)
    p.write_text("0 0\n")
    with pytest.raises(PlotkitError, match=r":1"):
        plotkit.read_patch(p)


def test_constant_zero_field_plot(tmp_path):
    p = tmp_path / "flat.dat"
    p.write_text("0 0 0\n1 0 0\n0 1 0\n")
    out = plot_patch(p, str(tmp_path / "flat.png"))
    assert (tmp_path / "flat.png").stat().st_size > 0


def test_cli_patch_and_convergence(tmp_path):
    dof = np.array([10, 100, 1000])
    write_csv(tmp_path / "errors_phfem.csv", dof, {"errUP0L2": 1.0 * dof ** -0.25})
    r = subprocess.run(
        [sys.executable, "-m", "plotkit", "convergence", str(tmp_path / "errors_phfem.csv"),
         "--output", str(tmp_path / "c.png")],
        capture_output=True, text=True,
    )
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "c.png").exists()
    r = subprocess.run(
        [sys.executable, "-m", "plotkit", "patch", str(tmp_path / "nonexistent.dat")],
        capture_output=True, text=True,
    )
    assert r.returncode == 1
