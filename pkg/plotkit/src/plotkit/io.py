"""Readers for the solver's CSV tables and triangle patch files."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PlotkitError(Exception):
    pass


def read_errors_csv(path) -> dict[str, np.ndarray]:
    """Comma-separated table with a header line; returns column arrays."""
    text = Path(path).read_text().strip()
    if not text:
        raise PlotkitError(f"{path}: empty CSV")
    lines = text.split("\n")
    header = [c.strip() for c in lines[0].split(",")]
    rows = [ln.split(",") for ln in lines[1:]]
    if not rows:
        raise PlotkitError(f"{path}: no data rows")
    data = np.array([[float(v) for v in row] for row in rows])
    if data.shape[1] != len(header):
        raise PlotkitError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def read_patch(path):
    """Patch file: blocks of three ``x y z`` lines separated by blank lines.

    Returns (vertices, values) with shapes (ntri, 3, 2) and (ntri, 3).
    """
    tris = []
    block: list[tuple[float, float, float]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            if block:
                if len(block) != 3:
                    raise PlotkitError(
                        f"{path}:{lineno}: patch block has {len(block)} rows, expected 3"
                    )
                tris.append(block)
                block = []
            continue
        parts = line.split()
        if len(parts) != 3:
            raise PlotkitError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
        try:
            block.append(tuple(float(p) for p in parts))
        except ValueError:
            raise PlotkitError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if block:
        if len(block) != 3:
            raise PlotkitError(f"{path}: trailing patch block has {len(block)} rows")
        tris.append(block)
    if not tris:
        raise PlotkitError(f"{path}: no patch data")
    arr = np.asarray(tris)
    return arr[:, :, 0:2], arr[:, :, 2]
