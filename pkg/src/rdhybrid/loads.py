"""Load fields and their moments against the local basis dictionary.

A :class:`LoadField` wraps the right-hand side ``f`` together with whatever
structure the experiment knows about it: element-wise constant values where
``f`` is constant, a mask of elements where ``f`` carries an unresolved
layer, and an exact piecewise decomposition across jump lines.  The moment
routine picks the cheapest adequate quadrature per element; getting the
bubble moments of ``f`` wrong by using a plain rule on a layer element would
feed garbage coefficients into the solve, so elements with active layer
bubbles never use the plain rule unless ``f`` is constant there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import basis as bs
from .quadrature import TriangleRule, layered_rule, kink_rule, _cell_fraction

_PLAIN = TriangleRule.conical(12)


@dataclass(frozen=True, eq=False)
class LoadField:
    """Right-hand side with optional structure hints.

    func:      vectorized ``f(x, y)``
    constants: ``(mesh) -> (nt,)`` values, NaN where not element-wise constant
    layered:   ``(mesh, eps) -> (nt,) bool``; True where f varies on a scale
               below the element size (boundary-layer data)
    pieces:    ``(mesh, t) -> [(bary_triangle, value), ...]`` exact split of a
               piecewise-constant f on a straddling element
    """

    func: Callable
    constants: Callable | None = None
    layered: Callable | None = None
    pieces: Callable | None = None


def constant_load(value: float) -> LoadField:
    v = float(value)

    def func(x, y):
        return np.full_like(np.asarray(x, dtype=float), v)

    return LoadField(func, constants=lambda mesh: np.full(mesh.n_triangles, v))


def smooth_load(f: Callable) -> LoadField:
    """Wrap a smooth callable; constants detected by probing (heuristic)."""

    def constants(mesh):
        pts = np.concatenate([mesh.tri_coords, mesh.tri_coords.mean(axis=1, keepdims=True)], axis=1)
        vals = f(pts[..., 0], pts[..., 1])
        lo, hi = vals.min(axis=1), vals.max(axis=1)
        scale = np.maximum(np.abs(lo), np.abs(hi)) + 1e-300
        out = np.where((hi - lo) <= 1e-13 * scale, vals[:, 3], np.nan)
        return out

    return LoadField(f, constants=constants)


@dataclass(eq=False)
class FMoments:
    """Integrals of f against the dictionary: needed by loads and estimators."""

    fphi: np.ndarray  # (nt, 10)  int f phi_s
    fdphi: np.ndarray  # (nt, 10, 3)  int f d phi_s / d lam_k
    f1: np.ndarray  # (nt,)  int f
    f2: np.ndarray  # (nt,)  int f^2


def element_kappas(mesh, eps: float, variant: str):
    """Effective variant code and table key per element.

    Returns (kappa_keys, effvar list) where standard-regime elements share
    the kappa key 0.0 so table caching collapses them.
    """
    kappa = mesh.h / eps
    eff = np.where(mesh.h > eps, 0, 1)  # 0 = layer regime, 1 = standard
    if variant == "standard":
        eff[:] = 1
    keys = np.where(eff == 0, kappa, 0.0)
    names = np.where(eff == 0, variant, "standard")
    return keys, names


def _pointwise_moments(mesh, elems, lam_pts, weights, kappa, variant, f, out: FMoments):
    V = bs.dict_values(lam_pts, kappa, variant)  # (p, 10)
    P = bs.dict_partials(lam_pts, kappa, variant)  # (p, 10, 3)
    npts = lam_pts.shape[0]
    chunk = max(1, 2_000_000 // npts)
    for lo in range(0, elems.size, chunk):
        sub = elems[lo : lo + chunk]
        coords = mesh.tri_coords[sub]  # (e, 3, 2)
        xy = np.einsum("ps,esx->epx", lam_pts, coords)
        vals = f(xy[..., 0], xy[..., 1])
        area = mesh.areas[sub]
        wf = weights[None, :] * vals  # (e, p)
        out.fphi[sub] = area[:, None] * (wf @ V)
        out.fdphi[sub] = area[:, None, None] * np.einsum("ep,psk->esk", wf, P)
        out.f1[sub] = area * (wf.sum(axis=1))
        out.f2[sub] = area * np.einsum("ep,ep->e", wf, vals)


def f_moments(mesh, eps: float, load: LoadField, variant: str = "exponential") -> FMoments:
    nt = mesh.n_triangles
    out = FMoments(
        np.zeros((nt, 10)), np.zeros((nt, 10, 3)), np.zeros(nt), np.zeros(nt)
    )
    keys, names = element_kappas(mesh, eps, variant)

    consts = load.constants(mesh) if load.constants is not None else np.full(nt, np.nan)
    consts = np.asarray(consts, dtype=float)
    layered = (
        load.layered(mesh, eps)
        if load.layered is not None
        else np.zeros(nt, dtype=bool)
    )

    is_const = np.isfinite(consts)
    needs_pieces = ~is_const & (load.pieces is not None)

    # constant f: pure table lookup
    for key in np.unique(keys[is_const]):
        name = "standard" if key == 0.0 else variant
        tab = bs.scalar_tables(float(key), name)
        sel = is_const & (keys == key)
        area = mesh.areas[sel]
        c = consts[sel]
        out.fphi[sel] = (c * area)[:, None] * tab.phi[None, :]
        out.fdphi[sel] = (c * area)[:, None, None] * tab.dphi[None, :, :]
        out.f1[sel] = c * area
        out.f2[sel] = c**2 * area

    # varying f: choose a rule resolving both f and any active bubbles
    remaining = ~is_const & ~needs_pieces
    for key in np.unique(keys[remaining]):
        name = "standard" if key == 0.0 else variant
        sel = remaining & (keys == key)
        lay = sel & layered
        smooth = sel & ~lay
        if np.any(smooth):
            if key == 0.0:
                rule = _PLAIN
            elif name == "polynomial":
                rule = kink_rule(float(key), 12)
            else:
                # active exponential bubbles: the plain rule cannot see them
                rule = layered_rule(2.0 * float(key))
            elems = np.nonzero(smooth)[0]
            _pointwise_moments(
                mesh, elems, rule.points, rule.weights, float(key), name, load.func, out
            )
        if np.any(lay):
            rate = 2.0 * float(key) if key > 0.0 else 2.0 * mesh.h[lay].max() / eps
            rule = layered_rule(rate)
            elems = np.nonzero(lay)[0]
            _pointwise_moments(
                mesh, elems, rule.points, rule.weights, float(key), name, load.func, out
            )

    # piecewise-constant f straddling its jump lines: exact split per element
    for t in np.nonzero(needs_pieces)[0]:
        key, name = float(keys[t]), str(names[t])
        base = TriangleRule.conical(12) if key == 0.0 else layered_rule(2.0 * key)
        for corners, value in load.pieces(mesh, t):
            corners = np.asarray(corners, dtype=float)
            frac = _cell_fraction(corners)
            if frac <= 1e-15:
                continue
            lam = base.points @ corners
            V = bs.dict_values(lam, key, name)
            P = bs.dict_partials(lam, key, name)
            w = base.weights * frac * mesh.areas[t]
            out.fphi[t] += value * (w @ V)
            out.fdphi[t] += value * np.einsum("p,psk->sk", w, P)
            out.f1[t] += value * w.sum()
            out.f2[t] += value**2 * w.sum()
    return out
