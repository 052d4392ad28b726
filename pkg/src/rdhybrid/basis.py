"""Local basis functions: hats, layer face bubbles, element bubble, RT0 fields.

All scalar functions are expressed through barycentric coordinates, so their
values at the reference points of a quadrature rule depend only on the decay
rate ``kappa = h_T / eps`` and the bubble variant.  Moment tables of products
are therefore cached per ``(kappa, variant)`` and shared by every triangle
with the same rate, which is what makes assembly on structured/NVB meshes
cheap.

Dictionary layout (index -> function of barycentric lam):
    0..2   hats lam_i
    3..5   layer face bubbles  B_i = lam_j lam_k * layer(lam_i)
    6      element bubble      lam_1 lam_2 lam_3
    7..9   plain quadratic face bubbles  Q_i = lam_j lam_k
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import (
    GRADED_CELL_DEGREE,
    TriangleRule,
    graded_rule_facet,
    graded_rule_vertex,
    kink_rule,
)

VARIANTS = ("exponential", "polynomial", "standard")

DICT_SIZE = 10
SCALAR_BASIS = tuple(range(7))  # hats, layer bubbles, element bubble


def effective_variant(variant: str, eps: float, h: float) -> str:
    """Layer bubbles are active only in the singularly perturbed regime eps < h_T."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown bubble variant {variant!r}")
    return variant if eps < h else "standard"


def _layer(lam, kappa, variant):
    """Layer factor and its derivative w.r.t. the opposite barycentric coordinate."""
    if variant == "exponential":
        val = np.exp(-kappa * lam)
        return val, -kappa * val
    if variant == "polynomial":
        inside = lam < 1.0 / kappa
        val = np.where(inside, 1.0 - kappa * lam, 0.0)
        # derivative one-sided from the layer-strip side on the kink line
        der = np.where(lam <= 1.0 / kappa, -kappa, 0.0)
        return val, der
    if variant == "standard":
        one = np.ones_like(lam)
        return one, np.zeros_like(lam)
    raise ValueError(f"unknown bubble variant {variant!r}")


def dict_values(lam, kappa, variant):
    """Values of the 10-entry dictionary, shape (n, 10)."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape[:-1] + (DICT_SIZE,))
    out[..., 0:3] = lam
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        q = lam[..., j] * lam[..., k]
        e, _ = _layer(lam[..., i], kappa, variant)
        out[..., 3 + i] = q * e
        out[..., 7 + i] = q
    out[..., 6] = lam[..., 0] * lam[..., 1] * lam[..., 2]
    return out


def dict_partials(lam, kappa, variant):
    """Partials d/d lam_m of the dictionary entries, shape (n, 10, 3)."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1] + (DICT_SIZE, 3))
    for i in range(3):
        out[..., i, i] = 1.0
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e, de = _layer(lam[..., i], kappa, variant)
        out[..., 3 + i, i] = lam[..., j] * lam[..., k] * de
        out[..., 3 + i, j] = lam[..., k] * e
        out[..., 3 + i, k] = lam[..., j] * e
        out[..., 7 + i, j] = lam[..., k]
        out[..., 7 + i, k] = lam[..., j]
    out[..., 6, 0] = lam[..., 1] * lam[..., 2]
    out[..., 6, 1] = lam[..., 0] * lam[..., 2]
    out[..., 6, 2] = lam[..., 0] * lam[..., 1]
    return out


def _triangle_geometry(coords):
    coords = np.asarray(coords, dtype=float)
    e = [coords[(i + 2) % 3] - coords[(i + 1) % 3] for i in range(3)]
    area = 0.5 * abs(
        (coords[1][0] - coords[0][0]) * (coords[2][1] - coords[0][1])
        - (coords[1][1] - coords[0][1]) * (coords[2][0] - coords[0][0])
    )
    grad = np.empty((3, 2))
    for i in range(3):
        grad[i, 0] = -e[i][1]
        grad[i, 1] = e[i][0]
    grad /= 2.0 * area
    lengths = np.array([np.hypot(*e[i]) for i in range(3)])
    h = float(lengths.max())
    normals = np.stack([np.array([e[i][1], -e[i][0]]) / lengths[i] for i in range(3)])
    tangents = np.stack([np.asarray(e[i]) / lengths[i] for i in range(3)])
    return area, grad, lengths, h, normals, tangents


@dataclass(frozen=True, eq=False)
class ScalarLocalBasis:
    """Seven scalar functions on one triangle: 3 hats, 3 face bubbles, 1 element bubble."""

    coords: np.ndarray
    eps: float
    variant: str
    kappa: float
    area: float
    grad_bary: np.ndarray  # (3, 2)
    h: float

    @staticmethod
    def build(coords, eps, variant="exponential") -> "ScalarLocalBasis":
        area, grad, _, h, _, _ = _triangle_geometry(coords)
        var = effective_variant(variant, eps, h)
        return ScalarLocalBasis(np.asarray(coords, float), eps, var, h / eps, area, grad, h)

    def values(self, lam):
        return dict_values(lam, self.kappa, self.variant)[..., :7]

    def gradients(self, lam):
        part = dict_partials(lam, self.kappa, self.variant)[..., :7, :]
        return part @ self.grad_bary


@dataclass(frozen=True, eq=False)
class VectorLocalBasis:
    """Eight vector fields: 3 RT0, 3 face bubbles times facet normal, 2 edge tangentials.

    The tangential enrichments use the two edges sharing the fixed vertex
    ``z_local`` (ascending local facet index).
    """

    coords: np.ndarray
    eps: float
    variant: str
    kappa: float
    area: float
    grad_bary: np.ndarray
    lengths: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    z_local: int
    h: float

    @staticmethod
    def build(coords, eps, variant="exponential", z_local=0) -> "VectorLocalBasis":
        area, grad, lengths, h, normals, tangents = _triangle_geometry(coords)
        var = effective_variant(variant, eps, h)
        return VectorLocalBasis(
            np.asarray(coords, float), eps, var, h / eps, area, grad,
            lengths, normals, tangents, z_local, h,
        )

    @property
    def tangential_facets(self):
        return tuple(i for i in range(3) if i != self.z_local)

    def values(self, lam):
        lam = np.asarray(lam, dtype=float)
        n = lam.shape[0]
        vals = np.zeros((n, 8, 2))
        xy = lam @ self.coords
        dv = dict_values(lam, self.kappa, self.variant)
        for i in range(3):
            vals[:, i, :] = (xy - self.coords[i]) / (2.0 * self.area)
            vals[:, 3 + i, :] = dv[:, 3 + i, None] * self.normals[i]
        for col, i in enumerate(self.tangential_facets):
            vals[:, 6 + col, :] = dv[:, 7 + i, None] * self.tangents[i]
        return vals

    def divergences(self, lam):
        lam = np.asarray(lam, dtype=float)
        n = lam.shape[0]
        div = np.zeros((n, 8))
        dp = dict_partials(lam, self.kappa, self.variant)
        grads = dp @ self.grad_bary  # (n, 10, 2)
        div[:, 0:3] = 1.0 / self.area
        for i in range(3):
            div[:, 3 + i] = grads[:, 3 + i, :] @ self.normals[i]
        for col, i in enumerate(self.tangential_facets):
            div[:, 6 + col] = grads[:, 7 + i, :] @ self.tangents[i]
        return div


def eval_face_bubble(coords, local_facet, variant, eps, lam):
    """Value and gradient of the face bubble for one facet at barycentric points."""
    basis = ScalarLocalBasis.build(coords, eps, variant)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    vals = basis.values(lam)[:, 3 + local_facet]
    grads = basis.gradients(lam)[:, 3 + local_facet, :]
    return vals, grads


def eval_scalar_basis(coords, eps, lam, variant="exponential"):
    """Values (n, 7) and gradients (n, 7, 2) of the enriched scalar basis."""
    basis = ScalarLocalBasis.build(coords, eps, variant)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    return basis.values(lam), basis.gradients(lam)


def eval_vector_basis(coords, eps, lam, variant="exponential", z_local=0):
    """Values (n, 8, 2) and divergences (n, 8) of the enriched vector basis."""
    basis = VectorLocalBasis.build(coords, eps, variant, z_local)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    return basis.values(lam), basis.divergences(lam)


# -- cached moment tables -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentTables:
    """Dimensionless integrals of dictionary products over the reference element.

    ``phiphi[s, t] = (1/|T|) int phi_s phi_t`` and similarly for the partials;
    multiplying by |T| and contracting with the element's barycentric
    gradients yields exact mass/stiffness blocks.
    """

    kappa: float
    variant: str
    phiphi: np.ndarray  # (10, 10)
    dphidphi: np.ndarray  # (10, 10, 3, 3)
    phidphi: np.ndarray  # (10, 10, 3): int phi_s d phi_t / d lam_k
    phi: np.ndarray  # (10,)
    dphi: np.ndarray  # (10, 3)


def _layer_facet(s, variant):
    if variant != "standard" and 3 <= s <= 5:
        return s - 3
    return None


_POLY_RULE_DEGREE = 12


def _pair_rule(ks, kt, kappa, variant):
    if ks is None and kt is None:
        return TriangleRule.conical(_POLY_RULE_DEGREE)
    if variant == "polynomial":
        return kink_rule(kappa, _POLY_RULE_DEGREE)
    if ks is None or kt is None or ks == kt:
        i = ks if ks is not None else kt
        return graded_rule_facet(i, 2.0 * kappa)
    k = 3 - ks - kt
    return graded_rule_vertex(k, kappa)


@lru_cache(maxsize=256)
def scalar_tables(kappa: float, variant: str) -> MomentTables:
    """Build the moment tables for one decay rate and bubble variant."""
    phiphi = np.zeros((DICT_SIZE, DICT_SIZE))
    dphidphi = np.zeros((DICT_SIZE, DICT_SIZE, 3, 3))
    phidphi = np.zeros((DICT_SIZE, DICT_SIZE, 3))
    phi = np.zeros(DICT_SIZE)
    dphi = np.zeros((DICT_SIZE, 3))

    kinds = [_layer_facet(s, variant) for s in range(DICT_SIZE)]

    cache = {}

    def tables_at(rule):
        key = id(rule)
        if key not in cache:
            cache[key] = (
                dict_values(rule.points, kappa, variant),
                dict_partials(rule.points, kappa, variant),
                rule.weights,
            )
        return cache[key]

    for s in range(DICT_SIZE):
        for t in range(s, DICT_SIZE):
            rule = _pair_rule(kinds[s], kinds[t], kappa, variant)
            V, P, w = tables_at(rule)
            phiphi[s, t] = phiphi[t, s] = np.dot(w, V[:, s] * V[:, t])
            block = np.einsum("n,na,nb->ab", w, P[:, s, :], P[:, t, :])
            dphidphi[s, t] = block
            dphidphi[t, s] = block.T
            phidphi[s, t] = np.einsum("n,n,nk->k", w, V[:, s], P[:, t, :])
            if t != s:
                phidphi[t, s] = np.einsum("n,n,nk->k", w, V[:, t], P[:, s, :])

    for s in range(DICT_SIZE):
        rule = _pair_rule(kinds[s], None, kappa, variant) if kinds[s] is not None else _pair_rule(None, None, kappa, variant)
        V, P, w = tables_at(rule)
        phi[s] = np.dot(w, V[:, s])
        dphi[s] = np.einsum("n,na->a", w, P[:, s, :])

    return MomentTables(kappa, variant, phiphi, dphidphi, phidphi, phi, dphi)


def verify_scaling_bounds(coords, eps, variant="exponential", local_facet=0):
    """Measured constants in the layer-bubble scaling bounds.

    c_val  = ||b_F||_T / (|T|^(1/2) (eps/h)^(1/2))
    c_grad = ||grad b_F||_T h / (|T|^(1/2) (h/eps)^(1/2))
    """
    area, grad, _, h, _, _ = _triangle_geometry(coords)
    var = effective_variant(variant, eps, h)
    kappa = h / eps
    if var == "standard":
        rule = TriangleRule.conical(_POLY_RULE_DEGREE)
    elif var == "polynomial":
        rule = kink_rule(kappa, _POLY_RULE_DEGREE)
    else:
        rule = graded_rule_facet(local_facet, 2.0 * kappa, GRADED_CELL_DEGREE)
    V = dict_values(rule.points, kappa, var)[:, 3 + local_facet]
    P = dict_partials(rule.points, kappa, var)[:, 3 + local_facet, :]
    G = P @ grad
    norm_val = np.sqrt(area * np.dot(rule.weights, V * V))
    norm_grad = np.sqrt(area * np.dot(rule.weights, np.einsum("nx,nx->n", G, G)))
    ratio = eps / h
    c_val = norm_val / (np.sqrt(area) * np.sqrt(ratio))
    c_grad = norm_grad * h / (np.sqrt(area) * np.sqrt(1.0 / ratio))
    return float(c_val), float(c_grad)
