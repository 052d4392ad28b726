r"""Element-wise a posteriori error indicators for both hybrid methods.

rho(T)^2 = ||(1-P0)(u_h - f)||_T^2 + eps^2 ||(1-P0) grad u_h||_T^2
           + eps ||[u_h]||_{dT}^2 + eps^2 h_T ||[grad u_h x n]||_{dT}^2
xi(T)^2  = ||(1-P0)(eps div s_h - f)||_T^2 + ||(1-P0) s_h||_T^2
           + min(eps, h_T) ||[s_h . n]||_{dT \ Gamma}^2

Volume terms are evaluated from the assembled local matrices and the f
moments, so no extra volume quadrature is needed.  Jump integrands are
polynomial except the tangential gradient traces of the exponential bubbles,
which get a both-ends graded 1D rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import basis as bs
from .cgfem import CgSolution
from .dhfem import DhfemSolution
from .phfem import PhfemSolution
from .quadrature import facet_rule, graded_facet_rule_1d

# exact integrals of products of {1-s, s, s(1-s)} over [0, 1]
_JUMP_GRAM = np.array(
    [
        [1.0 / 3.0, 1.0 / 6.0, 1.0 / 12.0],
        [1.0 / 6.0, 1.0 / 3.0, 1.0 / 12.0],
        [1.0 / 12.0, 1.0 / 12.0, 1.0 / 30.0],
    ]
)


@dataclass(eq=False)
class EstimateReport:
    """Per-element squared indicator with its separated terms."""

    local2: np.ndarray  # (nt,)
    terms: dict = field(default_factory=dict)  # name -> (nt,) squared contributions
    reliability_caveat: str | None = None

    @property
    def total(self) -> float:
        return float(np.sqrt(self.local2.sum()))

    def term_total(self, name: str) -> float:
        return float(np.sqrt(self.terms[name].sum()))


def _clip(x):
    return np.maximum(x, 0.0)


def _facet_vertex_slots(mesh):
    """Local indices of each facet's two global nodes within each adjacent element."""
    out = np.full((mesh.n_facets, 2, 2), -1, dtype=np.int64)  # (facet, side, node)
    for side in range(2):
        t = mesh.facet_elems[:, side]
        ok = t >= 0
        tv = mesh.tris[t[ok]]  # (m, 3)
        for node in range(2):
            v = mesh.facet_nodes[ok, node]
            out[ok, side, node] = np.argmax(tv == v[:, None], axis=1)
    return out


def solution_jump_integrals(sol: PhfemSolution) -> np.ndarray:
    """int_F [u_h]^2 ds per facet; trace convention on the boundary."""
    mesh = sol.mesh
    slots = _facet_vertex_slots(mesh)
    coeff = np.zeros((mesh.n_facets, 3))
    for side, sign in ((0, 1.0), (1, -1.0)):
        t = mesh.facet_elems[:, side]
        ok = t >= 0
        tt = t[ok]
        loc = mesh.facet_local[ok, side]
        coeff[ok, 0] += sign * sol.u[tt, slots[ok, side, 0]]
        coeff[ok, 1] += sign * sol.u[tt, slots[ok, side, 1]]
        coeff[ok, 2] += sign * sol.u[tt, 3 + loc]
    quad = np.einsum("fa,ab,fb->f", coeff, _JUMP_GRAM, coeff)
    return mesh.facet_lengths * quad


def tangential_jump_integrals(sol: PhfemSolution) -> np.ndarray:
    """int_F [grad u_h x n]^2 ds per facet (same canonical normal both sides)."""
    mesh = sol.mesh
    blocks = sol.blocks
    slots = _facet_vertex_slots(mesh)
    keys = blocks.kappa_keys

    # pick one 1D rule per facet, graded for the stiffest adjacent bubble
    rate = np.zeros(mesh.n_facets)
    for side in range(2):
        t = mesh.facet_elems[:, side]
        ok = t >= 0
        rate[ok] = np.maximum(rate[ok], 2.0 * keys[t[ok]])

    out = np.zeros(mesh.n_facets)
    for r in np.unique(rate):
        fsel = np.nonzero(rate == r)[0]
        if r == 0.0:
            s, w = facet_rule(10)
        else:
            s, w = graded_facet_rule_1d(float(r), n=6)
        npts = s.size
        jump = np.zeros((fsel.size, npts))
        nrm = mesh.facet_normals[fsel]
        for side, sign in ((0, 1.0), (1, -1.0)):
            t = mesh.facet_elems[fsel, side]
            ok = t >= 0
            tt = t[ok]
            lam = np.zeros((tt.size, npts, 3))
            rows = np.arange(tt.size)
            lam[rows[:, None], :, slots[fsel[ok], side, 0][:, None]] = 1.0 - s[None, :]
            lam[rows[:, None], :, slots[fsel[ok], side, 1][:, None]] = s[None, :]
            for key in np.unique(keys[tt]):
                name = blocks.group_name(key)
                esel = keys[tt] == key
                P = bs.dict_partials(lam[esel], float(key), name)[..., :7, :]
                grads = np.einsum(
                    "ti,tpik,tkx->tpx", sol.u[tt[esel]], P, mesh.grad_bary[tt[esel]]
                )
                n_f = nrm[ok][esel]
                cross = grads[..., 0] * n_f[:, None, 1] - grads[..., 1] * n_f[:, None, 0]
                rows_sel = np.nonzero(ok)[0][esel]
                jump[rows_sel] += sign * cross
        out[fsel] = mesh.facet_lengths[fsel] * (jump**2 @ w)
    return out


def estimate_rho(sol: PhfemSolution, domain_convex: bool = True) -> EstimateReport:
    """Indicator for the primal method; reliable for convex domains."""
    mesh = sol.mesh
    eps = sol.eps
    b = sol.blocks
    fm = b.fm
    area = mesh.areas
    u = sol.u

    uMu = np.einsum("ti,tij,tj->t", u, b.M, u)
    uf = np.einsum("ti,ti->t", u, fm.fphi[:, :7])
    mean = np.einsum("ti,ti->t", u, b.phi_int) - fm.f1
    vol = _clip(uMu - 2.0 * uf + fm.f2 - mean**2 / area)

    uKu = np.einsum("ti,tij,tj->t", u, b.K, u)
    gmean = np.einsum("ti,tix->tx", u, b.dphi_int)
    grad = eps**2 * _clip(uKu - np.einsum("tx,tx->t", gmean, gmean) / area)

    sj = solution_jump_integrals(sol)
    tj = tangential_jump_integrals(sol)
    sj_t = eps * sj[mesh.tri_facets].sum(axis=1)
    tj_t = eps**2 * mesh.h * tj[mesh.tri_facets].sum(axis=1)

    local2 = vol + grad + sj_t + tj_t
    caveat = None if domain_convex else (
        "reliability of rho is proved for convex domains only"
    )
    return EstimateReport(
        local2,
        {
            "volume_residual": vol,
            "gradient_projection": grad,
            "solution_jump": sj_t,
            "tangential_jump": tj_t,
        },
        reliability_caveat=caveat,
    )


def normal_jump_integrals(sol: DhfemSolution) -> np.ndarray:
    """int_F [sigma_h . n]^2 ds per interior facet (zero rows for boundary)."""
    mesh = sol.mesh
    coeff = np.zeros((mesh.n_facets, 2))  # constant and bubble trace parts
    for side, orient in ((0, 1.0), (1, -1.0)):
        t = mesh.facet_elems[:, side]
        ok = t >= 0
        tt = t[ok]
        loc = mesh.facet_local[ok, side]
        # trace along the canonical facet normal
        s_elem = mesh.facet_sign[tt, loc]
        coeff[ok, 0] += orient * s_elem * sol.sigma[tt, loc] / mesh.facet_lengths[ok]
        coeff[ok, 1] += orient * s_elem * sol.sigma[tt, 3 + loc]
    quad = (
        coeff[:, 0] ** 2
        + coeff[:, 0] * coeff[:, 1] / 3.0
        + coeff[:, 1] ** 2 / 30.0
    )
    out = mesh.facet_lengths * quad
    out[mesh.is_boundary_facet] = 0.0
    return out


def estimate_xi(sol: DhfemSolution) -> EstimateReport:
    """Indicator for the dual method; reliable without convexity assumptions."""
    mesh = sol.mesh
    eps = sol.eps
    b = sol.blocks
    fm = b.fm
    area = mesh.areas
    s = sol.sigma

    sDDs = np.einsum("ti,tij,tj->t", s, b.divdiv, s)
    sfd = np.einsum("ti,ti->t", s, b.fdiv)
    mean = eps * np.einsum("ti,ti->t", s, b.div_int) - fm.f1
    vol = _clip(eps**2 * sDDs - 2.0 * eps * sfd + fm.f2 - mean**2 / area)

    sMs = np.einsum("ti,tij,tj->t", s, b.mass, s)
    vmean = np.einsum("ti,tix->tx", s, b.val_int)
    flux = _clip(sMs - np.einsum("tx,tx->t", vmean, vmean) / area)

    nj = normal_jump_integrals(sol)
    nj_t = np.minimum(eps, mesh.h) * nj[mesh.tri_facets].sum(axis=1)

    local2 = vol + flux + nj_t
    return EstimateReport(
        local2,
        {
            "volume_residual": vol,
            "flux_projection": flux,
            "normal_jump": nj_t,
        },
    )


def oscillation(sol) -> np.ndarray:
    """Data oscillation ||(1 - P0) f||_T per element, squared."""
    fm = sol.blocks.fm
    return _clip(fm.f2 - fm.f1**2 / sol.mesh.areas)


def cg_is_unsupported(solution) -> bool:
    """No estimator is defined for the continuous Galerkin baseline here."""
    return isinstance(solution, CgSolution)
