"""Dual hybrid FEM: flux unknowns condensed onto interior-vertex traces.

The 8-dimensional local space is RT0 + layer face bubbles times the facet
normals + two tangential edge bubbles at the vertex with smallest global id.
Every local field is a sum of dictionary scalars times constant vectors, so
mass and div-div blocks contract cached moment tables with per-element
coefficient tensors.  The skeleton unknowns are the hat-function traces of
interior vertices; homogeneous Dirichlet data is built into that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis as bs
from .linalg import batched_cholesky_solve, solve_spd_sparse
from .loads import FMoments, LoadField, element_kappas, f_moments
from .mesh import Mesh
from .phfem import _as_load, _P1_MASS_INV

__all__ = [
    "DhfemBlocks",
    "DhfemSolution",
    "assemble_local_dual",
    "condense_and_solve_dual",
    "solve_monolithic_dual",
    "postprocess_primal",
    "normal_jump_residuals",
    "galerkin_residual_dual",
]


@dataclass(eq=False)
class DhfemBlocks:
    """Element-local matrices and moments for the dual method."""

    eps: float
    variant: str
    kappa_keys: np.ndarray
    z_local: np.ndarray  # (nt,) fixed vertex for the tangential enrichments
    coeff: np.ndarray  # (nt, 8, 10, 2) constant-vector expansion over the dictionary
    dcoef: np.ndarray  # (nt, 8, 10, 3) coeff contracted with barycentric gradients
    A: np.ndarray  # (nt, 8, 8)
    mass: np.ndarray  # (nt, 8, 8)
    divdiv: np.ndarray  # (nt, 8, 8), A = eps^2 divdiv + mass
    B: np.ndarray  # (nt, 8, 3) coupling -eps <tau.n, hat_v> per local vertex
    load: np.ndarray  # (nt, 8) (f, -eps div tau)
    fdiv: np.ndarray  # (nt, 8) (f, div tau)
    val_int: np.ndarray  # (nt, 8, 2) int tau
    div_int: np.ndarray  # (nt, 8) int div tau
    fm: FMoments

    def group_name(self, key: float) -> str:
        return "standard" if key == 0.0 else self.variant


def _coefficient_tensor(mesh: Mesh):
    """Expansion of the 8 local fields over (dictionary scalar, constant vector)."""
    nt = mesh.n_triangles
    coeff = np.zeros((nt, 8, 10, 2))
    inv2a = 1.0 / (2.0 * mesh.areas)
    coords = mesh.tri_coords
    for i in range(3):
        for v in range(3):
            coeff[:, i, v, :] = (coords[:, v] - coords[:, i]) * inv2a[:, None]
        coeff[:, 3 + i, 3 + i, :] = mesh.outward_normals[:, i]

    z_local = np.argmin(mesh.tris, axis=1)
    tangents = np.empty((nt, 3, 2))
    for i in range(3):
        e = coords[:, (i + 2) % 3] - coords[:, (i + 1) % 3]
        tangents[:, i] = e / np.hypot(e[:, 0], e[:, 1])[:, None]
    for col in range(2):
        # the two facets sharing vertex z, ascending local index
        facet = np.where(z_local == 0, col + 1, np.where(z_local == 1, 2 * col, col))
        rows = np.arange(nt)
        coeff[rows, 6 + col, 7 + facet, :] = tangents[rows, facet]
    return coeff, z_local


def assemble_local_dual(mesh: Mesh, eps: float, f, variant: str = "exponential") -> DhfemBlocks:
    load = _as_load(f)
    nt = mesh.n_triangles
    keys, _ = element_kappas(mesh, eps, variant)
    area = mesh.areas
    coeff, z_local = _coefficient_tensor(mesh)
    dcoef = np.einsum("eisx,ekx->eisk", coeff, mesh.grad_bary)

    mass = np.empty((nt, 8, 8))
    divdiv = np.empty((nt, 8, 8))
    val_int = np.empty((nt, 8, 2))
    for key in np.unique(keys):
        name = "standard" if key == 0.0 else variant
        tab = bs.scalar_tables(float(key), name)
        sel = keys == key
        c = coeff[sel]
        d = dcoef[sel]
        mass[sel] = area[sel, None, None] * np.einsum(
            "eisx,st,ejtx->eij", c, tab.phiphi, c, optimize=True
        )
        tmp = np.einsum("ejtl,stkl->ejsk", d, tab.dphidphi, optimize=True)
        divdiv[sel] = area[sel, None, None] * np.einsum("eisk,ejsk->eij", d, tmp, optimize=True)
        val_int[sel] = area[sel, None, None] * np.einsum("eisx,s->eix", c, tab.phi)

    A = eps**2 * divdiv + mass

    # facet couplings: traces are polynomial for every bubble variant
    B = np.zeros((nt, 8, 3))
    lens = mesh.edge_lengths
    for i in range(3):
        for v in range(3):
            if v != i:
                B[:, i, v] += -eps / 2.0
                B[:, 3 + i, v] += -eps * lens[:, i] / 12.0

    div_int = np.zeros((nt, 8))
    div_int[:, 0:3] = 1.0
    for i in range(3):
        div_int[:, 3 + i] = lens[:, i] / 6.0

    fm = f_moments(mesh, eps, load, variant)
    fdiv = np.einsum("eisk,esk->ei", dcoef, fm.fdphi)
    load8 = -eps * fdiv
    return DhfemBlocks(
        eps, variant, keys, z_local, coeff, dcoef, A, mass, divdiv, B,
        load8, fdiv, val_int, div_int, fm,
    )


@dataclass(eq=False)
class DhfemSolution:
    """Discrete flux sigma_h and skeleton trace w_h (interior vertices)."""

    mesh: Mesh
    eps: float
    variant: str
    sigma: np.ndarray  # (nt, 8)
    w: np.ndarray  # (n_vertices,), zero at boundary vertices
    blocks: DhfemBlocks

    @property
    def n_dof(self) -> int:
        return int(self.mesh.n_interior_vertices)

    def eval_values(self, lam_pts) -> np.ndarray:
        """sigma_h at barycentric points, shape (nt, npts, 2)."""
        lam_pts = np.asarray(lam_pts, dtype=float)
        out = np.empty((self.mesh.n_triangles, lam_pts.shape[0], 2))
        keys = self.blocks.kappa_keys
        for key in np.unique(keys):
            name = self.blocks.group_name(key)
            V = bs.dict_values(lam_pts, float(key), name)
            sel = keys == key
            out[sel] = np.einsum(
                "ei,eisx,ps->epx", self.sigma[sel], self.blocks.coeff[sel], V, optimize=True
            )
        return out

    def eval_divergence(self, lam_pts) -> np.ndarray:
        """div sigma_h at barycentric points, shape (nt, npts)."""
        lam_pts = np.asarray(lam_pts, dtype=float)
        out = np.empty((self.mesh.n_triangles, lam_pts.shape[0]))
        keys = self.blocks.kappa_keys
        for key in np.unique(keys):
            name = self.blocks.group_name(key)
            P = bs.dict_partials(lam_pts, float(key), name)
            sel = keys == key
            out[sel] = np.einsum(
                "ei,eisk,psk->ep", self.sigma[sel], self.blocks.dcoef[sel], P, optimize=True
            )
        return out


def _skeleton_index(mesh: Mesh):
    idx = np.full(mesh.n_vertices, -1, dtype=np.int64)
    idx[mesh.interior_vertices] = np.arange(mesh.n_interior_vertices)
    return idx


def condense_and_solve_dual(
    mesh: Mesh, eps: float, f, variant: str = "exponential"
) -> DhfemSolution:
    """Condense onto interior-vertex traces, solve, reconstruct sigma_h."""
    blocks = assemble_local_dual(mesh, eps, f, variant)
    rhs_stack = np.concatenate([blocks.B, blocks.load[:, :, None]], axis=2)
    X = batched_cholesky_solve(blocks.A, rhs_stack)
    xi, sf = X[:, :, :3], X[:, :, 3]

    idx = _skeleton_index(mesh)
    cols = idx[mesh.tris]  # (nt, 3), -1 on boundary vertices
    nw = mesh.n_interior_vertices

    S_local = np.einsum("tai,taj->tij", blocks.B, xi)
    rows = np.repeat(cols, 3, axis=1).ravel()
    ccols = np.tile(cols, (1, 3)).ravel()
    keep = (rows >= 0) & (ccols >= 0)
    S = sp.coo_matrix(
        (S_local.ravel()[keep], (rows[keep], ccols[keep])), shape=(nw, nw)
    ).tocsr()

    # B already carries the -eps sign of b^dual, so the skeleton system is
    # (B^T A^-1 B) w = B^T sigma_f and sigma = sigma_f - xi w.
    rhs = np.zeros(nw)
    contrib = np.einsum("tai,ta->ti", blocks.B, sf)
    valid = cols >= 0
    np.add.at(rhs, cols[valid], contrib[valid])

    w_skel = solve_spd_sparse(S, rhs)
    w_full = np.zeros(mesh.n_vertices)
    w_full[mesh.interior_vertices] = w_skel

    w_loc = w_full[mesh.tris]
    sigma = sf - np.einsum("tai,ti->ta", xi, w_loc)
    return DhfemSolution(mesh, eps, variant, sigma, w_full, blocks)


def solve_monolithic_dual(
    mesh: Mesh, eps: float, f, variant: str = "exponential"
) -> DhfemSolution:
    """Direct saddle-point solve (oracle for the condensed path)."""
    blocks = assemble_local_dual(mesh, eps, f, variant)
    nt = mesh.n_triangles
    nu = 8 * nt
    idx = _skeleton_index(mesh)
    cols = idx[mesh.tris]
    nw = mesh.n_interior_vertices

    udof = (8 * np.arange(nt)[:, None] + np.arange(8)[None, :]).ravel()
    ar = np.repeat(udof.reshape(nt, 8), 8, axis=1).ravel()
    ac = np.tile(udof.reshape(nt, 8), (1, 8)).ravel()
    A = sp.coo_matrix((blocks.A.ravel(), (ar, ac)), shape=(nu, nu))

    gr = np.repeat(udof.reshape(nt, 8), 3, axis=1).ravel()
    gc = np.tile(cols, (1, 8)).ravel()
    keep = gc >= 0
    G = sp.coo_matrix((blocks.B.ravel()[keep], (gr[keep], gc[keep])), shape=(nu, nw))

    if nw == 0:
        x = spla.spsolve(A.tocsc(), blocks.load.ravel())
        sigma = x.reshape(nt, 8)
        w_full = np.zeros(mesh.n_vertices)
        return DhfemSolution(mesh, eps, variant, sigma, w_full, blocks)

    Ksys = sp.bmat([[A, G], [G.T, None]], format="csc")
    rhs = np.concatenate([blocks.load.ravel(), np.zeros(nw)])
    x = spla.spsolve(Ksys, rhs)
    sigma = x[:nu].reshape(nt, 8)
    w_full = np.zeros(mesh.n_vertices)
    w_full[mesh.interior_vertices] = x[nu:]
    return DhfemSolution(mesh, eps, variant, sigma, w_full, blocks)


@dataclass(eq=False)
class PostprocessedPrimal:
    """u_h^dual = eps div sigma_h + f, evaluable element-wise."""

    sol: DhfemSolution
    load: LoadField

    def eval_values(self, lam_pts) -> np.ndarray:
        lam_pts = np.asarray(lam_pts, dtype=float)
        div = self.sol.eval_divergence(lam_pts)
        xy = np.einsum("ps,esx->epx", lam_pts, self.sol.mesh.tri_coords)
        fv = self.load.func(xy[..., 0], xy[..., 1])
        return self.sol.eps * div + fv

    def project_p0(self) -> np.ndarray:
        b = self.sol.blocks
        mesh = self.sol.mesh
        return (
            self.sol.eps * np.einsum("ti,ti->t", self.sol.sigma, b.div_int) + b.fm.f1
        ) / mesh.areas

    def project_p1(self) -> np.ndarray:
        b = self.sol.blocks
        mesh = self.sol.mesh
        # int u_dual lam_a = eps int div(sigma) lam_a + int f lam_a
        keys = b.kappa_keys
        rhs = np.empty((mesh.n_triangles, 3))
        for key in np.unique(keys):
            tab = bs.scalar_tables(float(key), b.group_name(key))
            sel = keys == key
            divlam = mesh.areas[sel, None, None, None] * tab.phidphi[None, 0:3, :, :]
            rhs[sel] = self.sol.eps * np.einsum(
                "ti,tisk,task->ta", self.sol.sigma[sel], b.dcoef[sel], divlam, optimize=True
            )
        rhs += b.fm.fphi[:, 0:3]
        return np.einsum("ta,ab->tb", rhs, _P1_MASS_INV) / mesh.areas[:, None]


def postprocess_primal(sol: DhfemSolution, f) -> PostprocessedPrimal:
    return PostprocessedPrimal(sol, _as_load(f))


def normal_jump_residuals(sol: DhfemSolution) -> np.ndarray:
    """sum_F int_F [sigma.n] hat_z ds per interior vertex (the constraint)."""
    mesh = sol.mesh
    contrib = np.einsum("tai,ta->ti", sol.blocks.B, sol.sigma) / (-sol.eps)
    res = np.zeros(mesh.n_vertices)
    np.add.at(res, mesh.tris, contrib)
    return res[mesh.interior_vertices]


def galerkin_residual_dual(sol: DhfemSolution) -> float:
    w_loc = sol.w[sol.mesh.tris]
    r = (
        np.einsum("tab,tb->ta", sol.blocks.A, sol.sigma)
        + np.einsum("tai,ti->ta", sol.blocks.B, w_loc)
        - sol.blocks.load
    )
    scale = max(np.linalg.norm(sol.blocks.load), 1e-300)
    return float(np.linalg.norm(r) / scale)
