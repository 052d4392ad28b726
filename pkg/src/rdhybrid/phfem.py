"""Primal hybrid FEM with element-local static condensation.

Each element carries the 7-dimensional enriched space (P1, three layer face
bubbles, element bubble); the multiplier space has one constant per facet.
The local problems are solved element by element and the global system is
the Schur complement on the facet multipliers, so its dimension equals the
number of edges.  Facet orientation: the multiplier basis on facet F acts
with sign +1 from the first adjacent element (the facet's canonical normal)
and -1 from the second, which telescopes the boundary pairings to jumps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis as bs
from .linalg import batched_cholesky_solve, solve_spd_sparse
from .loads import FMoments, LoadField, constant_load, element_kappas, f_moments, smooth_load
from .mesh import Mesh

__all__ = [
    "PhfemBlocks",
    "PhfemSolution",
    "assemble_local",
    "condense_and_solve",
    "solve_monolithic",
    "project_p0",
    "project_p1",
    "constraint_residuals",
    "galerkin_residual",
    "constant_load",
    "smooth_load",
]

_P1_MASS_INV = 3.0 * np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]])


@dataclass(eq=False)
class PhfemBlocks:
    """Element-local matrices and moments for the primal method."""

    eps: float
    variant: str
    kappa_keys: np.ndarray  # (nt,) table keys (0.0 in the standard regime)
    A: np.ndarray  # (nt, 7, 7) local a_T
    M: np.ndarray  # (nt, 7, 7) mass part
    K: np.ndarray  # (nt, 7, 7) gradient part, A = eps^2 K + M
    B: np.ndarray  # (nt, 7, 3) multiplier coupling eps * sign * facet trace integral
    load: np.ndarray  # (nt, 7) (f, phi_i)_T
    phi_int: np.ndarray  # (nt, 7) int phi_i
    dphi_int: np.ndarray  # (nt, 7, 2) int grad phi_i
    fm: FMoments

    def group_name(self, key: float) -> str:
        return "standard" if key == 0.0 else self.variant


def _as_load(f) -> LoadField:
    if isinstance(f, LoadField):
        return f
    if np.isscalar(f):
        return constant_load(float(f))
    return smooth_load(f)


def assemble_local(mesh: Mesh, eps: float, f, variant: str = "exponential") -> PhfemBlocks:
    load = _as_load(f)
    nt = mesh.n_triangles
    keys, _ = element_kappas(mesh, eps, variant)
    area = mesh.areas
    gram = np.einsum("tix,tjx->tij", mesh.grad_bary, mesh.grad_bary)

    M = np.empty((nt, 7, 7))
    K = np.empty((nt, 7, 7))
    phi_int = np.empty((nt, 7))

    for key in np.unique(keys):
        name = "standard" if key == 0.0 else variant
        tab = bs.scalar_tables(float(key), name)
        sel = keys == key
        M[sel] = area[sel, None, None] * tab.phiphi[None, :7, :7]
        K[sel] = area[sel, None, None] * np.einsum(
            "mnij,eij->emn", tab.dphidphi[:7, :7], gram[sel]
        )
        phi_int[sel] = area[sel, None] * tab.phi[None, :7]

    A = eps**2 * K + M

    # multiplier coupling and gradient moments are variant independent:
    # every bubble variant has the same polynomial trace on the boundary
    B = np.zeros((nt, 7, 3))
    lens = mesh.edge_lengths
    sgn = mesh.facet_sign
    for j in range(3):
        for a in range(3):
            if a != j:
                B[:, a, j] = eps * sgn[:, j] * lens[:, j] / 2.0
        B[:, 3 + j, j] = eps * sgn[:, j] * lens[:, j] / 6.0

    dphi_int = np.zeros((nt, 7, 2))
    dphi_int[:, 0:3, :] = area[:, None, None] * mesh.grad_bary
    for j in range(3):
        dphi_int[:, 3 + j, :] = (lens[:, j] / 6.0)[:, None] * mesh.outward_normals[:, j]

    fm = f_moments(mesh, eps, load, variant)
    return PhfemBlocks(eps, variant, keys, A, M, K, B, fm.fphi[:, :7].copy(), phi_int, dphi_int, fm)


@dataclass(eq=False)
class PhfemSolution:
    """Discrete solution (u_h, lambda_h) plus the local blocks that built it."""

    mesh: Mesh
    eps: float
    variant: str
    u: np.ndarray  # (nt, 7) element coefficients
    lam: np.ndarray  # (n_facets,) multiplier coefficients
    blocks: PhfemBlocks

    @property
    def n_dof(self) -> int:
        return self.lam.size

    def eval_values(self, lam_pts) -> np.ndarray:
        """u_h at the given barycentric points, shape (nt, npts)."""
        lam_pts = np.asarray(lam_pts, dtype=float)
        out = np.empty((self.mesh.n_triangles, lam_pts.shape[0]))
        keys = self.blocks.kappa_keys
        for key in np.unique(keys):
            name = self.blocks.group_name(key)
            V = bs.dict_values(lam_pts, float(key), name)[:, :7]
            sel = keys == key
            out[sel] = self.u[sel] @ V.T
        return out

    def eval_gradients(self, lam_pts) -> np.ndarray:
        """grad u_h at barycentric points, shape (nt, npts, 2)."""
        lam_pts = np.asarray(lam_pts, dtype=float)
        out = np.empty((self.mesh.n_triangles, lam_pts.shape[0], 2))
        keys = self.blocks.kappa_keys
        for key in np.unique(keys):
            name = self.blocks.group_name(key)
            P = bs.dict_partials(lam_pts, float(key), name)[:, :7, :]
            sel = keys == key
            out[sel] = np.einsum("ti,pik,tkx->tpx", self.u[sel], P, self.mesh.grad_bary[sel])
        return out


def _condense(mesh: Mesh, blocks: PhfemBlocks, corrupt_sign: bool = False):
    B = blocks.B
    if corrupt_sign:
        # test hook: drop the orientation sign so jumps no longer telescope
        B = np.abs(B)
    rhs_stack = np.concatenate([B, blocks.load[:, :, None]], axis=2)
    X = batched_cholesky_solve(blocks.A, rhs_stack)
    xi, uf = X[:, :, :3], X[:, :, 3]

    ne = mesh.n_facets
    S_local = np.einsum("tai,taj->tij", B, xi)
    rows = np.repeat(mesh.tri_facets, 3, axis=1).ravel()
    cols = np.tile(mesh.tri_facets, (1, 3)).ravel()
    S = sp.coo_matrix((S_local.ravel(), (rows, cols)), shape=(ne, ne)).tocsr()

    rhs = np.zeros(ne)
    np.add.at(rhs, mesh.tri_facets, -np.einsum("tai,ta->ti", B, uf))
    return S, rhs, xi, uf


def condense_and_solve(
    mesh: Mesh, eps: float, f, variant: str = "exponential", _corrupt_b_sign: bool = False
) -> PhfemSolution:
    """Assemble, condense onto the facet multipliers, solve, reconstruct u_h."""
    blocks = assemble_local(mesh, eps, f, variant)
    S, rhs, xi, uf = _condense(mesh, blocks, corrupt_sign=_corrupt_b_sign)
    lam = solve_spd_sparse(S, rhs)
    u = uf + np.einsum("tai,ti->ta", xi, lam[mesh.tri_facets])
    return PhfemSolution(mesh, eps, variant, u, lam, blocks)


def solve_monolithic(mesh: Mesh, eps: float, f, variant: str = "exponential") -> PhfemSolution:
    """Direct solve of the full saddle-point system (oracle for condensation)."""
    blocks = assemble_local(mesh, eps, f, variant)
    nt, ne = mesh.n_triangles, mesh.n_facets
    nu = 7 * nt
    udof = (7 * np.arange(nt)[:, None] + np.arange(7)[None, :]).ravel()

    ar = np.repeat(udof.reshape(nt, 7), 7, axis=1).ravel()
    ac = np.tile(udof.reshape(nt, 7), (1, 7)).ravel()
    A = sp.coo_matrix((blocks.A.ravel(), (ar, ac)), shape=(nu, nu))

    gr = np.repeat(udof.reshape(nt, 7), 3, axis=1).ravel()
    gc = np.tile(mesh.tri_facets, (1, 7)).reshape(nt, 7, 3).ravel()
    G = sp.coo_matrix((blocks.B.ravel(), (gr, gc)), shape=(nu, ne))

    Ksys = sp.bmat([[A, -G], [-G.T, None]], format="csc")
    rhs = np.concatenate([blocks.load.ravel(), np.zeros(ne)])
    x = spla.spsolve(Ksys, rhs)
    u = x[:nu].reshape(nt, 7)
    lam = x[nu:]
    return PhfemSolution(mesh, eps, variant, u, lam, blocks)


def project_p0(sol: PhfemSolution) -> np.ndarray:
    """Element means of u_h."""
    return np.einsum("ta,ta->t", sol.u, sol.blocks.phi_int) / sol.mesh.areas


def project_p1(sol: PhfemSolution) -> np.ndarray:
    """L2-best P1 fit per element, returned as hat coefficients (nt, 3)."""
    rhs = np.einsum("ti,tia->ta", sol.u, sol.blocks.M[:, :, :3])
    return np.einsum("ta,ab->tb", rhs, _P1_MASS_INV) / sol.mesh.areas[:, None]


def constraint_residuals(sol: PhfemSolution) -> np.ndarray:
    """int_F [u_h] ds per facet (trace on boundary facets)."""
    res = np.zeros(sol.mesh.n_facets)
    np.add.at(
        res, sol.mesh.tri_facets, np.einsum("tai,ta->ti", sol.blocks.B, sol.u) / sol.eps
    )
    return res


def galerkin_residual(sol: PhfemSolution) -> float:
    """Relative residual of the first discrete equation over all test functions."""
    r = (
        np.einsum("tab,tb->ta", sol.blocks.A, sol.u)
        - np.einsum("tai,ti->ta", sol.blocks.B, sol.lam[sol.mesh.tri_facets])
        - sol.blocks.load
    )
    scale = max(np.linalg.norm(sol.blocks.load), 1e-300)
    return float(np.linalg.norm(r) / scale)
