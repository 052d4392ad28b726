"""Lowest-order continuous Galerkin baseline on the same meshes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import basis as bs
from .linalg import solve_spd_sparse
from .loads import element_kappas, f_moments
from .mesh import Mesh
from .phfem import _as_load


@dataclass(eq=False)
class CgSolution:
    """Nodal values; exactly zero on boundary vertices."""

    mesh: Mesh
    eps: float
    values: np.ndarray  # (n_vertices,)

    @property
    def n_dof(self) -> int:
        return int(self.mesh.n_interior_vertices)

    def eval_values(self, lam_pts) -> np.ndarray:
        """u_h^cG at barycentric points, shape (nt, npts)."""
        lam_pts = np.asarray(lam_pts, dtype=float)
        nodal = self.values[self.mesh.tris]  # (nt, 3)
        return nodal @ lam_pts.T

    def eval_gradients(self, lam_pts) -> np.ndarray:
        lam_pts = np.asarray(lam_pts, dtype=float)
        nodal = self.values[self.mesh.tris]
        g = np.einsum("ti,tix->tx", nodal, self.mesh.grad_bary)
        return np.broadcast_to(g[:, None, :], (self.mesh.n_triangles, lam_pts.shape[0], 2))


def solve_cg(mesh: Mesh, eps: float, f, variant: str = "exponential") -> CgSolution:
    """eps^2 (grad u, grad v) + (u, v) = (f, v) over P1 cap H^1_0.

    ``variant`` only affects the load quadrature bookkeeping (shared with the
    hybrid methods for comparable data oscillation).
    """
    load = _as_load(f)
    nt = mesh.n_triangles
    area = mesh.areas
    gram = np.einsum("tix,tjx->tij", mesh.grad_bary, mesh.grad_bary)

    # P1 mass and stiffness
    Mloc = area[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    Kloc = area[:, None, None] * gram
    Aloc = eps**2 * Kloc + Mloc

    fm = f_moments(mesh, eps, load, variant)
    bloc = fm.fphi[:, 0:3]

    nv = mesh.n_vertices
    rows = np.repeat(mesh.tris, 3, axis=1).ravel()
    cols = np.tile(mesh.tris, (1, 3)).ravel()
    A = sp.coo_matrix((Aloc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    b = np.zeros(nv)
    np.add.at(b, mesh.tris, bloc)

    interior = mesh.interior_vertices
    values = np.zeros(nv)
    if interior.size:
        Aii = A[interior][:, interior]
        values[interior] = solve_spd_sparse(Aii, b[interior])
    return CgSolution(mesh, eps, values)


def galerkin_residual_cg(sol: CgSolution, f, variant: str = "exponential") -> float:
    """Relative residual over all interior hat test functions."""
    mesh = sol.mesh
    eps = sol.eps
    load = _as_load(f)
    gram = np.einsum("tix,tjx->tij", mesh.grad_bary, mesh.grad_bary)
    Mloc = mesh.areas[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    Aloc = eps**2 * mesh.areas[:, None, None] * gram + Mloc
    fm = f_moments(mesh, eps, load, variant)
    nodal = sol.values[mesh.tris]
    r = np.zeros(mesh.n_vertices)
    np.add.at(r, mesh.tris, np.einsum("tij,tj->ti", Aloc, nodal) - fm.fphi[:, 0:3])
    ri = r[mesh.interior_vertices]
    scale = max(np.linalg.norm(fm.fphi[:, 0:3]), 1e-300)
    return float(np.linalg.norm(ri) / scale)
