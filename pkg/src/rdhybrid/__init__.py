"""Hybrid finite element methods for reaction-dominated diffusion in 2D."""

from . import basis, cgfem, dhfem, driver, estimators, linalg, loads, mesh, phfem, quadrature

__all__ = [
    "basis",
    "cgfem",
    "dhfem",
    "driver",
    "estimators",
    "linalg",
    "loads",
    "mesh",
    "phfem",
    "quadrature",
]
