import numpy as np
import pytest

from rdhybrid import cgfem, phfem
from rdhybrid.driver import ManufacturedProblem
from rdhybrid.mesh import make_structured_square, uniform_refine


def test_no_interior_vertices_zero_solution():
    msh = make_structured_square((0, 0), (1, 1), 1)
    prob = ManufacturedProblem(1e-2)
    sol = cgfem.solve_cg(msh, 1e-2, prob.load)
    assert np.allclose(sol.values, 0.0)
    assert sol.n_dof == 0


def test_zero_load_zero_solution():
    msh = make_structured_square((0, 0), (1, 1), 3)
    sol = cgfem.solve_cg(msh, 0.5, phfem.constant_load(0.0))
    assert np.allclose(sol.values, 0.0)


def test_boundary_values_exactly_zero():
    msh = make_structured_square((0, 0), (1, 1), 4)
    prob = ManufacturedProblem(1e-3)
    sol = cgfem.solve_cg(msh, 1e-3, prob.load)
    assert np.all(sol.values[msh.is_boundary_vertex] == 0.0)


def test_galerkin_orthogonality():
    msh = uniform_refine(make_structured_square((0, 0), (1, 1), 2), 2)
    prob = ManufacturedProblem(1e-4)
    sol = cgfem.solve_cg(msh, 1e-4, prob.load)
    assert cgfem.galerkin_residual_cg(sol, prob.load) <= 1e-9


def test_oscillations_in_singular_regime():
    # reaction-dominated CG rings near the boundary: large overshoot above the
    # interior plateau of u ~ 1 (the robust hybrid projections stay near [0, 1])
    msh = uniform_refine(make_structured_square((0, 0), (1, 1), 4), 1)
    assert msh.n_triangles == 64
    prob = ManufacturedProblem(1e-4)
    sol = cgfem.solve_cg(msh, 1e-4, prob.load)
    assert sol.values.max() > 1.3


def test_smooth_regime_accuracy():
    # for eps = 1 the problem is benign and CG converges normally
    prob = ManufacturedProblem(1.0)
    errs = []
    msh = make_structured_square((0, 0), (1, 1), 2)
    from rdhybrid.driver import l2_error

    for _ in range(3):
        sol = cgfem.solve_cg(msh, 1.0, prob.load)
        errs.append(l2_error(msh, prob.u, sol, 1.0, prob))
        msh = uniform_refine(msh, 2)
    # two NVB passes halve h, so the per-level L2 ratio is ~4
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates[-1] > 1.7  # O(h^2) in L2
