import numpy as np
import pytest

from rdhybrid import phfem
from rdhybrid.driver import ManufacturedProblem
from rdhybrid.mesh import make_structured_square, uniform_refine
from rdhybrid.quadrature import TriangleRule, barycentric_monomial_integral


def unit_mesh(n):
    return make_structured_square((0, 0), (1, 1), n)


def test_local_mass_block_values():
    msh = unit_mesh(1)
    blocks = phfem.assemble_local(msh, 0.5, phfem.constant_load(1.0))
    for t in range(msh.n_triangles):
        a = msh.areas[t]
        M = blocks.M[t]
        assert M[0, 0] == pytest.approx(a / 6.0, rel=1e-12)
        assert M[0, 1] == pytest.approx(a / 12.0, rel=1e-12)


def test_coupling_entries():
    msh = unit_mesh(1)
    eps = 0.37
    blocks = phfem.assemble_local(msh, eps, phfem.constant_load(1.0))
    lens = msh.edge_lengths
    sgn = msh.facet_sign
    for t in range(msh.n_triangles):
        for j in range(3):
            # hat of a vertex on facet j integrates to |F|/2
            for a in range(3):
                expect = 0.0 if a == j else eps * sgn[t, j] * lens[t, j] / 2.0
                assert blocks.B[t, a, j] == pytest.approx(expect, abs=1e-15)
            # element bubble has zero trace
            assert blocks.B[t, 6, j] == 0.0


def test_zero_load_gives_zero_solution():
    msh = unit_mesh(2)
    sol = phfem.condense_and_solve(msh, 1e-2, phfem.constant_load(0.0))
    assert np.allclose(sol.u, 0.0, atol=1e-14)
    assert np.allclose(sol.lam, 0.0, atol=1e-14)


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4])
def test_condensed_matches_monolithic(eps):
    # oracle: full saddle-point solve, componentwise agreement
    msh = uniform_refine(unit_mesh(2), 1)  # 16 elements
    prob = ManufacturedProblem(eps)
    a = phfem.condense_and_solve(msh, eps, prob.load)
    b = phfem.solve_monolithic(msh, eps, prob.load)
    scale_u = np.max(np.abs(b.u)) or 1.0
    scale_l = np.max(np.abs(b.lam)) or 1.0
    assert np.max(np.abs(a.u - b.u)) <= 1e-9 * scale_u
    assert np.max(np.abs(a.lam - b.lam)) <= 1e-9 * scale_l


def test_sign_flip_hook_breaks_equivalence():
    msh = unit_mesh(2)
    prob = ManufacturedProblem(1e-2)
    good = phfem.solve_monolithic(msh, 1e-2, prob.load)
    bad = phfem.condense_and_solve(msh, 1e-2, prob.load, _corrupt_b_sign=True)
    assert np.max(np.abs(bad.u - good.u)) > 1e-6 * np.max(np.abs(good.u))


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4])
def test_facet_jump_orthogonality(eps):
    msh = uniform_refine(unit_mesh(2), 2)
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    res = phfem.constraint_residuals(sol)
    scale = max(np.max(np.abs(sol.u)), 1e-300)
    assert np.max(np.abs(res)) <= 1e-9 * scale


def test_galerkin_consistency():
    msh = uniform_refine(unit_mesh(2), 1)
    prob = ManufacturedProblem(1e-3)
    sol = phfem.condense_and_solve(msh, 1e-3, prob.load)
    assert phfem.galerkin_residual(sol) <= 1e-9


@pytest.mark.parametrize("eps", [1.0, 1e-4, 1e-8])
def test_robustness_smoke_64_elements(eps):
    msh = uniform_refine(unit_mesh(4), 1)  # 64 elements
    assert msh.n_triangles == 64
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    assert np.all(np.isfinite(sol.u))
    assert np.all(np.isfinite(sol.lam))


def test_projection_constants_and_hats():
    msh = unit_mesh(1)
    sol = phfem.condense_and_solve(msh, 0.5, phfem.constant_load(1.0))
    # overwrite coefficients with a known field: u = 3 everywhere
    sol.u[:] = 0.0
    sol.u[:, 0:3] = 3.0
    assert np.allclose(phfem.project_p0(sol), 3.0, atol=1e-13)
    p1 = phfem.project_p1(sol)
    assert np.allclose(p1, 3.0, atol=1e-12)
    # u = lambda_1 on each element has mean 1/3
    sol.u[:] = 0.0
    sol.u[:, 0] = 1.0
    assert np.allclose(phfem.project_p0(sol), 1.0 / 3.0, atol=1e-13)
    p1 = phfem.project_p1(sol)
    expect = np.zeros((msh.n_triangles, 3))
    expect[:, 0] = 1.0
    assert np.allclose(p1, expect, atol=1e-12)


def test_projection_p1_reproduces_p1_with_bubbles_present():
    msh = unit_mesh(2)
    eps = 1e-3
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    sol.u[:] = 0.0
    sol.u[:, 0] = 2.0
    sol.u[:, 1] = -1.0
    sol.u[:, 2] = 0.5
    p1 = phfem.project_p1(sol)
    assert np.allclose(p1[:, 0], 2.0, atol=1e-12)
    assert np.allclose(p1[:, 1], -1.0, atol=1e-12)
    assert np.allclose(p1[:, 2], 0.5, atol=1e-12)


def test_skeleton_dimension_is_facet_count():
    msh = unit_mesh(3)
    prob = ManufacturedProblem(1e-2)
    sol = phfem.condense_and_solve(msh, 1e-2, prob.load)
    assert sol.lam.size == msh.n_facets
    assert sol.n_dof == msh.n_facets


def test_local_matrix_against_direct_quadrature():
    # independent route: integrate basis products with a fresh graded rule
    from rdhybrid import basis as bs
    from rdhybrid.quadrature import graded_rule_vertex, graded_rule_facet

    msh = unit_mesh(1)
    eps = 0.02
    blocks = phfem.assemble_local(msh, eps, phfem.constant_load(1.0))
    t = 0
    coords = msh.tri_coords[t]
    kappa = msh.h[t] / eps
    basis = bs.ScalarLocalBasis.build(coords, eps)
    area = msh.areas[t]

    def entry(i, j, rule):
        V = basis.values(rule.points)
        G = basis.gradients(rule.points)
        m = area * np.dot(rule.weights, V[:, i] * V[:, j])
        k = area * np.dot(rule.weights, np.einsum("nx,nx->n", G[:, i], G[:, j]))
        return eps**2 * k + m

    # hat-hat entry via the plain rule, bubble pairs via matched graded rules
    assert entry(0, 1, TriangleRule.conical(12)) == pytest.approx(
        blocks.A[t, 0, 1], rel=1e-12
    )
    assert entry(3, 3, graded_rule_facet(0, 2 * kappa)) == pytest.approx(
        blocks.A[t, 3, 3], rel=1e-10
    )
    assert entry(3, 4, graded_rule_vertex(2, kappa)) == pytest.approx(
        blocks.A[t, 3, 4], rel=1e-9
    )
    assert entry(0, 4, graded_rule_facet(1, 2 * kappa)) == pytest.approx(
        blocks.A[t, 0, 4], rel=1e-10
    )


def test_load_constant_path_matches_tables():
    msh = unit_mesh(2)
    eps = 0.01
    blocks = phfem.assemble_local(msh, eps, phfem.constant_load(2.5))
    # (f, lam_i) = 2.5 |T| / 3 for constant f
    assert np.allclose(blocks.load[:, 0], 2.5 * msh.areas / 3.0, rtol=1e-12)
    # (f, eta_T) = 2.5 |T| / 60
    assert np.allclose(blocks.load[:, 6], 2.5 * msh.areas / 60.0, rtol=1e-12)
