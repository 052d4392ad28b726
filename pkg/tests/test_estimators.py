import numpy as np
import pytest

from rdhybrid import dhfem, estimators, phfem
from rdhybrid.driver import ManufacturedProblem
from rdhybrid.mesh import make_structured_square, uniform_refine
from rdhybrid.quadrature import facet_rule, graded_facet_rule_1d, layered_rule


def unit_mesh(n):
    return make_structured_square((0, 0), (1, 1), n)


def reference_rho(sol, prob):
    """Slow direct-quadrature route for every rho term (independent oracle)."""
    mesh = sol.mesh
    eps = sol.eps
    rate = 2.0 * float(mesh.h.max()) / eps
    rule = layered_rule(max(rate, 4.0))
    vol = np.zeros(mesh.n_triangles)
    grad = np.zeros(mesh.n_triangles)
    uh = sol.eval_values(rule.points)
    gh = sol.eval_gradients(rule.points)
    for t in range(mesh.n_triangles):
        xy = rule.points @ mesh.tri_coords[t]
        g = uh[t] - prob.f(xy[:, 0], xy[:, 1])
        a = mesh.areas[t]
        mean = a * np.dot(rule.weights, g) / a
        vol[t] = a * np.dot(rule.weights, (g - mean) ** 2)
        gmean = np.einsum("p,px->x", rule.weights, gh[t])
        d = gh[t] - gmean
        grad[t] = eps**2 * a * np.dot(rule.weights, np.einsum("px,px->p", d, d))

    # facet terms by dense 1D quadrature of the actual traces
    sj = np.zeros(mesh.n_facets)
    tj = np.zeros(mesh.n_facets)
    s, w = graded_facet_rule_1d(max(rate, 4.0), n=8)
    for f in range(mesh.n_facets):
        n_f = mesh.facet_normals[f]
        val = np.zeros((2, s.size))
        tan = np.zeros((2, s.size))
        for side in range(2):
            t = mesh.facet_elems[f, side]
            if t < 0:
                continue
            tv = mesh.tris[t]
            lam = np.zeros((s.size, 3))
            lam[:, np.argmax(tv == mesh.facet_nodes[f, 0])] = 1 - s
            lam[:, np.argmax(tv == mesh.facet_nodes[f, 1])] = s
            val[side] = sol.eval_values(lam)[t]
            ghs = sol.eval_gradients(lam)[t]
            tan[side] = ghs[:, 0] * n_f[1] - ghs[:, 1] * n_f[0]
        L = mesh.facet_lengths[f]
        sj[f] = L * np.dot(w, (val[0] - val[1]) ** 2)
        tj[f] = L * np.dot(w, (tan[0] - tan[1]) ** 2)
    loc = (
        vol
        + grad
        + eps * sj[mesh.tri_facets].sum(axis=1)
        + eps**2 * mesh.h * tj[mesh.tri_facets].sum(axis=1)
    )
    return loc, vol, grad


def test_rho_zero_for_zero_data():
    msh = unit_mesh(2)
    sol = phfem.condense_and_solve(msh, 1e-2, phfem.constant_load(0.0))
    rep = estimators.estimate_rho(sol)
    assert rep.total == pytest.approx(0.0, abs=1e-12)


def test_rho_constant_field_boundary_jump_only():
    # u_h = c with f = c: only the boundary solution-jump term survives
    msh = unit_mesh(1)
    eps = 0.3
    c = 2.0
    sol = phfem.condense_and_solve(msh, eps, phfem.constant_load(c))
    sol.u[:] = 0.0
    sol.u[:, 0:3] = c
    rep = estimators.estimate_rho(sol)
    # the projection terms cancel only to rounding in the O(1) matrix products
    assert rep.term_total("volume_residual") ** 2 <= 1e-12 * c**4
    assert rep.term_total("gradient_projection") ** 2 <= 1e-12 * c**4
    assert rep.term_total("tangential_jump") ** 2 <= 1e-12 * c**4
    # per boundary element: eps * c^2 * |dT cap Gamma|
    expect = np.zeros(msh.n_triangles)
    for f in np.nonzero(msh.is_boundary_facet)[0]:
        t = msh.facet_elems[f, 0]
        expect[t] += eps * c**2 * msh.facet_lengths[f]
    assert np.allclose(rep.terms["solution_jump"], expect, rtol=1e-12)


def test_rho_matches_direct_quadrature():
    msh = uniform_refine(unit_mesh(2), 1)
    eps = 5e-2
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    rep = estimators.estimate_rho(sol)
    loc, vol, grad = reference_rho(sol, prob)
    assert np.allclose(rep.terms["volume_residual"], vol, rtol=1e-6, atol=1e-12)
    assert np.allclose(rep.terms["gradient_projection"], grad, rtol=1e-6, atol=1e-12)
    assert np.allclose(rep.local2, loc, rtol=1e-6, atol=1e-12)


def test_rho_projection_idempotence():
    # replacing u_h by its element means kills both projection terms
    msh = unit_mesh(2)
    eps = 1e-2
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    means = phfem.project_p0(sol)
    sol.u[:] = 0.0
    sol.u[:, 0:3] = means[:, None]
    rep = estimators.estimate_rho(sol)
    scale = float(means.max() ** 2)
    assert rep.term_total("gradient_projection") ** 2 <= 1e-12 * scale
    # volume term reduces to the oscillation of f around the element data
    vol = rep.terms["volume_residual"]
    osc_f = estimators.oscillation(sol)
    um = means * msh.areas
    direct = osc_f + 0.0 * um
    # ||(1-P0)(c - f)||^2 == ||(1-P0) f||^2 for element-wise constant c
    assert np.allclose(vol, direct, rtol=1e-9, atol=1e-14)


def test_global_total_additivity():
    msh = unit_mesh(3)
    eps = 1e-3
    prob = ManufacturedProblem(eps)
    sol = phfem.condense_and_solve(msh, eps, prob.load)
    rep = estimators.estimate_rho(sol)
    stacked = sum(rep.terms.values())
    assert np.allclose(stacked, rep.local2, rtol=1e-12)
    assert np.all(rep.local2 >= 0.0)
    assert rep.total == pytest.approx(np.sqrt(rep.local2.sum()), rel=1e-15)


def test_xi_zero_for_zero_data():
    msh = unit_mesh(2)
    sol = dhfem.condense_and_solve_dual(msh, 1e-2, phfem.constant_load(0.0))
    rep = estimators.estimate_xi(sol)
    assert rep.total == pytest.approx(0.0, abs=1e-12)


def test_xi_constant_flux_field():
    # sigma_h = constant vector globally, f = 0: all terms vanish
    msh = unit_mesh(2)
    eps = 0.2
    sol = dhfem.condense_and_solve_dual(msh, eps, phfem.constant_load(0.0))
    q = np.array([0.3, -0.7])
    # RT0 coefficients reproducing a constant field: normal trace on each facet
    for t in range(msh.n_triangles):
        for i in range(3):
            sol.sigma[t, i] = msh.edge_lengths[t, i] * (
                msh.outward_normals[t, i] @ q
            )
        sol.sigma[t, 3:] = 0.0
    rep = estimators.estimate_xi(sol)
    # exact zero up to rounding in the O(1) cancellations
    assert rep.total**2 <= 1e-12 * float(q @ q) ** 2
    assert rep.term_total("normal_jump") == 0.0


def test_xi_matches_direct_quadrature():
    msh = uniform_refine(unit_mesh(2), 1)
    eps = 5e-2
    prob = ManufacturedProblem(eps)
    sol = dhfem.condense_and_solve_dual(msh, eps, prob.load)
    rep = estimators.estimate_xi(sol)

    rate = 2.0 * float(msh.h.max()) / eps
    rule = layered_rule(max(rate, 4.0))
    div = sol.eval_divergence(rule.points)
    vals = sol.eval_values(rule.points)
    vol = np.zeros(msh.n_triangles)
    flux = np.zeros(msh.n_triangles)
    for t in range(msh.n_triangles):
        xy = rule.points @ msh.tri_coords[t]
        g = eps * div[t] - prob.f(xy[:, 0], xy[:, 1])
        a = msh.areas[t]
        vol[t] = a * np.dot(rule.weights, (g - np.dot(rule.weights, g)) ** 2)
        vmean = np.einsum("p,px->x", rule.weights, vals[t])
        d = vals[t] - vmean
        flux[t] = a * np.dot(rule.weights, np.einsum("px,px->p", d, d))
    assert np.allclose(rep.terms["volume_residual"], vol, rtol=1e-6, atol=1e-12)
    assert np.allclose(rep.terms["flux_projection"], flux, rtol=1e-6, atol=1e-12)

    # normal jumps by explicit facet quadrature
    s, w = facet_rule(8)
    nj = np.zeros(msh.n_facets)
    for f in np.nonzero(~msh.is_boundary_facet)[0]:
        n_f = msh.facet_normals[f]
        tr = np.zeros((2, s.size))
        for side in range(2):
            t = msh.facet_elems[f, side]
            tv = msh.tris[t]
            lam = np.zeros((s.size, 3))
            lam[:, np.argmax(tv == msh.facet_nodes[f, 0])] = 1 - s
            lam[:, np.argmax(tv == msh.facet_nodes[f, 1])] = s
            tr[side] = sol.eval_values(lam)[t] @ n_f
        nj[f] = msh.facet_lengths[f] * np.dot(w, (tr[0] - tr[1]) ** 2)
    expect = np.minimum(eps, msh.h) * nj[msh.tri_facets].sum(axis=1)
    assert np.allclose(rep.terms["normal_jump"], expect, rtol=1e-8, atol=1e-13)


def test_xi_excludes_boundary_facets():
    msh = unit_mesh(1)
    eps = 0.4
    prob = ManufacturedProblem(eps)
    sol = dhfem.condense_and_solve_dual(msh, eps, prob.load)
    rep = estimators.estimate_xi(sol)
    # with only one interior facet, the jump term must come from it alone
    nj = estimators.normal_jump_integrals(sol)
    assert np.all(nj[msh.is_boundary_facet] == 0.0)
    assert rep.terms["normal_jump"].sum() == pytest.approx(
        float(np.minimum(eps, msh.h[0]) * 2 * nj[~msh.is_boundary_facet].sum()),
        rel=1e-12,
    )


def test_rho_caveat_flag():
    msh = unit_mesh(1)
    sol = phfem.condense_and_solve(msh, 0.1, phfem.constant_load(1.0))
    assert estimators.estimate_rho(sol).reliability_caveat is None
    rep = estimators.estimate_rho(sol, domain_convex=False)
    assert "convex" in rep.reliability_caveat


def _patch_sums(mesh, per_element):
    """Sum per-element values over vertex patches Omega_T (gathered on demand)."""
    v2e = [[] for _ in range(mesh.n_vertices)]
    for t in range(mesh.n_triangles):
        for v in mesh.tris[t]:
            v2e[v].append(t)
    out = np.zeros(mesh.n_triangles)
    for t in range(mesh.n_triangles):
        nb = set()
        for v in mesh.tris[t]:
            nb.update(v2e[v])
        out[t] = per_element[list(nb)].sum()
    return out


def _element_errors(mesh, prob, sol):
    """Per-element ||u-u_h||_T^2 and eps^2 ||grad(u-u_h)||_T^2, plus best-approx terms."""
    eps = prob.eps
    rate = 2.0 * float(mesh.h.max()) / eps
    rule = layered_rule(max(rate, 4.0))
    uh = sol.eval_values(rule.points)
    gh = sol.eval_gradients(rule.points)
    e0 = np.zeros(mesh.n_triangles)
    e1 = np.zeros(mesh.n_triangles)
    best0 = np.zeros(mesh.n_triangles)
    best1 = np.zeros(mesh.n_triangles)
    for t in range(mesh.n_triangles):
        xy = rule.points @ mesh.tri_coords[t]
        a = mesh.areas[t]
        ue = prob.u(xy[:, 0], xy[:, 1])
        ge = prob.grad_u(xy[:, 0], xy[:, 1])
        e0[t] = a * np.dot(rule.weights, (ue - uh[t]) ** 2)
        d = ge - gh[t]
        e1[t] = eps**2 * a * np.dot(rule.weights, np.einsum("px,px->p", d, d))
        mean_u = np.dot(rule.weights, ue)
        best0[t] = a * np.dot(rule.weights, (ue - mean_u) ** 2)
        mean_g = np.einsum("p,px->x", rule.weights, ge)
        dg = ge - mean_g
        best1[t] = eps**2 * a * np.dot(rule.weights, np.einsum("px,px->p", dg, dg))
    return e0, e1, best0, best1


@pytest.mark.slow
def test_efficiency_surrogate_bounded_across_eps():
    # rho(T)^2 <= C (patch error^2 + best approximation^2 + oscillation^2);
    # C is measured, not asserted a priori, but must be stable in eps
    from rdhybrid.mesh import uniform_refine

    consts = {}
    for eps in (1e-2, 1e-4):
        prob = ManufacturedProblem(eps)
        cs = []
        msh = unit_mesh(4)
        for level in range(3):
            sol = phfem.condense_and_solve(msh, eps, prob.load)
            rep = estimators.estimate_rho(sol)
            e0, e1, best0, best1 = _element_errors(msh, prob, sol)
            patch = _patch_sums(msh, e0 + e1)
            rhs = patch + best0 + best1 + estimators.oscillation(sol)
            # skip elements where the indicator is pure rounding noise
            # (interior plateau: both sides cancel to ~1e-30)
            meaningful = rep.local2 > 1e-10 * rep.local2.max()
            ratio = rep.local2[meaningful] / np.maximum(rhs[meaningful], 1e-300)
            cs.append(float(ratio.max()))
            msh = uniform_refine(msh, 2)
        consts[eps] = max(cs)
        assert np.isfinite(consts[eps])
    lo, hi = min(consts.values()), max(consts.values())
    print(f"efficiency constants: {consts}")
    assert hi / lo < 10.0
