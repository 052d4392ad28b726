import numpy as np
import pytest
import scipy.sparse as sp

from rdhybrid import linalg, phfem
from rdhybrid.driver import ManufacturedProblem
from rdhybrid.mesh import make_structured_square


def test_dense_2x2_example():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = linalg.cholesky_solve_dense(A, np.array([1.0, 0.0]))
    assert np.allclose(x, [2.0 / 3.0, -1.0 / 3.0], atol=1e-14)


def test_dense_identity():
    b = np.array([3.0, -1.0, 0.5])
    x = linalg.cholesky_solve_dense(np.eye(3), b)
    assert np.allclose(x, b, atol=1e-15)


def test_dense_non_spd_rejected_with_label():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    with pytest.raises(linalg.NotSPDError, match="element 7"):
        linalg.cholesky_solve_dense(A, np.array([1.0, 0.0]), label="element 7")


def test_batched_solve_and_failure_id():
    rng = np.random.default_rng(0)
    n = 5
    A = np.empty((4, n, n))
    for i in range(4):
        Q = rng.normal(size=(n, n))
        A[i] = Q @ Q.T + n * np.eye(n)
    B = rng.normal(size=(4, n, 2))
    X = linalg.batched_cholesky_solve(A, B)
    assert np.max(np.abs(A @ X - B)) < 1e-12
    A[2] = np.array([[1, 2, 0, 0, 0], [2, 1, 0, 0, 0]] + [[0] * 5] * 3) + np.eye(5) * 1e-12
    with pytest.raises(linalg.NotSPDError, match="element 2"):
        linalg.batched_cholesky_solve(A, B)


def test_sparse_diagonal():
    S = sp.diags([2.0, 4.0, 8.0]).tocsr()
    x = linalg.solve_spd_sparse(S, np.array([2.0, 4.0, 8.0]))
    assert np.allclose(x, 1.0, atol=1e-13)


def test_sparse_tridiagonal_laplacian():
    S = sp.diags([[-1.0, -1.0], [2.0, 2.0, 2.0], [-1.0, -1.0]], [-1, 0, 1]).tocsr()
    x = linalg.solve_spd_sparse(S, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(x, [0.75, 0.5, 0.25], atol=1e-12)


def test_sparse_empty_system():
    S = sp.csr_matrix((0, 0))
    assert linalg.solve_spd_sparse(S, np.zeros(0)).size == 0


def test_sparse_asymmetric_rejected():
    S = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(linalg.NotSPDError):
        linalg.solve_spd_sparse(S, np.ones(2))


def test_condensed_skeleton_matches_dense_oracle():
    # 2-triangle mesh: skeleton solve equals the dense monolithic solve
    msh = make_structured_square((0, 0), (1, 1), 1)
    eps = 1e-2
    prob = ManufacturedProblem(eps)
    a = phfem.condense_and_solve(msh, eps, prob.load)
    b = phfem.solve_monolithic(msh, eps, prob.load)
    assert np.max(np.abs(a.u - b.u)) <= 1e-9 * np.max(np.abs(b.u))


@pytest.mark.parametrize("eps", [1.0, 1e-4, 1e-8])
def test_skeleton_matrix_spd_across_eps(eps):
    # 64-element robustness smoke: the condensed matrix stays SPD
    from rdhybrid.mesh import uniform_refine

    msh = uniform_refine(make_structured_square((0, 0), (1, 1), 4), 1)
    prob = ManufacturedProblem(eps)
    blocks = phfem.assemble_local(msh, eps, prob.load)
    S, rhs, _, _ = phfem._condense(msh, blocks)
    Sd = S.toarray()
    assert np.max(np.abs(Sd - Sd.T)) <= 1e-12 * np.max(np.abs(Sd))
    np.linalg.cholesky(Sd)  # raises if not SPD


def test_cg_fallback_reaches_tolerance():
    # moderately conditioned SPD matrix, solved by the CG branch directly
    rng = np.random.default_rng(3)
    n = 60
    Q = rng.normal(size=(n, n))
    S = sp.csr_matrix(Q @ Q.T + n * np.eye(n))
    rhs = rng.normal(size=n)
    d = S.diagonal()
    x = np.zeros(n)
    r = rhs.copy()
    z = r / d
    p = z.copy()
    rz = r @ z
    for _ in range(10 * n):
        Sp = S @ p
        alpha = rz / (p @ Sp)
        x += alpha * p
        r -= alpha * Sp
        if np.linalg.norm(r) <= 1e-10 * np.linalg.norm(rhs):
            break
        z = r / d
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    ref = linalg.solve_spd_sparse(S, rhs)
    assert np.linalg.norm(S @ ref - rhs) <= 1e-10 * np.linalg.norm(rhs)
    assert np.allclose(x, ref, atol=1e-8)
