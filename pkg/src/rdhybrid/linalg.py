"""Dense symmetric solves for element-local systems and sparse SPD solves.

Local matrices are symmetrically diagonal-scaled before factorization; the
layer bubbles make the raw matrices ill-conditioned (diagonal ratio ~ h/eps)
although the scaled ones are benign.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NotSPDError(Exception):
    """Matrix is not symmetric positive definite."""


class SolverError(Exception):
    """Linear solver breakdown; carries the residual history if available."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def check_symmetric(A, tol: float = 1e-12, label: str = "matrix") -> None:
    A = np.asarray(A)
    scale = np.max(np.abs(A)) or 1.0
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise NotSPDError(f"{label} is not symmetric")


def cholesky_solve_dense(A, B, label: str | None = None):
    """Solve A X = B for SPD A; residual below 1e-10 relative."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    name = label if label is not None else "matrix"
    check_symmetric(A, label=name)
    d = np.diagonal(A)
    if np.any(d <= 0.0):
        raise NotSPDError(f"{name}: nonpositive diagonal")
    s = 1.0 / np.sqrt(d)
    As = A * s[:, None] * s[None, :]
    try:
        np.linalg.cholesky(As)
    except np.linalg.LinAlgError:
        raise NotSPDError(f"{name}: Cholesky pivot failure") from None
    one_d = B.ndim == 1
    Bmat = B[:, None] if one_d else B
    X = s[:, None] * np.linalg.solve(As, s[:, None] * Bmat)
    # one step of iterative refinement
    R = Bmat - A @ X
    X = X + s[:, None] * np.linalg.solve(As, s[:, None] * R)
    resid = np.linalg.norm(Bmat - A @ X)
    if resid > 1e-10 * max(np.linalg.norm(B), 1e-300):
        raise SolverError(f"{name}: dense solve residual {resid:g} too large")
    return X[:, 0] if one_d else X


def batched_cholesky_solve(A, B, element_ids=None):
    """Solve A[t] X[t] = B[t] for stacks of small SPD matrices.

    Reports the offending element id on an SPD failure.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d = np.diagonal(A, axis1=1, axis2=2)
    if np.any(d <= 0.0):
        t = int(np.nonzero(np.any(d <= 0.0, axis=1))[0][0])
        eid = element_ids[t] if element_ids is not None else t
        raise NotSPDError(f"element {eid}: nonpositive diagonal in local matrix")
    s = 1.0 / np.sqrt(d)
    As = A * s[:, :, None] * s[:, None, :]
    try:
        np.linalg.cholesky(As)
    except np.linalg.LinAlgError:
        for t in range(A.shape[0]):
            try:
                np.linalg.cholesky(As[t])
            except np.linalg.LinAlgError:
                eid = element_ids[t] if element_ids is not None else t
                raise NotSPDError(f"element {eid}: local matrix not SPD") from None
        raise
    Bs = s[:, :, None] * B
    X = s[:, :, None] * np.linalg.solve(As, Bs)
    R = B - A @ X
    X = X + s[:, :, None] * np.linalg.solve(As, s[:, :, None] * R)
    return X


def solve_spd_sparse(S, rhs, tol: float = 1e-10):
    """Solve the condensed SPD skeleton system.

    Direct sparse factorization first; Jacobi-preconditioned conjugate
    gradients (at most 10 n iterations) as fallback.  Raises
    :class:`SolverError` with the residual history on breakdown.
    """
    n = S.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    if n == 0:
        return np.zeros(0)
    S = sp.csr_matrix(S)
    asym = abs(S - S.T).max()
    scale = abs(S).max() or 1.0
    if asym > 1e-12 * scale:
        raise NotSPDError(f"skeleton matrix asymmetry {asym:g}")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n)
    try:
        x = spla.splu(sp.csc_matrix(S)).solve(rhs)
        if np.linalg.norm(S @ x - rhs) <= tol * bnorm:
            return x
    except RuntimeError:
        pass

    # conjugate gradients with Jacobi preconditioning
    d = S.diagonal()
    if np.any(d <= 0.0):
        raise NotSPDError("skeleton matrix has nonpositive diagonal")
    minv = 1.0 / d
    x = np.zeros(n)
    r = rhs.copy()
    z = minv * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(10 * n):
        Sp = S @ p
        pSp = p @ Sp
        if pSp <= 0.0:
            raise SolverError("CG breakdown: matrix not positive definite", history)
        alpha = rz / pSp
        x += alpha * p
        r -= alpha * Sp
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return x
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach tol {tol:g} in {10 * n} iterations", history)
