"""Experiment orchestration: problems, error norms, marking, refinement loops."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import cgfem, dhfem, estimators, phfem
from .loads import LoadField
from .mesh import Mesh, make_structured_square, refine_nvb, uniform_refine
from .quadrature import QuadratureError, TriangleRule, layered_rule

_PLAIN12 = TriangleRule.conical(12)


@dataclass(frozen=True)
class ManufacturedProblem:
    """Separable boundary-layer solution u(x, y) = v(x) v(y) on the unit square.

    v(t) = 1 - (1 - e^(-1/(sqrt(2) eps))) (e^(-(1-t)/(sqrt(2) eps))
           + e^(-t/(sqrt(2) eps))) / (1 - e^(-2/(sqrt(2) eps)))
    solves -2 eps^2 v'' + v = 1, so -eps^2 Lap u + u = (v(x) + v(y)) / 2.
    """

    eps: float
    xmin: float = 0.0
    xmax: float = 1.0
    ymin: float = 0.0
    ymax: float = 1.0

    @property
    def _a(self) -> float:
        return 1.0 / (np.sqrt(2.0) * self.eps)

    @property
    def _c(self) -> float:
        a = self._a
        return float(-np.expm1(-a) / -np.expm1(-2.0 * a))

    def v(self, t):
        t = np.asarray(t, dtype=float)
        a, c = self._a, self._c
        return 1.0 - c * (np.exp(-(1.0 - t) * a) + np.exp(-t * a))

    def dv(self, t):
        t = np.asarray(t, dtype=float)
        a, c = self._a, self._c
        return -c * a * (np.exp(-(1.0 - t) * a) - np.exp(-t * a))

    def u(self, x, y):
        return self.v(x) * self.v(y)

    def grad_u(self, x, y):
        return np.stack([self.dv(x) * self.v(y), self.v(x) * self.dv(y)], axis=-1)

    def sigma(self, x, y):
        return self.eps * self.grad_u(x, y)

    def div_sigma(self, x, y):
        # eps Lap u = (u - f) / eps
        return (self.u(x, y) - self.f(x, y)) / self.eps

    def f(self, x, y):
        return 0.5 * (self.v(np.asarray(x, dtype=float)) + self.v(np.asarray(y, dtype=float)))

    def boundary_distance(self, x, y):
        return np.minimum.reduce([x - self.xmin, self.xmax - x, y - self.ymin, self.ymax - y])

    def layer_halfwidth(self) -> float:
        # exp(-d / (sqrt(2) eps)) below machine precision beyond this distance
        return 40.0 * np.sqrt(2.0) * self.eps

    def layered_elements(self, mesh: Mesh) -> np.ndarray:
        d = self.boundary_distance(mesh.coords[:, 0], mesh.coords[:, 1])
        near = d[mesh.tris].min(axis=1) < self.layer_halfwidth()
        return near & (mesh.h > self.eps)

    @property
    def load(self) -> LoadField:
        def constants(mesh):
            d = self.boundary_distance(mesh.coords[:, 0], mesh.coords[:, 1])
            far = d[mesh.tris].min(axis=1) >= self.layer_halfwidth()
            centroid = mesh.tri_coords.mean(axis=1)
            vals = self.f(centroid[:, 0], centroid[:, 1])
            return np.where(far, vals, np.nan)

        return LoadField(
            self.f,
            constants=constants,
            layered=lambda mesh, eps: self.layered_elements(mesh),
        )

    def initial_mesh(self, n: int = 4) -> Mesh:
        return make_structured_square((self.xmin, self.ymin), (self.xmax, self.ymax), n)


def eval_manufactured(eps: float, point):
    """(u, grad u, f) at one point; all exponentials have nonpositive arguments."""
    prob = ManufacturedProblem(eps)
    x, y = float(point[0]), float(point[1])
    return float(prob.u(x, y)), prob.grad_u(x, y), float(prob.f(x, y))


@dataclass(frozen=True)
class BoxLoadProblem:
    """f = 1 on (-1/2, 1/2)^2 and -1 elsewhere on (-1, 1)^2; no exact solution."""

    eps: float
    half: float = 0.5

    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0

    def f(self, x, y):
        inside = (np.abs(x) < self.half) & (np.abs(y) < self.half)
        return np.where(inside, 1.0, -1.0)

    @property
    def _lines(self):
        return [(0, -self.half), (0, self.half), (1, -self.half), (1, self.half)]

    def _straddles(self, mesh: Mesh) -> np.ndarray:
        p = mesh.tri_coords
        out = np.zeros(mesh.n_triangles, dtype=bool)
        for axis, c in self._lines:
            lo = p[:, :, axis].min(axis=1)
            hi = p[:, :, axis].max(axis=1)
            out |= (lo < c) & (c < hi)
        return out

    def _pieces(self, mesh: Mesh, t: int):
        # split the triangle along the jump lines; each piece has constant f
        polys = [[(np.eye(3)[i], mesh.tri_coords[t][i]) for i in range(3)]]
        for axis, c in self._lines:
            nxt = []
            for poly in polys:
                for keep_below in (True, False):
                    part = _clip_poly(poly, axis, c, keep_below)
                    if len(part) >= 3:
                        nxt.append(part)
            polys = nxt
        pieces = []
        for poly in polys:
            bary = np.array([b for b, _ in poly])
            centroid = np.mean([xy for _, xy in poly], axis=0)
            value = float(self.f(centroid[0], centroid[1]))
            for i in range(1, len(poly) - 1):
                pieces.append((np.stack([bary[0], bary[i], bary[i + 1]]), value))
        return pieces

    @property
    def load(self) -> LoadField:
        def constants(mesh):
            straddle = self._straddles(mesh)
            centroid = mesh.tri_coords.mean(axis=1)
            vals = self.f(centroid[:, 0], centroid[:, 1])
            return np.where(straddle, np.nan, vals)

        return LoadField(self.f, constants=constants, pieces=self._pieces)

    def initial_mesh(self, n: int = 4) -> Mesh:
        if n % 4 != 0:
            # element edges then fail to align with x, y = +/- 1/2
            pass
        return make_structured_square((self.xmin, self.ymin), (self.xmax, self.ymax), n)


def _clip_poly(poly, axis, cut, keep_below):
    """Clip a polygon of (barycentric, physical) vertex pairs by x_axis = cut."""
    out = []
    n = len(poly)
    for i in range(n):
        (pb, pxy), (qb, qxy) = poly[i], poly[(i + 1) % n]
        vp, vq = pxy[axis] - cut, qxy[axis] - cut
        if not keep_below:
            vp, vq = -vp, -vq
        if vp <= 0.0:
            out.append((pb, pxy))
        if (vp < 0.0 < vq) or (vq < 0.0 < vp):
            s = vp / (vp - vq)
            out.append((pb + s * (qb - pb), pxy + s * (qxy - pxy)))
    return out


# -- field wrappers for error evaluation --------------------------------------


@dataclass(eq=False)
class FieldP0:
    values: np.ndarray  # (nt,)

    def eval_values(self, lam_pts):
        return np.broadcast_to(
            self.values[:, None], (self.values.size, np.asarray(lam_pts).shape[0])
        )


@dataclass(eq=False)
class FieldP1:
    coeffs: np.ndarray  # (nt, 3) hat coefficients

    def eval_values(self, lam_pts):
        return self.coeffs @ np.asarray(lam_pts, dtype=float).T


# -- L2 norms ------------------------------------------------------------------


def _element_rules(mesh, eps, problem, field_layered):
    """Per-element rule selection: layer-graded near the boundary layers."""
    if problem is not None:
        layered = problem_layer_mask(problem, mesh)
    else:
        layered = np.zeros(mesh.n_triangles, dtype=bool)
    if field_layered:
        layered |= mesh.h > eps
    return layered


def problem_layer_mask(problem, mesh) -> np.ndarray:
    if hasattr(problem, "layered_elements"):
        return problem.layered_elements(mesh)
    return np.zeros(mesh.n_triangles, dtype=bool)


def l2_error(
    mesh: Mesh,
    exact,
    field,
    eps: float,
    problem=None,
    field_layered: bool = False,
    check: bool = False,
) -> float:
    """sqrt(sum_T int_T (exact - field)^2) with layer-aware quadrature.

    ``exact`` is ``g(x, y)`` vectorized; ``field`` provides
    ``eval_values(lam_pts) -> (nt, npts)``.  With ``check=True`` the value is
    recomputed on a deeper rule and must agree to 1e-8 relative.
    """
    layered = _element_rules(mesh, eps, problem, field_layered)

    def compute(extra):
        total = 0.0
        for lay in (False, True):
            sel = np.nonzero(layered == lay)[0]
            if sel.size == 0:
                continue
            if lay:
                rate = 2.0 * float(mesh.h[sel].max()) / eps
                rule = layered_rule(rate, n=6 + 2 * extra)
            else:
                rule = TriangleRule.conical(12 + 4 * extra)
            vals = field.eval_values(rule.points)
            npts = rule.points.shape[0]
            chunk = max(1, 4_000_000 // npts)
            for lo in range(0, sel.size, chunk):
                sub = sel[lo : lo + chunk]
                xy = np.einsum("ps,esx->epx", rule.points, mesh.tri_coords[sub])
                d = exact(xy[..., 0], xy[..., 1]) - vals[sub]
                total += float(np.einsum("e,ep,p->", mesh.areas[sub], d**2, rule.weights))
        return total

    val = compute(0)
    if check:
        ref = compute(1)
        err = np.sqrt(max(val, 0.0))
        ref_err = np.sqrt(max(ref, 0.0))
        if abs(err - ref_err) > 1e-8 * max(ref_err, 1e-300):
            raise QuadratureError(
                f"l2_error not converged: {err:.15g} vs {ref_err:.15g}", estimate=ref_err
            )
    return float(np.sqrt(max(val, 0.0)))


def l2_error_vector(
    mesh: Mesh,
    exact_vec,
    field,
    eps: float,
    problem=None,
    field_layered: bool = False,
) -> float:
    """Same as :func:`l2_error` for 2-vector fields (eval_values -> (nt, npts, 2))."""
    layered = _element_rules(mesh, eps, problem, field_layered)
    total = 0.0
    for lay in (False, True):
        sel = np.nonzero(layered == lay)[0]
        if sel.size == 0:
            continue
        if lay:
            rate = 2.0 * float(mesh.h[sel].max()) / eps
            rule = layered_rule(rate)
        else:
            rule = _PLAIN12
        vals = field.eval_values(rule.points)
        npts = rule.points.shape[0]
        chunk = max(1, 2_000_000 // npts)
        for lo in range(0, sel.size, chunk):
            sub = sel[lo : lo + chunk]
            xy = np.einsum("ps,esx->epx", rule.points, mesh.tri_coords[sub])
            d = exact_vec(xy[..., 0], xy[..., 1]) - vals[sub]
            total += float(
                np.einsum("e,epx,p->", mesh.areas[sub], d**2, rule.weights)
            )
    return float(np.sqrt(max(total, 0.0)))


def energy_error_primal(mesh, problem, sol) -> float:
    """||u - u_h||_{U,eps} with the exact manufactured solution."""
    a = l2_error(mesh, problem.u, sol, problem.eps, problem, field_layered=True)

    class _G:
        def eval_values(self, lam_pts):
            return sol.eval_gradients(lam_pts)

    g = l2_error_vector(mesh, problem.grad_u, _G(), problem.eps, problem, field_layered=True)
    return float(np.sqrt(a**2 + problem.eps**2 * g**2))


def energy_error_dual(mesh, problem, dsol) -> float:
    """||sigma - sigma_h||_{Sigma,eps} with sigma = eps grad u."""
    a = l2_error_vector(mesh, problem.sigma, dsol, problem.eps, problem, field_layered=True)

    class _D:
        def eval_values(self, lam_pts):
            return dsol.eval_divergence(lam_pts)

    d = l2_error(mesh, problem.div_sigma, _D(), problem.eps, problem, field_layered=True)
    return float(np.sqrt(a**2 + problem.eps**2 * d**2))


# -- marking and refinement loops ----------------------------------------------


def mark_doerfler(local2: np.ndarray, theta: float) -> np.ndarray:
    """Minimal bulk set: largest contributions first, ties by element id."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    local2 = np.asarray(local2, dtype=float)
    order = np.lexsort((np.arange(local2.size), -local2))
    csum = np.cumsum(local2[order])
    total = csum[-1] if csum.size else 0.0
    if total <= 0.0:
        return np.array([], dtype=np.int64)
    target = theta * total
    k = int(np.searchsorted(csum, target * (1.0 - 1e-12)))
    return np.sort(order[: k + 1])


@dataclass
class RunRecord:
    level: int
    n_elements: int
    ndof: int
    est_total: float
    errors: dict = field(default_factory=dict)
    constraint_residual: float = float("nan")
    runtime: float = 0.0
    marked: int = 0


def _solve_and_estimate(mesh, problem, method, variant):
    eps = problem.eps
    if method == "phfem":
        sol = phfem.condense_and_solve(mesh, eps, problem.load, variant)
        report = estimators.estimate_rho(sol)
        cres = float(np.max(np.abs(phfem.constraint_residuals(sol))))
        scale = max(np.max(np.abs(sol.u)), 1e-300)
        return sol, report, cres / scale
    if method == "dhfem":
        sol = dhfem.condense_and_solve_dual(mesh, eps, problem.load, variant)
        report = estimators.estimate_xi(sol)
        res = dhfem.normal_jump_residuals(sol)
        cres = float(np.max(np.abs(res))) if res.size else 0.0
        scale = max(np.max(np.abs(sol.sigma)), 1e-300)
        return sol, report, cres / scale
    raise ValueError(f"unknown method {method!r} (phfem or dhfem)")


def _dof_count(mesh, method):
    if method == "phfem":
        return mesh.n_facets
    return mesh.n_interior_vertices


def _record_errors(mesh, problem, method, sol, variant, with_cg=True):
    """L2 errors of the P0/P1 projections and of the CG baseline."""
    errors = {}
    if not hasattr(problem, "u"):
        return {
            "errUP0L2": float("nan"),
            "errUP1L2": float("nan"),
            "errUS1L2": float("nan"),
        }
    eps = problem.eps
    if method == "phfem":
        p0 = FieldP0(phfem.project_p0(sol))
        p1 = FieldP1(phfem.project_p1(sol))
    else:
        post = dhfem.postprocess_primal(sol, problem.load)
        p0 = FieldP0(post.project_p0())
        p1 = FieldP1(post.project_p1())
    errors["errUP0L2"] = l2_error(mesh, problem.u, p0, eps, problem)
    errors["errUP1L2"] = l2_error(mesh, problem.u, p1, eps, problem)
    if with_cg:
        cg = cgfem.solve_cg(mesh, eps, problem.load, variant)
        errors["errUS1L2"] = l2_error(mesh, problem.u, cg, eps, problem)
    else:
        errors["errUS1L2"] = float("nan")
    return errors


def run_uniform(
    problem,
    method: str = "phfem",
    levels: int = 6,
    initial_n: int = 4,
    passes_per_level: int = 2,
    variant: str = "exponential",
    compute_errors: bool = True,
    on_level=None,
) -> list[RunRecord]:
    """Uniform NVB ladder; two all-marked passes per level quadruple #T."""
    mesh = problem.initial_mesh(initial_n)
    records = []
    for level in range(levels):
        t0 = time.perf_counter()
        sol, report, cres = _solve_and_estimate(mesh, problem, method, variant)
        if on_level is not None:
            on_level(level, mesh, sol)
        if compute_errors:
            errors = _record_errors(mesh, problem, method, sol, variant)
        else:
            errors = {k: float("nan") for k in ("errUP0L2", "errUP1L2", "errUS1L2")}
        records.append(
            RunRecord(
                level=level,
                n_elements=mesh.n_triangles,
                ndof=_dof_count(mesh, method),
                est_total=report.total,
                errors=errors,
                constraint_residual=cres,
                runtime=time.perf_counter() - t0,
                marked=mesh.n_triangles,
            )
        )
        if level < levels - 1:
            mesh = uniform_refine(mesh, passes_per_level)
    return records


def run_adaptive(
    problem,
    method: str = "phfem",
    theta: float = 0.25,
    max_dof: int = 10_000,
    initial_n: int = 4,
    variant: str = "exponential",
    compute_errors: bool = False,
    on_level=None,
) -> list[RunRecord]:
    """Solve -> Estimate -> Mark -> Refine until the dof count passes max_dof."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    mesh = problem.initial_mesh(initial_n)
    records = []
    level = 0
    while True:
        t0 = time.perf_counter()
        sol, report, cres = _solve_and_estimate(mesh, problem, method, variant)
        if on_level is not None:
            on_level(level, mesh, sol)
        if compute_errors:
            errors = _record_errors(mesh, problem, method, sol, variant)
        else:
            errors = {k: float("nan") for k in ("errUP0L2", "errUP1L2", "errUS1L2")}
        marked = mark_doerfler(report.local2, theta)
        records.append(
            RunRecord(
                level=level,
                n_elements=mesh.n_triangles,
                ndof=_dof_count(mesh, method),
                est_total=report.total,
                errors=errors,
                constraint_residual=cres,
                runtime=time.perf_counter() - t0,
                marked=marked.size,
            )
        )
        if records[-1].ndof > max_dof:
            break
        mesh = refine_nvb(mesh, marked)
        level += 1
    return records


def refinement_localization(mesh: Mesh, problem: BoxLoadProblem) -> float:
    """Fraction of elements whose barycenter lies within 0.1 of the layer curves.

    The curves are the domain boundary and the boundary of the inner box
    where f jumps.
    """
    c = mesh.tri_coords.mean(axis=1)
    x, y = c[:, 0], c[:, 1]
    d_outer = np.minimum.reduce([x - problem.xmin, problem.xmax - x,
                                 y - problem.ymin, problem.ymax - y])
    dx = np.abs(x) - problem.half
    dy = np.abs(y) - problem.half
    outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
    inside = np.maximum(dx, dy)  # negative inside the box
    d_inner = np.where(inside > 0.0, outside, -inside)
    return float(np.mean(np.minimum(d_outer, d_inner) < 0.1))
