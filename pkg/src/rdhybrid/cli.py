"""Command-line front end: configure, run, and export the experiments.

``run`` writes one errors CSV per method (header
``dof,errUP0L2,errUP1L2,errUS1L2,est``) plus per-level solution patch files
(one ``x y z`` triple per triangle vertex, triangles separated by blank
lines) and plain-text mesh dumps.  ``verify`` executes the built-in oracle
suites.  Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import basis, cgfem, dhfem, driver, estimators, phfem
from .linalg import NotSPDError, SolverError
from .mesh import make_structured_square, uniform_refine
from .quadrature import QuadratureError, TriangleRule, barycentric_monomial_integral, integrate_exponential

PROBLEMS = ("manufactured", "boxload")
METHODS = ("phfem", "dhfem", "cg", "all")
VARIANTS = ("exponential", "polynomial")
REFINEMENTS = ("uniform", "adaptive")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Config:
    problem: str = "manufactured"
    method: str = "phfem"
    eps: float = 1e-4
    bubble_variant: str = "exponential"
    refinement: str = "uniform"
    theta: float = 0.25
    max_dof: int = 10_000
    levels: int = 6
    initial_n: int = 4
    output: str = "out"
    seed: int = 0

    def validate(self) -> "Config":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.bubble_variant not in VARIANTS:
            raise ConfigError(f"unknown bubble variant {self.bubble_variant!r}")
        if self.refinement not in REFINEMENTS:
            raise ConfigError(f"unknown refinement {self.refinement!r}")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError("eps must lie in (0, 1]")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta must lie in (0, 1]")
        if self.levels < 1 or self.initial_n < 1 or self.max_dof < 1:
            raise ConfigError("levels, initial_n and max_dof must be positive")
        if self.refinement == "adaptive" and self.method in ("cg", "all"):
            raise ConfigError("adaptive refinement needs an estimator: use phfem or dhfem")
        return self


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def config_from_sources(file_values: dict, overrides: dict) -> Config:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for f in fields(Config):
        if f.name not in merged:
            continue
        raw = merged.pop(f.name)
        if f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("int", int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = str(raw)
    if merged:
        raise ConfigError(f"unknown config keys: {sorted(merged)}")
    return Config(**kwargs).validate()


def _fmt(x) -> str:
    return f"{x:.17g}"


def write_errors_csv(path, records) -> None:
    lines = ["dof,errUP0L2,errUP1L2,errUS1L2,est"]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.ndof),
                    _fmt(r.errors.get("errUP0L2", float("nan"))),
                    _fmt(r.errors.get("errUP1L2", float("nan"))),
                    _fmt(r.errors.get("errUS1L2", float("nan"))),
                    _fmt(r.est_total),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_patch(path, mesh, z_tri_vertices) -> None:
    """Patch file: triangles as blank-line separated blocks of x y z lines."""
    chunks = []
    coords = mesh.tri_coords
    for t in range(mesh.n_triangles):
        rows = [
            f"{_fmt(coords[t, i, 0])} {_fmt(coords[t, i, 1])} {_fmt(z_tri_vertices[t, i])}"
            for i in range(3)
        ]
        chunks.append("\n".join(rows))
    Path(path).write_text("\n\n".join(chunks) + "\n")


def _problem(config: Config):
    if config.problem == "manufactured":
        return driver.ManufacturedProblem(config.eps)
    return driver.BoxLoadProblem(config.eps)


def _patch_values(mesh, method, sol, problem):
    if method == "phfem":
        p0 = phfem.project_p0(sol)
        return np.repeat(p0[:, None], 3, axis=1)
    if method == "dhfem":
        p0 = dhfem.postprocess_primal(sol, problem.load).project_p0()
        return np.repeat(p0[:, None], 3, axis=1)
    return sol.values[mesh.tris]


def _run_method(config: Config, problem, method, outdir: Path):
    tag = method

    def on_level(level, mesh, sol):
        z = _patch_values(mesh, method, sol, problem)
        kind = "s1" if method == "cg" else "p0"
        write_patch(outdir / f"{tag}_{kind}_lvl{level:02d}_T{mesh.n_triangles:05d}.dat", mesh, z)
        mesh.write(outdir / f"mesh_lvl{level:02d}_T{mesh.n_triangles:05d}.txt")

    if method == "cg":
        records = _run_cg_uniform(config, problem, on_level)
    elif config.refinement == "uniform":
        records = driver.run_uniform(
            problem,
            method,
            levels=config.levels,
            initial_n=config.initial_n,
            variant=config.bubble_variant,
            compute_errors=config.problem == "manufactured",
            on_level=on_level,
        )
    else:
        records = driver.run_adaptive(
            problem,
            method,
            theta=config.theta,
            max_dof=config.max_dof,
            initial_n=config.initial_n,
            variant=config.bubble_variant,
            compute_errors=config.problem == "manufactured",
            on_level=on_level,
        )
    write_errors_csv(outdir / f"errors_{tag}.csv", records)
    return records


def _run_cg_uniform(config: Config, problem, on_level):
    mesh = problem.initial_mesh(config.initial_n)
    records = []
    for level in range(config.levels):
        sol = cgfem.solve_cg(mesh, config.eps, problem.load, config.bubble_variant)
        if hasattr(problem, "u"):
            err = driver.l2_error(mesh, problem.u, sol, config.eps, problem)
        else:
            err = float("nan")
        records.append(
            driver.RunRecord(
                level=level,
                n_elements=mesh.n_triangles,
                ndof=mesh.n_interior_vertices,
                est_total=float("nan"),
                errors={"errUP0L2": float("nan"), "errUP1L2": float("nan"), "errUS1L2": err},
            )
        )
        on_level(level, mesh, sol)
        if level < config.levels - 1:
            mesh = uniform_refine(mesh, 2)
    return records


def cmd_run(config: Config) -> int:
    outdir = Path(config.output)
    outdir.mkdir(parents=True, exist_ok=True)
    problem = _problem(config)
    methods = ["phfem", "dhfem", "cg"] if config.method == "all" else [config.method]
    for method in methods:
        records = _run_method(config, problem, method, outdir)
        print(f"{method}: {len(records)} levels, final dof {records[-1].ndof}")
    if len(methods) == 1:
        # convenience alias for single-method runs
        src = outdir / f"errors_{methods[0]}.csv"
        (outdir / "errors.csv").write_text(src.read_text())
    return 0


# -- verification suites --------------------------------------------------------


def _suite_quadrature() -> list[str]:
    failures = []
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b, c = rng.integers(0, 5, size=3)
        deg = int(a + b + c)
        rule = TriangleRule.conical(max(deg, 1))
        approx = 0.5 * np.dot(
            rule.weights,
            rule.points[:, 0] ** a * rule.points[:, 1] ** b * rule.points[:, 2] ** c,
        )
        exact = barycentric_monomial_integral(0.5, int(a), int(b), int(c))
        if abs(approx - exact) > 1e-13 * abs(exact):
            failures.append(f"monomial ({a},{b},{c})")
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    for kappa in (1.0, 10.0, 100.0, 1e4):
        val = integrate_exponential(ref, 2, kappa)
        exact = (math.exp(-kappa) + kappa - 1.0) / kappa**2
        if abs(val - exact) > 1e-10 * abs(exact):
            failures.append(f"exp layer kappa={kappa:g}")
    return failures


def _suite_bubble_scaling(skip: bool) -> list[str] | None:
    if skip:
        return None
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    h = math.sqrt(2.0)
    failures = []
    for variant in ("exponential", "polynomial"):
        cvals, cgrads = [], []
        for ratio in [10.0**-k for k in range(1, 7)]:
            c_val, c_grad = basis.verify_scaling_bounds(ref, ratio * h, variant)
            cvals.append(c_val)
            cgrads.append(c_grad)
        if max(cvals) > 1.0 or max(cvals) / min(cvals) >= 10.0:
            failures.append(f"{variant}: value constant drifts")
        if max(cgrads) / min(cgrads) >= 10.0:
            failures.append(f"{variant}: gradient constant drifts")
    return failures


def _suite_condensation(eps_values, corrupt: bool = False) -> list[str]:
    failures = []
    for eps in eps_values:
        prob = driver.ManufacturedProblem(eps)
        mesh = uniform_refine(make_structured_square((0, 0), (1, 1), 2), 1)
        a = phfem.condense_and_solve(mesh, eps, prob.load, _corrupt_b_sign=corrupt)
        b = phfem.solve_monolithic(mesh, eps, prob.load)
        du = np.max(np.abs(a.u - b.u)) / max(np.max(np.abs(b.u)), 1e-300)
        if du > 1e-9:
            failures.append(f"phfem eps={eps:g}: condensed vs monolithic {du:.2e}")
        da = dhfem.condense_and_solve_dual(mesh, eps, prob.load)
        db = dhfem.solve_monolithic_dual(mesh, eps, prob.load)
        ds = np.max(np.abs(da.sigma - db.sigma)) / max(np.max(np.abs(db.sigma)), 1e-300)
        if ds > 1e-9:
            failures.append(f"dhfem eps={eps:g}: condensed vs monolithic {ds:.2e}")
    return failures


def cmd_verify(eps_values=None, _corrupt_b_sign: bool = False) -> int:
    eps_values = list(eps_values or (1.0, 1e-2, 1e-4))
    standard_only = all(e >= 1.0 for e in eps_values)
    status = 0
    suites = [
        ("quadrature oracles", _suite_quadrature()),
        ("bubble scaling", _suite_bubble_scaling(skip=standard_only)),
        ("condensed vs monolithic", _suite_condensation(eps_values, corrupt=_corrupt_b_sign)),
    ]
    for name, failures in suites:
        if failures is None:
            print(f"[SKIP] {name} (standard regime eps >= h only)")
        elif failures:
            status = 2
            print(f"[FAIL] {name}: " + "; ".join(failures))
        else:
            print(f"[PASS] {name}")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rdhybrid",
        description="Hybrid FEM experiments for reaction-dominated diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run an experiment and export CSV/patch files")
    runp.add_argument("--config", help="flat key = value config file")
    for name, typ in (
        ("problem", str), ("method", str), ("eps", float), ("bubble-variant", str),
        ("refinement", str), ("theta", float), ("max-dof", int), ("levels", int),
        ("initial-n", int), ("output", str), ("seed", int),
    ):
        runp.add_argument(f"--{name}", type=typ, default=None)

    verp = sub.add_parser("verify", help="run the built-in oracle suites")
    verp.add_argument("--eps", type=float, action="append", default=None,
                      help="epsilon values (repeatable); '--eps 1' skips layer suites")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            file_values = parse_config_file(args.config) if args.config else {}
            overrides = {
                "problem": args.problem,
                "method": args.method,
                "eps": args.eps,
                "bubble_variant": getattr(args, "bubble_variant"),
                "refinement": args.refinement,
                "theta": args.theta,
                "max_dof": getattr(args, "max_dof"),
                "levels": args.levels,
                "initial_n": getattr(args, "initial_n"),
                "output": args.output,
                "seed": args.seed,
            }
            config = config_from_sources(file_values, overrides)
            return cmd_run(config)
        return cmd_verify(args.eps)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (NotSPDError, SolverError, QuadratureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
