"""Command-line front end and experiment orchestration.

Every subcommand writes its artifacts (CSV, JSON, MESHFIELD) into the
output directory plus a machine-readable ``summary.json`` listing named
pass/fail checks; the exit code is 0 only when every exercised check
passes.  Exit code 2 marks configuration or argument problems, 3 solver
failures or failed runtime checks.  All randomness flows from one seeded
generator (default seed 42); with one thread, repeated runs produce
byte-identical CSV files.

The environment variable ``MIXEDREG_OUT`` overrides the output
directory, taking precedence over ``--out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fem, fracnorm, geometry, kkt, regularity, solvers
from .catalog import (
    ConfigError,
    InversionError,
    SpecError,
    check_assumptions,
    load_problem_config,
)
from .expressions import ParseError, parse_expr
from .fem import FEField, LinearSolveError
from .fracnorm import FracNormError
from .geometry import MeshError
from .solvers import NonlinearSolveError

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_CONFIG_ERRORS = (
    ConfigError,
    SpecError,
    ParseError,
    FracNormError,
    MeshError,
    fem.FieldError,
    fem.AssemblyError,
    ValueError,
)
_SOLVER_ERRORS = (NonlinearSolveError, LinearSolveError, InversionError)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _check(name: str, passed: bool, measured=None, threshold=None, detail: str = "") -> dict:
    entry = {"name": name, "passed": bool(passed)}
    if measured is not None:
        entry["measured"] = _jsonable(float(measured) if not isinstance(measured, str) else measured)
    if threshold is not None:
        entry["threshold"] = threshold
    if detail:
        entry["detail"] = detail
    return entry


def _write_text(out_dir: Path, name: str, text: str) -> str:
    path = out_dir / name
    with open(path, "w") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")
    return name


def _write_csv(out_dir: Path, name: str, header: str, rows) -> str:
    return _write_text(out_dir, name, "\n".join([header, *rows]))


def _build_mesh(preset: str, level: int):
    build = geometry.build_disk_mesh if preset == "disk" else geometry.build_ellipse_mesh
    return build(level)


def _nodal_domain(mesh, expr_text: str) -> FEField:
    e = parse_expr(expr_text)
    xy = mesh.vertices
    vals = np.asarray(e(xy[:, 0], xy[:, 1], np.zeros(mesh.n_vertices)), dtype=float)
    return FEField(mesh, "domain", np.broadcast_to(vals, (mesh.n_vertices,)).copy())


def _nodal_boundary(mesh, expr_text: str) -> FEField:
    e = parse_expr(expr_text)
    xy = mesh.vertices[mesh.boundary_loop]
    vals = np.asarray(e(xy[:, 0], xy[:, 1], np.zeros(mesh.n_boundary)), dtype=float)
    return FEField(mesh, "boundary", np.broadcast_to(vals, (mesh.n_boundary,)).copy())


def _fourier_coeffs(rng: np.random.Generator, modes: int = 6):
    return rng.standard_normal(modes), rng.standard_normal(modes)


def _fourier_field(mesh, coeffs, amplitude: float) -> FEField:
    """Band-limited field from one coefficient draw, comparable across levels."""
    a, b = coeffs
    t = mesh.boundary_params
    vals = np.zeros_like(t)
    for m in range(1, len(a) + 1):
        vals += (a[m - 1] * np.cos(m * t) + b[m - 1] * np.sin(m * t)) / m
    peak = float(np.max(np.abs(vals)))
    if peak > 0.0:
        vals = vals * (amplitude / peak)
    return FEField(mesh, "boundary", vals)


# ---------------------------------------------------------------- handlers


def _run_exponents(args, out_dir: Path, rng) -> tuple:
    table = solvers.exponents(args.N, args.p, args.q)
    print(f"r={table.r:g}, s={table.s:g}, slack={table.conjugacy_slack:g}")
    checks = [
        _check(
            "conjugacy-slack-positive",
            table.conjugacy_slack > 0.0,
            measured=table.conjugacy_slack,
            threshold=0.0,
            detail=f"r={table.r:g}, s={table.s:g}",
        )
    ]
    return checks, [], EXIT_SOLVER


def _run_check(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    mesh = _build_mesh(spec.preset, args.level)
    report = check_assumptions(spec, mesh)
    artifacts = [_write_text(out_dir, "assumptions.txt", str(report))]
    checks = [
        _check(c.name, c.passed, detail=c.detail) for c in report.checks
    ]
    return checks, artifacts, EXIT_CONFIG


def _run_solve_state(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    mesh = _build_mesh(spec.preset, args.level)
    u = _nodal_domain(mesh, args.u_expr)
    v = _nodal_boundary(mesh, args.v_expr)
    rep = solvers.solve_state(spec, u, v, newton_tol=args.newton_tol)
    fem.write_meshfield(rep.state, str(out_dir / "state.mf"))
    checks = [
        _check(
            "newton-converged",
            True,
            measured=rep.final_residual,
            detail=f"{rep.newton_iterations} iterations, growth ratio {rep.c_infinity_ratio:.6g}",
        )
    ]
    return checks, ["state.mf"], EXIT_SOLVER


def _run_gradient_check(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    mesh = _build_mesh(spec.preset, args.level)
    n, nb = mesh.n_vertices, mesh.n_boundary
    u = FEField(mesh, "domain", 0.5 * rng.standard_normal(n))
    v = FEField(mesh, "boundary", 0.5 * rng.standard_normal(nb))
    gu, gv = kkt.reduced_gradient(spec, u, v)
    M = fem.assemble_mass(mesh)
    Mb = fem.assemble_boundary_mass(mesh)
    steps = (1e-3, 1e-4, 1e-5, 1e-6)

    rows = []
    worst_best = 0.0
    for direction in range(args.directions):
        du = rng.standard_normal(n)
        dv = rng.standard_normal(nb)
        scale = max(np.max(np.abs(du)), np.max(np.abs(dv)))
        du, dv = du / scale, dv / scale
        analytic = float(gu.values @ M.matvec(du) + gv.values @ Mb.matvec(dv))
        best = np.inf
        for step in steps:
            up = FEField(mesh, "domain", u.values + step * du)
            um = FEField(mesh, "domain", u.values - step * du)
            vp = FEField(mesh, "boundary", v.values + step * dv)
            vm = FEField(mesh, "boundary", v.values - step * dv)
            yp = solvers.solve_state(spec, up, vp).state
            ym = solvers.solve_state(spec, um, vm).state
            fd = (kkt.objective(spec, yp, up, vp) - kkt.objective(spec, ym, um, vm)) / (2.0 * step)
            rel = abs(fd - analytic) / max(abs(analytic), 1e-14)
            best = min(best, rel)
            rows.append(f"{direction},{_fmt(step)},{_fmt(fd)},{_fmt(analytic)},{_fmt(rel)}")
        worst_best = max(worst_best, best)
    artifacts = [_write_csv(out_dir, "gradient_check.csv", "direction,step,fd,analytic,rel_error", rows)]
    checks = [
        _check(
            "gradient-matches-fd",
            worst_best <= args.tol,
            measured=worst_best,
            threshold=args.tol,
            detail=f"{args.directions} directions, best step per direction",
        )
    ]
    return checks, artifacts, EXIT_SOLVER


def _kkt_field_files(out_dir: Path, state: kkt.KKTState) -> list:
    names = []
    for name in ("y", "u", "phi", "psi1", "v", "psi2"):
        fname = f"{name}.mf"
        fem.write_meshfield(getattr(state, name), str(out_dir / fname))
        names.append(fname)
    return names


def _run_solve_kkt(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    mesh = _build_mesh(spec.preset, args.level)
    initial = (fem.domain_field(mesh, 0.0), fem.boundary_field(mesh, 0.0))
    state, report = kkt.solve_kkt(
        spec,
        initial,
        damping=args.damping,
        max_iter=args.max_iter,
        kkt_tol=args.kkt_tol,
        active_tol=args.active_tol,
    )
    artifacts = [
        _write_text(out_dir, "kkt_report.json", report.to_text()),
        _write_text(out_dir, "kkt_history.csv", report.history_csv()),
    ]
    artifacts += _kkt_field_files(out_dir, state)

    u_proj, v_proj = kkt.project_controls(spec, state.y, state.phi)
    proj_gap = max(
        float(np.max(np.abs(u_proj.values - state.u.values))),
        float(np.max(np.abs(v_proj.values - state.v.values))),
    )
    checks = [
        _check(
            "kkt-converged",
            report.converged,
            measured=report.max_residual,
            threshold=args.kkt_tol,
            detail=f"{report.iterations} iterations",
        ),
        _check(
            "projection-self-consistency",
            proj_gap <= 10.0 * args.kkt_tol,
            measured=proj_gap,
            threshold=10.0 * args.kkt_tol,
        ),
    ]
    return checks, artifacts, EXIT_SOLVER


def _run_robinson(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    mesh = _build_mesh(spec.preset, args.level)
    z = (fem.domain_field(mesh, 0.0), fem.boundary_field(mesh, 0.0))
    rows = []
    worst = 0.0
    for i in range(args.targets):
        z0 = (
            FEField(mesh, "domain", rng.standard_normal(mesh.n_vertices)),
            FEField(mesh, "boundary", rng.standard_normal(mesh.n_boundary)),
        )
        res = kkt.robinson_check(spec, z, z0)
        worst = max(worst, res)
        rows.append(f"{i},{_fmt(res)}")
    artifacts = [_write_csv(out_dir, "robinson.csv", "target,residual", rows)]
    checks = [
        _check(
            "linearized-constraints-surjective",
            worst <= args.tol,
            measured=worst,
            threshold=args.tol,
            detail=f"{args.targets} random targets",
        )
    ]
    return checks, artifacts, EXIT_SOLVER


def _run_frac_norm(args, out_dir: Path, rng) -> tuple:
    mesh = _build_mesh(args.preset, args.level)
    v = _nodal_boundary(mesh, args.field)
    rep = fracnorm.gagliardo(v, args.tau, args.k)
    rows = [
        f"{_fmt(rep.tau)},{_fmt(rep.k)},{rep.quadrature_level},{_fmt(rep.seminorm_I)},{_fmt(rep.full_norm)}"
    ]
    artifacts = [_write_csv(out_dir, "fracnorm.csv", fracnorm.FRACNORM_CSV_HEADER, rows)]

    doubled = fracnorm.gagliardo(FEField(mesh, "boundary", 2.0 * v.values), args.tau, args.k)
    target = 2.0**args.k * rep.seminorm_I
    homog = abs(doubled.seminorm_I - target) / max(abs(target), 1e-300)
    norm_gap = abs(rep.full_norm**args.k - (fem.lp_norm(v, args.k) ** args.k + rep.seminorm_I))
    norm_gap /= max(rep.full_norm**args.k, 1e-300)
    checks = [
        _check("seminorm-finite", math.isfinite(rep.seminorm_I), measured=rep.seminorm_I),
        _check("homogeneity-exact", homog <= 1e-12, measured=homog, threshold=1e-12),
        _check("norm-identity", norm_gap <= 1e-10, measured=norm_gap, threshold=1e-10),
    ]
    return checks, artifacts, EXIT_SOLVER


def _stability_checks(per_level_max: dict, rtol: float) -> list:
    checks = [
        _check(
            "ratios-finite",
            all(math.isfinite(m) for m in per_level_max.values()),
            measured=max(per_level_max.values()),
        )
    ]
    levels = sorted(per_level_max)
    if len(levels) >= 2:
        a, b = per_level_max[levels[-2]], per_level_max[levels[-1]]
        change = abs(b - a) / max(abs(a), 1e-14)
        checks.append(
            _check(
                "ratio-stable-under-refinement",
                change < rtol,
                measured=change,
                threshold=rtol,
                detail=f"levels {levels[-2]} to {levels[-1]}",
            )
        )
    return checks


def _run_chain_rule(args, out_dir: Path, rng) -> tuple:
    parse_expr(args.a)  # fail fast on grammar errors
    coeff_draws = [_fourier_coeffs(rng) for _ in range(args.samples)]
    rows = []
    per_level_max = {}
    for level in args.levels:
        mesh = _build_mesh(args.preset, level)
        level_max = 0.0
        for i, coeffs in enumerate(coeff_draws):
            v = _fourier_field(mesh, coeffs, args.amplitude)
            lhs, rhs, ratio = fracnorm.chain_rule_check(args.a, v, args.tau, args.k)
            level_max = max(level_max, ratio)
            rows.append(f"{level},{i},{_fmt(lhs)},{_fmt(rhs)},{_fmt(ratio)}")
        per_level_max[level] = level_max
    artifacts = [_write_csv(out_dir, "chain_rule.csv", "level,sample,lhs,rhs,ratio", rows)]
    return _stability_checks(per_level_max, args.stability_rtol), artifacts, EXIT_SOLVER


def _run_product_rule(args, out_dir: Path, rng) -> tuple:
    coeff_draws = [(_fourier_coeffs(rng), _fourier_coeffs(rng)) for _ in range(args.samples)]
    rows = []
    per_level_max = {}
    for level in args.levels:
        mesh = _build_mesh(args.preset, level)
        level_max = 0.0
        for i, (c1, c2) in enumerate(coeff_draws):
            v1 = _fourier_field(mesh, c1, args.amplitude)
            v2 = _fourier_field(mesh, c2, args.amplitude)
            lhs, rhs, ratio = fracnorm.product_check(
                v1, v2, args.tau, args.tau1, args.tau2, args.k, args.k1, args.k2
            )
            level_max = max(level_max, ratio)
            rows.append(f"{level},{i},{_fmt(lhs)},{_fmt(rhs)},{_fmt(ratio)}")
        per_level_max[level] = level_max
    artifacts = [_write_csv(out_dir, "product_rule.csv", "level,sample,lhs,rhs,ratio", rows)]
    return _stability_checks(per_level_max, args.stability_rtol), artifacts, EXIT_SOLVER


def _run_regularity(args, out_dir: Path, rng) -> tuple:
    spec = load_problem_config(args.config)
    reports = regularity.refinement_study(
        spec,
        args.levels,
        damping=args.damping,
        max_iter=args.max_iter,
        kkt_tol=args.kkt_tol,
        active_tol=args.active_tol,
    )
    rows = []
    for name in regularity.STUDY_FIELDS:
        rows.extend(reports[name].csv_rows())
    artifacts = [_write_csv(out_dir, "regularity.csv", regularity.REGULARITY_CSV_HEADER, rows)]

    flags = {
        name: {
            "stabilization": reports[name].stabilization,
            "growth_ratio": _jsonable(reports[name].growth_ratio),
            "divergence": reports[name].divergence_flag,
            "levels_converged": [r.solver_converged for r in reports[name].records],
        }
        for name in regularity.STUDY_FIELDS
    }
    artifacts.append(_write_text(out_dir, "regularity_flags.json", json.dumps(flags, indent=2)))

    checks = []
    for name in regularity.STUDY_FIELDS:
        rep = reports[name]
        checks.append(
            _check(
                f"lipschitz-stable-{name}",
                rep.stabilization,
                measured=rep.growth_ratio,
                detail="last two levels differ < 10% and all solves converged",
            )
        )
    return checks, artifacts, EXIT_SOLVER


_DISPATCH = {
    "exponents": _run_exponents,
    "check": _run_check,
    "solve-state": _run_solve_state,
    "gradient-check": _run_gradient_check,
    "solve-kkt": _run_solve_kkt,
    "robinson": _run_robinson,
    "frac-norm": _run_frac_norm,
    "chain-rule": _run_chain_rule,
    "product-rule": _run_product_rule,
    "regularity": _run_regularity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedreg",
        description="Mixed control-state constrained elliptic optimal control toolkit",
    )
    parser.add_argument("--out", default="out", help="output directory (MIXEDREG_OUT overrides)")
    parser.add_argument("--seed", type=int, default=42, help="seed for all sampling")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (this build is serial)")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="problem config file")

    p = sub.add_parser("exponents", help="integrability exponent table")
    p.add_argument("--N", type=float, default=2.0)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--q", type=float, required=True)

    p = sub.add_parser("check", help="verify the standing assumptions of a config")
    add_config(p)
    p.add_argument("--level", type=int, default=3)

    p = sub.add_parser("solve-state", help="solve the state equation for given controls")
    add_config(p)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--u-expr", default="0", help="interior control as an expression in x1, x2")
    p.add_argument("--v-expr", default="0", help="boundary control as an expression in x1, x2")
    p.add_argument("--newton-tol", type=float, default=solvers.NEWTON_TOL)

    p = sub.add_parser("gradient-check", help="compare the adjoint gradient with differences")
    add_config(p)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("solve-kkt", help="run the damped optimality fixed point")
    add_config(p)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--kkt-tol", type=float, default=kkt.KKT_TOL)
    p.add_argument("--active-tol", type=float, default=kkt.ACTIVE_TOL)

    p = sub.add_parser("robinson", help="constructive surjectivity residuals")
    add_config(p)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--targets", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("frac-norm", help="fractional boundary norm of a field expression")
    p.add_argument("--preset", choices=("disk", "ellipse"), default="disk")
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--field", default="x1", help="expression in x1, x2")

    p = sub.add_parser("chain-rule", help="measured constants of the superposition bound")
    p.add_argument("--preset", choices=("disk", "ellipse"), default="disk")
    p.add_argument("--levels", type=int, nargs="+", default=[3, 4])
    p.add_argument("--a", default="sin(t)", help="expression in x1, x2, t")
    p.add_argument("--tau", type=float, default=1.0 / 3.0)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--stability-rtol", type=float, default=0.25)

    p = sub.add_parser("product-rule", help="measured constants of the product bound")
    p.add_argument("--preset", choices=("disk", "ellipse"), default="disk")
    p.add_argument("--levels", type=int, nargs="+", default=[3, 4])
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--tau1", type=float, default=0.5)
    p.add_argument("--tau2", type=float, default=0.5)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--k1", type=float, default=2.0)
    p.add_argument("--k2", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--stability-rtol", type=float, default=0.25)

    p = sub.add_parser("regularity", help="refinement study of solution seminorms")
    add_config(p)
    p.add_argument("--levels", type=int, nargs="+", default=[3, 4, 5])
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--kkt-tol", type=float, default=kkt.KKT_TOL)
    p.add_argument("--active-tol", type=float, default=kkt.ACTIVE_TOL)

    return parser


def _summary_doc(args, checks: list, artifacts: list) -> dict:
    doc = {
        "subcommand": args.cmd,
        "config": getattr(args, "config", None),
        "levels": list(getattr(args, "levels", [])) or (
            [args.level] if hasattr(args, "level") else []
        ),
        "seed": args.seed,
        "checks": checks,
        "artifacts": artifacts,
        "all_passed": all(c["passed"] for c in checks),
    }
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(os.environ.get("MIXEDREG_OUT") or args.out)
    rng = np.random.default_rng(args.seed)

    for name in ("kkt_tol", "active_tol", "newton_tol", "tol"):
        if getattr(args, name, 1.0) <= 0.0:
            print(f"error: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_CONFIG
    if hasattr(args, "levels") and not args.levels:
        print("error: empty level range", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handler = _DISPATCH[args.cmd]
    fail_code = EXIT_SOLVER
    try:
        checks, artifacts, fail_code = handler(args, out_dir, rng)
    except _SOLVER_ERRORS as exc:
        checks = [_check("solver-completed", False, detail=f"{type(exc).__name__}: {exc}")]
        artifacts = []
        doc = _summary_doc(args, checks, artifacts)
        _write_text(out_dir, "summary.json", json.dumps(doc, indent=2))
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    doc = _summary_doc(args, checks, artifacts)
    _write_text(out_dir, "summary.json", json.dumps(doc, indent=2))
    for c in checks:
        mark = "ok  " if c["passed"] else "FAIL"
        extra = f" (measured {c['measured']})" if "measured" in c else ""
        if not c["passed"] and c.get("detail"):
            extra += f": {c['detail']}"
        print(f"[{mark}] {c['name']}{extra}")
    return EXIT_OK if doc["all_passed"] else fail_code
