"""Command line front end: ``pssurf {check,classify,rhs,solve,immerse,probe,report}``."""
from __future__ import annotations

import argparse
import json
import sys as _sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, jet
from .config import DEFAULTS, parse_tolerances
from .immersion import (ClosedForm, EmptyStripError, ImmersionError, OutsideStripError,
                        foliation_report, gaussian_curvature_mesh, immerse_solution, interior,
                        select_sign_pairing, write_diagnostics_csv, write_obj)
from .obstruction import INCONSISTENT, ConsistentGroupError, verify_inconsistency
from .solver import Grid, SolverAbort, StepperConfig, read_csv, solve
from .system import (ClassificationError, PreconditionError, SystemSpecError, classify,
                     evolution_rhs, lemma_check, load_system, sample_points)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_AMBIGUOUS = 3
EXIT_SOLVER_ABORT = 4
EXIT_STRIP = 5
EXIT_INCONCLUSIVE = 6
EXIT_GROUP_I = 7


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _manifest(args, tol: dict, outputs: list[str], extra: dict | None = None) -> None:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "tol")}
    data = {"command": args.command, "version": __version__, "seed": args.seed,
            "parameters": params, "tolerances": tol, "outputs": outputs}
    data.update(extra or {})
    _write_json(_out_dir(args) / "manifest.json", data)


def _load(args):
    if not args.spec:
        raise UsageError("--spec is required")
    path = Path(args.spec)
    if not path.is_file():
        raise UsageError(f"system file not found: {path}")
    return load_system(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check(args, tol) -> int:
    system = _load(args)
    samples = sample_points(system, args.samples, seed=args.seed)
    report = lemma_check(system, samples, tol=tol["seq"])
    for c in report.conditions:
        print(f"{c.name:20s} {c.status:14s} {c.detail}")
    print("PASS" if report.passed else "FAIL")
    _write_json(_out_dir(args) / "check.json", report.as_dict())
    _manifest(args, tol, ["check.json"])
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_classify(args, tol) -> int:
    system = _load(args)
    samples = sample_points(system, args.samples, seed=args.seed)
    try:
        label = classify(system, samples)
    except ClassificationError as exc:
        print(f"ambiguous: {exc}")
        _manifest(args, tol, [], {"error": str(exc)})
        return EXIT_AMBIGUOUS
    print(label)
    _write_json(_out_dir(args) / "classify.json", label.as_dict())
    _manifest(args, tol, ["classify.json"])
    return EXIT_OK


def cmd_rhs(args, tol) -> int:
    system = _load(args)
    try:
        F = evolution_rhs(system)
    except PreconditionError as exc:
        print(f"no admissible right-hand side: {exc}")
        return EXIT_CHECK_FAILED
    print(jet.to_string(F))
    return EXIT_OK


def _expr(text: str, system, what: str):
    try:
        return jet.parse(text, system.k, system.constants)
    except jet.ParseError as exc:
        raise UsageError(f"{what}: {exc}") from None


def _solve(args, system, tol):
    """Run the solver from the grid/stepper flags; returns (solution, max error or None)."""
    env = system.env
    u0 = jet.compile_expr(_expr(args.u0, system, "--u0"))
    exact = jet.compile_expr(_expr(args.exact, system, "--exact")) if args.exact else None

    def at(fn, x, t):
        return np.broadcast_to(np.asarray(fn({**env, "x": x, "t": t}), dtype=float), np.shape(x)).copy()

    if args.boundary == "dirichlet":
        if exact is not None:
            left = lambda t: float(at(exact, args.xmin, t))
            right = lambda t: float(at(exact, args.xmax, t))
        else:
            lv, rv = float(at(u0, args.xmin, 0.0)), float(at(u0, args.xmax, 0.0))
            left, right = (lambda t: lv), (lambda t: rv)
        grid = Grid.dirichlet(args.xmin, args.xmax, args.nx, left, right)
    else:
        grid = Grid.periodic(args.xmin, args.xmax, args.nx)
    cfg = StepperConfig(args.dt, args.tend, jet_stencil_order=args.stencil, store_every=args.store_every)
    sol = solve(system, lambda x: at(u0, x, 0.0), grid, cfg)
    err = None
    if exact is not None:
        err = max(float(np.max(np.abs(sol.u[j] - at(exact, sol.x, float(t))))) for j, t in enumerate(sol.times))
    return sol, err


def cmd_solve(args, tol) -> int:
    system = _load(args)
    out = _out_dir(args)
    try:
        sol, err = _solve(args, system, tol)
    except SolverAbort as exc:
        print(f"solver aborted: {exc} (last valid time {exc.last_valid_time:g})")
        if exc.field is not None:
            exc.field.to_csv(out / "solution.csv")
        _manifest(args, tol, ["solution.csv"] if exc.field is not None else [], {"abort": str(exc)})
        return EXIT_SOLVER_ABORT
    sol.to_csv(out / "solution.csv")
    summary = {"frames": int(sol.times.size), "t_final": float(sol.times[-1]),
               "max_structure_residual": None if sol.residuals is None else float(np.max(sol.residuals))}
    ok = True
    if err is not None:
        summary["max_error"] = err
        ok = err <= tol["solve_error"]
        print(f"max error vs exact: {err:.3e} ({'ok' if ok else 'above tolerance'})")
    print(f"wrote {sol.times.size} frames to {out / 'solution.csv'}")
    _manifest(args, tol, ["solution.csv"], {"summary": summary})
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _abc_sign(args, system, tol) -> tuple[int, dict]:
    if args.abc_sign in ("+", "-"):
        return (1 if args.abc_sign == "+" else -1), {"mode": "flag"}
    pairing = select_sign_pairing(system, args.l, args.gamma, seed=args.seed, tol=tol["codazzi"])
    info = {"mode": "auto", "residuals": {str(k): v for k, v in pairing.max_residual.items()}}
    if not pairing.unique:
        raise UsageError(f"sign pairing is not unique for this system: {info['residuals']}; pass --abc-sign")
    return pairing.selected, info


def cmd_immerse(args, tol) -> int:
    system = _load(args)
    out = _out_dir(args)
    try:
        form0 = ClosedForm(args.l, args.gamma, 1)
    except (ValueError, EmptyStripError) as exc:
        raise UsageError(str(exc)) from None
    sign, sign_info = _abc_sign(args, system, tol)
    form = ClosedForm(form0.l, form0.gamma, sign)
    if args.solution:
        if not Path(args.solution).is_file():
            raise UsageError(f"solution file not found: {args.solution}")
        sol = read_csv(args.solution, stencil_order=args.stencil)
    else:
        try:
            sol, _ = _solve(args, system, tol)
        except SolverAbort as exc:
            print(f"solver aborted: {exc}")
            return EXIT_SOLVER_ABORT
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            mesh = immerse_solution(system, sol, form, margin=args.margin, drift_tol=tol["drift_abort"],
                                    check_tol=tol["compat"])
    except OutsideStripError as exc:
        print(f"line misses strip: {exc}")
        _manifest(args, tol, [], {"error": str(exc)})
        return EXIT_STRIP
    except ImmersionError as exc:
        print(f"immersion aborted: {exc}")
        _manifest(args, tol, [], {"error": str(exc)})
        return EXIT_CHECK_FAILED
    for w in caught:
        print(f"warning: {w.message}")

    write_obj(mesh, out / "mesh.obj")
    write_diagnostics_csv(mesh, out / "diagnostics.csv")
    K = interior(gaussian_curvature_mesh(mesh), DEFAULTS["interior_cells"])
    s = system.eta * mesh.x[None, :] + system.beta * mesh.t[:, None]
    deltas = args.deltas if args.deltas else list(np.linspace(s.min(), s.max(), 7)[1:-1])
    lines = foliation_report(mesh, system.eta, system.beta, deltas)
    fol = max((ln.max_deviation for ln in lines if ln.status == "ok"), default=0.0)
    checks = {
        "metric": (float(mesh.metric_error().max()), tol["metric"]),
        "drift": (mesh.max_drift, tol["drift"]),
        "path": (mesh.path_defect, tol["path"]),
        "curvature": (float(np.max(np.abs(K + 1.0))), tol["curvature"]),
        "foliation": (fol, tol["foliation"]),
    }
    ok = True
    for name, (value, limit) in checks.items():
        good = value <= limit
        ok &= good
        print(f"{name:10s} {value:.3e} <= {limit:g}  {'ok' if good else 'FAIL'}")
    for ln in lines:
        if ln.status != "ok":
            print(f"line delta={ln.delta:g}: {ln.status} {ln.note}")
    summary = {"abc_sign": sign, "sign_pairing": sign_info,
               "checks": {k: {"value": v, "limit": lim} for k, (v, lim) in checks.items()},
               "foliation": [ln.as_dict() for ln in lines], "margin": args.margin}
    _write_json(out / "immerse.json", summary)
    _manifest(args, tol, ["mesh.obj", "diagnostics.csv", "immerse.json"])
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_probe(args, tol) -> int:
    system = _load(args)
    samples = sample_points(system, args.samples, seed=args.seed)
    try:
        witness = verify_inconsistency(system, samples, tol=tol["det"])
    except ConsistentGroupError as exc:
        print(f"rejected: {exc}")
        return EXIT_GROUP_I
    except ClassificationError as exc:
        print(f"ambiguous: {exc}")
        return EXIT_AMBIGUOUS
    print(witness.to_json())
    _write_json(_out_dir(args) / "witness.json", witness.as_dict())
    _manifest(args, tol, ["witness.json"])
    return EXIT_OK if witness.conclusion == INCONSISTENT else EXIT_INCONCLUSIVE


def cmd_report(args, tol) -> int:
    """Lemma check, classification and the matching follow-up in one JSON file."""
    system = _load(args)
    samples = sample_points(system, args.samples, seed=args.seed)
    check = lemma_check(system, samples, tol=tol["seq"])
    report = {"system": system.name, "lemma": check.as_dict()}
    code = EXIT_OK if check.passed else EXIT_CHECK_FAILED
    try:
        label = classify(system, samples)
    except ClassificationError as exc:
        report["classification"] = {"error": str(exc)}
        code = max(code, EXIT_AMBIGUOUS)
        label = None
    if label is not None:
        report["classification"] = label.as_dict()
        if label.group == "I":
            try:
                pairing = select_sign_pairing(system, args.l, args.gamma, seed=args.seed, tol=tol["codazzi"])
            except (ValueError, EmptyStripError) as exc:
                raise UsageError(str(exc)) from None
            report["sign_pairing"] = {"selected": pairing.selected,
                                      "residuals": {str(k): v for k, v in pairing.max_residual.items()}}
            if not pairing.unique:
                code = max(code, EXIT_CHECK_FAILED)
        else:
            w = verify_inconsistency(system, samples, label, tol=tol["det"])
            report["obstruction"] = w.as_dict()
            if w.conclusion != INCONSISTENT:
                code = max(code, EXIT_INCONCLUSIVE)
    print(f"lemma: {'pass' if check.passed else 'fail'}")
    if label is not None:
        print(f"group: {label}")
    if "sign_pairing" in report:
        print(f"sign pairing: {report['sign_pairing']['selected']}")
    if "obstruction" in report:
        print(f"obstruction: {report['obstruction']['conclusion']} (det={report['obstruction']['det']:.6g})")
    _write_json(_out_dir(args) / "report.json", report)
    _manifest(args, tol, ["report.json"])
    return code


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="system file (key = value format)")
    p.add_argument("--out", default="pssurf-out", help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--samples", type=int, default=DEFAULTS["samples"])


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--xmin", type=float, default=DEFAULTS["xmin"])
    p.add_argument("--xmax", type=float, default=DEFAULTS["xmax"])
    p.add_argument("--nx", type=int, default=DEFAULTS["nx"])
    b = p.add_mutually_exclusive_group()
    b.add_argument("--periodic", dest="boundary", action="store_const", const="periodic")
    b.add_argument("--dirichlet", dest="boundary", action="store_const", const="dirichlet")
    p.set_defaults(boundary=DEFAULTS["boundary"])
    p.add_argument("--dt", type=float, default=DEFAULTS["dt"])
    p.add_argument("--tend", type=float, default=DEFAULTS["tend"])
    p.add_argument("--store-every", type=int, default=DEFAULTS["store_every"])
    p.add_argument("--stencil", type=int, choices=(2, 4), default=DEFAULTS["stencil"])
    p.add_argument("--u0", default="sin(x)", help="initial data, an expression in x")
    p.add_argument("--exact", help="exact solution in x, t (error report and dirichlet data)")


def _immersion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l", type=float, default=DEFAULTS["l"])
    p.add_argument("--gamma", type=float, default=DEFAULTS["gamma"])
    p.add_argument("--abc-sign", choices=("+", "-", "auto"), default="auto")
    p.add_argument("--margin", type=float, default=DEFAULTS["margin"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pssurf", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="test the structure-equation conditions")
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("classify", help="assign group I-V")
    _common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("rhs", help="print the admissible right-hand side F")
    _common(p)
    p.set_defaults(func=cmd_rhs)

    p = sub.add_parser("solve", help="integrate z0_t = F and write solution.csv")
    _common(p)
    _grid_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("immerse", help="build the surface mesh from a solution")
    _common(p)
    _grid_flags(p)
    _immersion_flags(p)
    p.add_argument("--solution", help="solution CSV (otherwise the solver runs first)")
    p.add_argument("--deltas", type=float, nargs="*", help="foliation lines eta x + beta t = delta")
    p.set_defaults(func=cmd_immerse)

    p = sub.add_parser("probe", help="search for an obstruction witness (groups II-V)")
    _common(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="lemma check, classification and follow-up")
    _common(p)
    _immersion_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        tol = parse_tolerances(args.tol)
        return args.func(args, tol)
    except (UsageError, SystemSpecError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    _sys.exit(main())
