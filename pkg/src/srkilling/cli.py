"""srkilling command line: structure ingestion, subcommand dispatch, and
deterministic JSON reporting.

Exit codes: 0 when every check passes, 2 on input errors (unreadable or
malformed files, bad arguments), 3 when a computation ran but a check
failed.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from . import expr as ex
from .expr import ExprError
from .frame import (
    ContactStructure,
    StructureError,
    check_special,
    load_structure,
    sample_box_points,
)
from .connection import (
    NotSpecialError,
    compute_connection,
    curvature,
    eval_tensor,
    higher_derivatives,
    verify_geometry,
)
from .killing import (
    Grid,
    a_z_matrix,
    generator_space,
    load_curve_text,
    load_generator_text,
    path_independence,
    reconstruct_field,
    riemannian_extension_check,
    scan_regularity,
    transport,
    verify_killing,
    verify_killing_field,
)
from .report import check_records_payload, render_pretty, to_json

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CHECK = 3


class InputError(Exception):
    pass


def _parse_point(text: str, s: ContactStructure) -> np.ndarray:
    vals: dict[str, float] = {}
    parts = [p for p in text.split(",") if p.strip()]
    if s.mode == "lie":
        return np.zeros(0)
    if any("=" in p for p in parts):
        for p in parts:
            if "=" not in p:
                raise InputError(f"mixed point syntax in {text!r}")
            k, v = p.split("=", 1)
            vals[k.strip()] = float(v)
        missing = [c for c in s.coords if c not in vals]
        if missing:
            raise InputError(f"point is missing coordinates {missing}")
        return np.array([vals[c] for c in s.coords])
    if len(parts) != s.dim:
        raise InputError(f"point needs {s.dim} comma-separated values")
    return np.array([float(p) for p in parts])


def _parse_grid(text: str, s: ContactStructure) -> Grid:
    if s.mode == "lie":
        return Grid(names=[], axes=[])
    axes_by_name: dict[str, np.ndarray] = {}
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 4:
            raise InputError(f"grid component {part!r} is not name:min:max:count")
        name, lo, hi, count = bits[0], float(bits[1]), float(bits[2]), int(bits[3])
        if name not in s.coords:
            raise InputError(f"unknown grid coordinate {name!r}")
        axes_by_name[name] = np.linspace(lo, hi, count)
    missing = [c for c in s.coords if c not in axes_by_name]
    if missing:
        raise InputError(f"grid is missing coordinates {missing}")
    return Grid(names=list(s.coords), axes=[axes_by_name[c] for c in s.coords])


def _sample_points(s: ContactStructure, args, count: int = 100) -> np.ndarray:
    if s.mode == "lie":
        return np.zeros((1, 0))
    if getattr(args, "grid", None):
        return _parse_grid(args.grid, s).points
    return np.vstack(
        [np.zeros((1, s.dim)), sample_box_points(s.dim, count, seed=args.seed)]
    )


def _load(args) -> ContactStructure:
    source = args.structure
    try:
        return load_structure(source, seed=args.seed)
    except (StructureError, ExprError) as e:
        raise InputError(str(e)) from e


def _structure_header(s: ContactStructure) -> dict:
    return {
        "tool": "srkilling",
        "version": __version__,
        "structure": {
            "name": s.name or "<file>",
            "mode": s.mode,
            "n": s.n,
            "fingerprint": s.fingerprint(),
        },
    }


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise InputError(f"cannot read {path!r}: {e}") from None


def _finish(report: dict, args) -> int:
    ok = report.get("pass", True)
    text = render_pretty(report) if args.pretty else to_json(report)
    out_path = getattr(args, "out", None)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    s = _load(args)
    pts = _sample_points(s, args)
    records = []
    B = s.dalpha_frame()
    from .frame import wedge_power

    Bv = np.stack([np.stack([s.eval_scalar(e, pts) for e in row]) for row in B])
    wedge = np.array([wedge_power(Bv[:, :, p], s.n) for p in range(Bv.shape[2])])
    res_norm = float(np.max(np.abs(wedge - 1.0))) if wedge.size else 0.0
    records.append(
        {
            "check": "normalization",
            "max_residual": res_norm,
            "points_tested": int(pts.shape[0]),
            "pass": res_norm < args.tol,
        }
    )
    res_axi = float(np.max(np.abs(s.eval_scalar(s.alpha_of(s.reeb), pts) - 1.0)))
    worst_dxi = 0.0
    for j in range(s.dim):
        e_j = [ex.ONE if i == j else ex.ZERO for i in range(s.dim)]
        worst_dxi = max(worst_dxi, float(np.max(np.abs(s.eval_scalar(s.dalpha_on(s.reeb, e_j), pts)))))
    res_reeb = max(res_axi, worst_dxi)
    records.append(
        {
            "check": "reeb_identities",
            "max_residual": res_reeb,
            "points_tested": int(pts.shape[0]),
            "pass": res_reeb < max(args.tol, 1e-8),
        }
    )
    rep = check_special(s, points=pts, tol=args.tol)
    records.append(
        {
            "check": "special_bracket_horizontal",
            "max_residual": rep.r1,
            "points_tested": rep.points,
            "pass": rep.r1 < args.tol,
        }
    )
    records.append(
        {
            "check": "special_reeb_killing",
            "max_residual": rep.r2,
            "points_tested": rep.points,
            "pass": rep.r2 < args.tol,
        }
    )
    report = _structure_header(s)
    report["checks"] = records
    report["special"] = bool(rep.special)
    report["orientation_sign"] = s.orientation_sign
    report["pass"] = all(r["pass"] for r in records)
    return _finish(report, args)


def cmd_connection(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    q = _parse_point(args.at, s) if args.at else (np.zeros(s.dim) if s.coords else np.zeros(0))
    pts = q[None, :] if s.coords else np.zeros((1, 0))
    h = s.h
    gamma_h = [
        [[float(s.eval_scalar(conn.gamma_h[a][j][k], pts)[0]) for k in range(h)] for j in range(h)]
        for a in range(h)
    ]
    gamma_xi = [
        [float(s.eval_scalar(conn.gamma_xi[j][k], pts)[0]) for k in range(h)] for j in range(h)
    ]
    report = _structure_header(s)
    report["at"] = q.tolist()
    report["gamma_h"] = gamma_h
    report["gamma_xi"] = gamma_xi
    report["pass"] = True
    return _finish(report, args)


def cmd_curvature(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    q = _parse_point(args.at, s) if args.at else (np.zeros(s.dim) if s.coords else np.zeros(0))
    pts = q[None, :] if s.coords else np.zeros((1, 0))
    order = 0 if args.order in (None, "auto") else int(args.order)
    higher_derivatives(cd, order)
    Rv = eval_tensor(s, cd.R, pts)[..., 0]
    report = _structure_header(s)
    report["at"] = q.tolist()
    report["R"] = Rv.tolist()
    report["max_abs_R"] = float(np.max(np.abs(Rv))) if Rv.size else 0.0
    nabla_norms = []
    for i in range(order + 1):
        Tv = eval_tensor(s, cd.nabla_R[i], pts)
        nabla_norms.append(float(np.max(np.abs(Tv))) if Tv.size else 0.0)
    report["nabla_R_max_abs"] = nabla_norms
    report["pass"] = True
    return _finish(report, args)


def cmd_verify_geometry(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    pts = _sample_points(s, args)
    records = verify_geometry(cd, points=pts, tol=args.tol)
    report = _structure_header(s)
    report["checks"] = check_records_payload(records)
    report["pass"] = all(r.pass_ for r in records)
    return _finish(report, args)


def cmd_dim(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    q = _parse_point(args.at, s) if args.at else (np.zeros(s.dim) if s.coords else None)
    order = args.order if args.order == "auto" else int(args.order)
    gs = generator_space(cd, q, order=order, m_max=args.max_order)
    report = _structure_header(s)
    report["at"] = q.tolist() if q is not None else None
    report["dims"] = gs.dims
    report["dim_i"] = gs.dim
    report["certified"] = gs.certified
    report["m_used"] = gs.m_used
    report["singular_values"] = [float(v) for v in gs.singular_values]
    report["dim_bound"] = (s.n + 1) ** 2
    report["pass"] = bool(gs.dim <= (s.n + 1) ** 2)
    return _finish(report, args)


def cmd_prolong(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    curve = load_curve_text(_read_text(args.curve[0]), s)
    gen = load_generator_text(_read_text(args.gen), s)
    res = transport(
        cd, gen, curve, step=args.step, require_horizontal=args.require_horizontal
    )
    report = _structure_header(s)
    report["endpoint"] = res.gen.q.tolist()
    report["X"] = res.gen.X.tolist()
    report["A"] = res.gen.A.tolist()
    report["c"] = res.gen.c
    report["skew_drift"] = res.skew_drift
    report["steps"] = res.steps
    report["max_alpha_velocity"] = res.horizontal_violation
    report["pass"] = bool(res.skew_drift < 1e-8)
    return _finish(report, args)


def cmd_path_check(args) -> int:
    s = _load(args)
    if len(args.curve) != 2:
        raise InputError("path-check needs exactly two --curve files")
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    c1 = load_curve_text(_read_text(args.curve[0]), s)
    c2 = load_curve_text(_read_text(args.curve[1]), s)
    gen = load_generator_text(_read_text(args.gen), s)
    rep = path_independence(cd, gen, c1, c2, step=args.step)
    report = _structure_header(s)
    report["deviation"] = rep["deviation"]
    report["tolerance"] = args.tol if args.tol != 1e-10 else 1e-6
    report["pass"] = bool(rep["deviation"] < report["tolerance"])
    return _finish(report, args)


def cmd_reconstruct(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    gen = load_generator_text(_read_text(args.gen), s)
    grid = _parse_grid(args.grid, s)
    field = reconstruct_field(cd, gen, grid, step=args.step)
    payload = _structure_header(s)
    payload["grid"] = {
        "names": grid.names,
        "axes": [a.tolist() for a in grid.axes],
    }
    payload["points"] = grid.points.tolist()
    payload["X"] = field.X.tolist()
    payload["c"] = field.c.tolist()
    payload["A"] = field.A.tolist()
    payload["Z_coords"] = field.Z_coords.tolist()
    records = verify_killing_field(cd, field)
    payload["checks"] = check_records_payload(records)
    payload["pass"] = all(r.pass_ for r in records)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(to_json(payload, pretty=args.pretty))
        summary = {
            "out": args.out,
            "grid_points": int(grid.points.shape[0]),
            "checks": payload["checks"],
            "pass": payload["pass"],
        }
        sys.stdout.write(render_pretty(summary) if args.pretty else to_json(summary))
        return EXIT_OK if payload["pass"] else EXIT_CHECK
    args.out = None
    return _finish(payload, args)


def cmd_verify(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    report = _structure_header(s)
    if args.field:
        try:
            Z = s.parse_field(args.field)
        except (StructureError, ExprError) as e:
            raise InputError(str(e)) from e
        pts = _sample_points(s, args)
        records = verify_killing(cd, Z, points=pts, tol=args.field_tol)
        records += riemannian_extension_check(cd, Z, points=pts, tol=args.field_tol)
        az = a_z_matrix(conn, Z, pts[0] if s.coords else None)
        report["generator_at_first_point"] = {
            "X": az.gen.X.tolist(),
            "A": az.gen.A.tolist(),
            "c": az.gen.c,
            "contact_residual": az.contact_residual,
        }
    elif args.field_json:
        raise InputError(
            "verifying a reconstructed field file: use reconstruct, which "
            "emits the finite-difference checks alongside the field"
        )
    else:
        raise InputError("verify needs --field \"<expr>,...\"")
    report["checks"] = check_records_payload(records)
    report["pass"] = all(r.pass_ for r in records)
    return _finish(report, args)


def cmd_scan(args) -> int:
    s = _load(args)
    conn = compute_connection(s, tol=args.tol)
    cd = curvature(conn)
    grid = _parse_grid(args.grid, s) if args.grid else Grid(names=[], axes=[])
    order = args.order if args.order == "auto" else int(args.order)
    rep = scan_regularity(cd, grid, order=order, m_max=args.max_order)
    report = _structure_header(s)
    report.update(rep)
    ok = rep.get("semicontinuity_violations", 0) == 0
    if rep.get("dims"):
        ok = ok and max(rep["dims"]) <= (s.n + 1) ** 2
    report["pass"] = bool(ok)
    return _finish(report, args)


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srkilling",
        description=(
            "Contact sub-Riemannian structures from orthonormal frames: "
            "normalized contact form, Reeb field, canonical connection, "
            "curvature, generator spaces of infinitesimal isometries, and "
            "their numerical transport and reconstruction."
        ),
    )
    parser.add_argument("--version", action="version", version=f"srkilling {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, structure: bool = True):
        if structure:
            p.add_argument(
                "structure",
                nargs="?",
                help="builtin name (heisenberg:<n>, su2, su2:chart) or definition file",
            )
            p.add_argument("--structure", dest="structure_opt", help=argparse.SUPPRESS)
        p.add_argument("--tol", type=float, default=1e-10, help="residual tolerance")
        p.add_argument("--seed", type=int, default=0, help="seed for sample points")
        p.add_argument("--out", help="write the report to this path instead of stdout")
        p.add_argument("--pretty", action="store_true", help="human-readable tables")

    p = sub.add_parser(
        "check",
        help="validate the structure: normalization of the contact form, "
        "Reeb identities, and the special condition (Reeb flow is Killing)",
    )
    common(p)
    p.add_argument("--grid", help="sample grid spec name:min:max:count,...")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser(
        "connection",
        help="frame coefficients of the unique metric torsion-free connection",
    )
    common(p)
    p.add_argument("--at", help="evaluation point (x=..,y=.. or comma list)")
    p.set_defaults(fn=cmd_connection)

    p = sub.add_parser(
        "curvature",
        help="curvature components R(e_a,e_b)e_j at a point, with optional "
        "higher covariant-derivative norms",
    )
    common(p)
    p.add_argument("--at", help="evaluation point")
    p.add_argument("--order", default=None, help="cache nabla^i R through this order")
    p.set_defaults(fn=cmd_curvature)

    p = sub.add_parser(
        "verify-geometry",
        help="identity suite: metricity, torsion, both Bianchi identities, "
        "R(xi,.)=0, skewness of R, and the cyclic nabla-dalpha identity",
    )
    common(p)
    p.add_argument("--grid", help="sample grid spec")
    p.set_defaults(fn=cmd_verify_geometry)

    p = sub.add_parser(
        "dim",
        help="dimension of the isometry generator space i_m(q) with "
        "stabilization certificate",
    )
    common(p)
    p.add_argument("--at", help="base point")
    p.add_argument("--order", default="auto", help="'auto' or explicit order m")
    p.add_argument("--max-order", type=int, default=6, help="stabilization cap")
    p.set_defaults(fn=cmd_dim)

    p = sub.add_parser(
        "prolong",
        help="transport a generator (X, A, c) along a curve by the "
        "prolongation equations (fixed-step RK4)",
    )
    common(p)
    p.add_argument("--curve", action="append", required=True, help="curve file")
    p.add_argument("--gen", required=True, help="generator file")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 step")
    p.add_argument(
        "--require-horizontal",
        action="store_true",
        help="fail unless the curve is horizontal (|alpha(gamma')| < 1e-9)",
    )
    p.set_defaults(fn=cmd_prolong)

    p = sub.add_parser(
        "path-check",
        help="transport along two curves with shared endpoints and report "
        "the endpoint deviation",
    )
    common(p)
    p.add_argument("--curve", action="append", required=True, help="curve file (twice)")
    p.add_argument("--gen", required=True, help="generator file")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 step")
    p.set_defaults(fn=cmd_path_check)

    p = sub.add_parser(
        "reconstruct",
        help="transport a generator over a grid along vertical-then-straight "
        "legs and emit the field Z = X + c xi with finite-difference checks",
    )
    common(p)
    p.add_argument("--gen", required=True, help="generator file")
    p.add_argument("--grid", required=True, help="grid spec name:min:max:count,...")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 step")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser(
        "verify",
        help="residual checks for a candidate Killing field: contact "
        "condition, Killing equation, skewness and parallelism of A_Z, the "
        "curvature identity for its derivative, gradient equations, "
        "commutation with the Reeb field, invariance of alpha, and the "
        "extended Riemannian metric",
    )
    common(p)
    p.add_argument("--field", help="comma-separated coordinate components")
    p.add_argument("--field-json", help=argparse.SUPPRESS)
    p.add_argument("--grid", help="sample grid spec")
    p.add_argument("--field-tol", type=float, default=1e-9, help="check tolerance")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser(
        "scan",
        help="generator-space dimension over a grid with regularity flags "
        "and a semicontinuity audit",
    )
    common(p)
    p.add_argument("--grid", help="grid spec")
    p.add_argument("--order", default="auto", help="'auto' or explicit order")
    p.add_argument("--max-order", type=int, default=6, help="stabilization cap")
    p.set_defaults(fn=cmd_scan)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "structure_opt", None) and not args.structure:
        args.structure = args.structure_opt
    if hasattr(args, "structure") and not args.structure:
        _error_report("missing structure argument", args)
        return EXIT_INPUT
    try:
        return args.fn(args)
    except InputError as e:
        _error_report(str(e), args)
        return EXIT_INPUT
    except (StructureError, ExprError) as e:
        _error_report(str(e), args)
        return EXIT_INPUT
    except MemoryError as e:
        _error_report(str(e), args)
        return EXIT_INPUT
    except NotSpecialError as e:
        _error_report(str(e), args, kind="check_failure")
        return EXIT_CHECK
    except (ValueError,) as e:
        _error_report(str(e), args, kind="check_failure")
        return EXIT_CHECK


def _error_report(message: str, args, kind: str = "input_error") -> None:
    payload = {
        "tool": "srkilling",
        "version": __version__,
        "error": {"kind": kind, "message": message},
        "pass": False,
    }
    pretty = bool(getattr(args, "pretty", False))
    sys.stdout.write(render_pretty(payload) if pretty else to_json(payload))


if __name__ == "__main__":
    raise SystemExit(main())
