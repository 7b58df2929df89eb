"""Command line entry point: ``degsing {solve,weights,embed,verify,oracle}``.

Exit codes: 0 success, 2 invalid input (schema or arguments), 3 solver
failure (a partial report is still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from fractions import Fraction

import jsonschema
import numpy as np
import sympy

from . import __version__
from .embedding import ExponentContext, RegularityPrediction, regularity_report
from .estimates import regularity_verdict
from .fem import discretize
from .mesh import build_mesh, domain_from_dict
from .oracle import RadialProblem, radial_solve
from .solver import (
    ContinuationError,
    ContinuationSchedule,
    ProblemSpec,
    continuation_solve,
    uniqueness_probe,
)
from .weights import (
    Ball,
    WeightSpec,
    check_as_membership,
    default_ball_family,
    doubling_check,
    estimate_ap_constant,
    random_balls,
)

log = logging.getLogger("degsing")

EXIT_INPUT = 2
EXIT_SOLVER = 3

_NUM = {"type": "number"}

DOMAIN_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["interval", "disk", "polygon"]},
        "a": _NUM,
        "b": _NUM,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "center": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "vertices": {"type": "array", "minItems": 3,
                     "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
    },
}

WEIGHT_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "power", "tabulated"]},
        "value": {"type": "number", "exclusiveMinimum": 0},
        "alpha": _NUM,
        "center": {"type": "array", "items": _NUM},
        "values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
    },
}

F_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "expression", "nodal"]},
        "value": {"type": "number", "minimum": 0},
        "expr": {"type": "string"},
        "values": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

SOLVE_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "solve configuration",
    "type": "object",
    "required": ["domain", "p", "delta", "f"],
    "additionalProperties": False,
    "properties": {
        "domain": DOMAIN_SCHEMA,
        "resolution": {"type": "integer", "minimum": 2},
        "p": {"type": "number", "exclusiveMinimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "f": F_SCHEMA,
        "weight": WEIGHT_SCHEMA,
        "m_claimed": {"type": "number", "minimum": 1},
        "lt_exponents": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "inner_tol": {"type": "number", "exclusiveMinimum": 0},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_picard": {"type": "integer", "minimum": 1},
                "max_newton": {"type": "integer", "minimum": 1},
                "early_stop": {"type": "number", "minimum": 0},
            },
        },
        "probes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"uniqueness": {"type": "boolean"}, "monotonicity": {"type": "boolean"}},
        },
    },
}

PREDICTION_SCHEMA = {
    "type": "object",
    "required": ["case", "space"],
    "properties": {
        "case": {"enum": ["subcritical", "critical", "supercritical"]},
        "space": {"enum": ["L_t", "L_infinity", "none_predicted"]},
        "t": {"type": ["number", "null"]},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["records"],
    "properties": {"records": {"type": "array", "items": {"type": "object", "required": ["n", "max_u"]}}},
}

TOLERANCE_KEYS = {"inner_tol", "picard_tol", "max_picard", "max_newton", "early_stop"}


class InputError(Exception):
    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


# ---------------------------------------------------------------------------
# serialisation


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, Fraction):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    return json.dumps(str(obj))


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write(path, text: str):
    if path is None or path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text + "\n")


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what}: {exc}", what) from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} is not valid JSON: {exc}", what) from exc


def _validate(instance, schema, what):
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    path = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path.append(missing[0])
    elif err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            path.append(extra[0])
    field = ".".join(path) or "<root>"
    raise InputError(f"{what}: invalid field '{field}': {err.message}", field)


# ---------------------------------------------------------------------------
# builders


def weight_from_config(cfg: dict, dimension: int, mesh=None) -> WeightSpec:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return WeightSpec.constant(cfg.get("value", 1.0), dimension)
    if kind == "power":
        return WeightSpec.power(cfg.get("alpha", 0.0), dimension, cfg.get("center"))
    if mesh is None or len(cfg.get("values", [])) != mesh.num_vertices:
        raise InputError("tabulated weight needs one value per mesh vertex", "weight.values")
    return WeightSpec.tabulated(mesh, cfg["values"])


def f_from_config(cfg: dict, dimension: int):
    kind = cfg["kind"]
    if kind == "constant":
        if "value" not in cfg:
            raise InputError("constant f needs 'value'", "f.value")
        return float(cfg["value"])
    if kind == "nodal":
        return np.asarray(cfg["values"], dtype=float)
    if "expr" not in cfg:
        raise InputError("expression f needs 'expr'", "f.expr")
    syms = sympy.symbols("x y")[:dimension]
    try:
        expr = sympy.sympify(cfg["expr"])
    except (sympy.SympifyError, TypeError) as exc:
        raise InputError(f"cannot parse f expression: {exc}", "f.expr") from exc
    func = sympy.lambdify(syms, expr, "numpy")

    def f(points):
        pts = np.asarray(points, dtype=float).reshape(-1, dimension)
        return np.broadcast_to(np.asarray(func(*[pts[:, i] for i in range(dimension)]), dtype=float),
                               (len(pts),))

    return f


def _parse_overrides(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"--tol-override expects key=value, got {item!r}", "tol-override")
        k, v = item.split("=", 1)
        if k not in TOLERANCE_KEYS:
            raise InputError(f"unknown tolerance key {k!r}", f"tol-override.{k}")
        try:
            out[k] = int(v) if k.startswith("max_") else float(v)
        except ValueError as exc:
            raise InputError(f"bad value for {k}: {v!r}", f"tol-override.{k}") from exc
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    config = _load_json(args.config, "config")
    _validate(config, SOLVE_SCHEMA, "config")
    overrides = _parse_overrides(args.tol_override)
    domain = domain_from_dict(config["domain"])
    mesh = build_mesh(domain, config.get("resolution", 64))
    N = mesh.dimension
    w = weight_from_config(config.get("weight", {"kind": "constant"}), N, mesh)
    f = f_from_config(config["f"], N)
    prob = ProblemSpec(config["p"], config["delta"], f, w, domain, config.get("m_claimed", math.inf))
    sched_cfg = dict(config.get("schedule", {}))
    sched_cfg.update(overrides)
    if "n_values" in sched_cfg:
        sched_cfg["n_values"] = tuple(sched_cfg["n_values"])
    try:
        sched = ContinuationSchedule(**sched_cfg)
    except ValueError as exc:
        raise InputError(str(exc), "schedule") from exc
    disc = discretize(mesh, w)
    lt = config.get("lt_exponents", [])
    report = {
        "version": __version__,
        "config_hash": config_hash(config),
        "config": config,
        "seed": args.seed,
        "tolerance_overrides": overrides,
        "mesh": {"vertices": mesh.num_vertices, "cells": mesh.num_cells, "dimension": N},
        "weight_certified": w.certified,
    }
    status = 0
    try:
        sols, rep = continuation_solve(prob, disc, sched, lt_exponents=lt)
    except ContinuationError as exc:
        rep = exc.report
        sols = None
        status = EXIT_SOLVER
    report.update(rep.to_dict())
    report["executed_schedule"] = rep.executed
    probes = config.get("probes", {})
    if sols is not None and probes.get("monotonicity", True):
        report["max_monotonicity_violation"] = max(r["monotonicity_violation"] for r in rep.records)
    if sols is not None and probes.get("uniqueness", False):
        rng = np.random.default_rng(args.seed)
        rnd = rng.uniform(0.0, 1.0, mesh.num_vertices)
        rnd[mesh.boundary] = 0.0
        ones = np.ones(mesh.num_vertices)
        ones[mesh.boundary] = 0.0
        try:
            report["uniqueness_distance"] = uniqueness_probe(prob, disc, sched, [None, ones, rnd])
        except ContinuationError as exc:
            report["uniqueness_error"] = str(exc)
            status = EXIT_SOLVER
    _write(args.out, dumps(report))
    if args.csv:
        _write_series(args.csv, rep, lt)
    if status:
        sys.stderr.write(dumps({"error": report.get("error") or report.get("uniqueness_error"),
                                "exit": status}) + "\n")
    return status


def _write_series(path, rep, lt):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "picard_iters", "residual", "min_u", "max_u", "x_norm", "power_x_norm",
                     "t", "lt_norm"])
    keys = list(rep.records[0]["lt_norms"]) if rep.records and rep.records[0]["lt_norms"] else []
    for r in rep.records:
        base = [r["n"], r["picard_iters"], _csvf(r["final_residual"]), _csvf(r["min_u"]),
                _csvf(r["max_u"]), _csvf(r["x_norm"]), _csvf(r["power_x_norm"])]
        if not keys:
            writer.writerow(base + ["", ""])
        for k in keys:
            writer.writerow(base + [k, _csvf(r["lt_norms"][k])])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _csvf(x):
    return format(float(x), ".17g")


def cmd_weights(args) -> int:
    N = args.N
    center = [float(c) for c in args.center.split(",")] if args.center else [0.0] * N
    if len(center) != N:
        raise InputError("--center must have N coordinates", "center")
    if args.p <= 1:
        raise InputError("--p must exceed 1", "p")
    if args.kind == "constant":
        w = WeightSpec.constant(args.value, N)
    else:
        w = WeightSpec.power(args.alpha, N, center)
    rng = np.random.default_rng(args.seed)
    balls = default_ball_family(w, 2.0)
    if args.balls:
        balls += [Ball(tuple(np.asarray(b.center) + center), b.radius)
                  for b in random_balls(args.balls, N, rng)]
    est = estimate_ap_constant(w, args.p, balls)
    unit = Ball(tuple(center), 1.0)
    as_res = check_as_membership(w, args.s, args.p, N, unit) if args.s is not None else None
    report = {
        "weight": w.to_dict(),
        "p": args.p,
        "seed": args.seed,
        "balls_tested": est.balls_tested,
        "ap_estimate": est.constant_estimate,
        "ap_member": est.member,
        "ap_diagnostic": est.diagnostic,
        "worst_ball": est.worst_ball.to_dict(),
        "as_member": None if as_res is None else as_res["member"],
        "s_valid": None if as_res is None else as_res["s_valid"],
        "integral_w_minus_s": None if as_res is None else as_res["integral"],
    }
    if est.member:
        report["doubling_max_ratio"] = doubling_check(w, args.p, balls[: min(len(balls), 40)])["max_ratio"]
    else:
        report["doubling_max_ratio"] = None
    _write(args.out, dumps(report))
    return 0


def _number(text):
    try:
        if "/" in text:
            return Fraction(text)
        if text.lower() in ("inf", "infinity"):
            return math.inf
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def cmd_embed(args) -> int:
    try:
        ctx = ExponentContext(args.p, args.s, args.N, args.delta, args.m, args.q)
        pred = regularity_report(ctx)
    except ValueError as exc:
        raise InputError(str(exc), "embed") from exc
    out = pred.to_dict()
    out["s_valid"] = ctx.s_valid
    _write(args.out, dumps(out))
    return 0


def cmd_verify(args) -> int:
    report = _load_json(args.report, "report")
    pred_d = _load_json(args.prediction, "prediction")
    _validate(report, REPORT_SCHEMA, "report")
    _validate(pred_d, PREDICTION_SCHEMA, "prediction")
    pred = RegularityPrediction.from_dict(pred_d)
    recs = report["records"]
    if pred.space == "none_predicted":
        out = {"verdict": "no prediction", "threshold": pred.threshold}
    else:
        if pred.space == "L_infinity":
            norms = [r["max_u"] for r in recs]
            key = "inf"
        else:
            key = format(float(pred.t), "g")
            if not all(key in r.get("lt_norms", {}) for r in recs):
                raise InputError(f"report has no L^{key} norms; add {key} to lt_exponents", "lt_norms")
            norms = [r["lt_norms"][key] for r in recs]
        out = regularity_verdict([float(v) for v in norms])
        out["space"] = pred.space
        out["t"] = key
    out["n"] = [r["n"] for r in recs]
    _write(args.out, dumps(out))
    return 0


def cmd_oracle(args) -> int:
    alpha = args.alpha
    rp = RadialProblem(
        args.N, args.p, args.delta, R=args.R,
        w=(lambda r: np.asarray(r, dtype=float) ** alpha) if alpha else None,
        frozen=args.frozen, n=args.n,
    )
    prof = radial_solve(rp, tol=args.tol, points=args.points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r", "u"])
    for r, u in zip(prof.r, prof.u):
        writer.writerow([_csvf(r), _csvf(u)])
    text = buf.getvalue().rstrip("\n")
    _write(args.out, text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="degsing", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    ap.add_argument("--tol-override", action="append", metavar="KEY=VALUE",
                    help="override a schedule tolerance, e.g. picard_tol=1e-9")
    ap.add_argument("--quiet", action="store_true", help="suppress progress logging")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run regularisation and continuation for a problem")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="-")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("weights", help="A_p / A_s / doubling diagnostics for a weight")
    s.add_argument("--kind", choices=["constant", "power"], default="power")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--value", type=float, default=1.0)
    s.add_argument("--center", help="comma separated coordinates")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--s", type=float)
    s.add_argument("--balls", type=int, default=0, help="extra random balls")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_weights)

    s = sub.add_parser("embed", help="exponent calculus and regularity prediction")
    for name in ("p", "s", "delta", "m"):
        s.add_argument(f"--{name}", type=_number, required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--q", type=_number)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("verify", help="check a solve report against a prediction")
    s.add_argument("--report", required=True)
    s.add_argument("--prediction", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("oracle", help="radial reference profile as CSV (r, u)")
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--R", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.0, help="weight r^alpha")
    s.add_argument("--n", type=float, help="solve the regularised problem at level n")
    s.add_argument("--frozen", action="store_true", help="right-hand side f without u^-delta")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--points", type=int, default=2001)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(dumps({"error": str(exc), "field": exc.field, "exit": EXIT_INPUT}) + "\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
