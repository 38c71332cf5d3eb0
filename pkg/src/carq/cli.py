"""Command-line front end (``carq``).

Subcommands
-----------
estimate     QTE/ATE estimates, standard errors and Wald tests from a ``y,a,s`` CSV
assign       treatment assignment for a ``s`` CSV under a randomization rule
simulate     rejection-rate tables from a JSON or YAML experiment config
true-values  Monte Carlo true parameters of the simulation designs

Exit codes: 0 success, 2 usage/configuration/input problems, 3 numerical
failure (degenerate propensity or density, degenerate bootstrap).
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import operator
import sys
from statistics import NormalDist
from typing import List, Optional

import numpy as np

from . import __version__
from ._streams import substream
from .assign import SCHEMES, SchemeSpec, assign, gamma_of
from .bootstrap import bootstrap, se_from_draws, wald
from .core import CarqError, ConfigurationError, DomainError, EstimationError, Sample, strata_stats
from .dgp import DgpSpec, true_value
from .estimate import ate, imbalance_diagnostic, qte
from .montecarlo import METHODS, TABLE1_METHODS, McConfig, run_table
from .variance import se_adjusted, se_naive

log = logging.getLogger("carq")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

SE_KINDS = ("naive", "adj", "weighted-boot", "ca-boot")
_ATE_NAME = {"sqr": "simple", "ipw": "ipw", "sfe": "sfe"}
_OPS = {"==": operator.eq, "!=": operator.ne, "<=": operator.le, ">=": operator.ge,
        "<": operator.lt, ">": operator.gt}


class UsageError(Exception):
    """Bad flags or input files (exit code 2)."""


# ---------------------------------------------------------------- helpers

def _read_csv(path: str, required: List[str]) -> dict:
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot open {path}: {exc.strerror}")
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UsageError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise UsageError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise UsageError(f"{path}:{lineno}: wrong number of fields")
            for h in header:
                cols[h].append(row[h].strip())
    if not cols[required[0]]:
        raise UsageError(f"{path}: no data rows")
    return cols


def _numeric(path, name, values, kind=float):
    try:
        out = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        raise UsageError(f"{path}: column {name} has a non-numeric value")
    if not np.all(np.isfinite(out)):
        raise UsageError(f"{path}: column {name} has non-finite values")
    if kind is int:
        if np.any(out != np.round(out)):
            raise UsageError(f"{path}: column {name} must hold integers")
        return out.astype(np.int64)
    return out


def _parse_filter(text: str):
    for op in ("==", "!=", "<=", ">=", "<", ">"):
        if op in text:
            col, val = text.split(op, 1)
            col, val = col.strip(), val.strip()
            if col and val:
                return col, op, val
    raise UsageError(f"cannot parse filter {text!r}; expected 'column op value'")


def _apply_filters(cols: dict, filters, path) -> np.ndarray:
    n = len(next(iter(cols.values())))
    keep = np.ones(n, dtype=bool)
    for text in filters or ():
        col, op, val = _parse_filter(text)
        if col not in cols:
            raise UsageError(f"filter column {col!r} not in {path}")
        try:
            ref = float(val)
            x = _numeric(path, col, cols[col])
        except (ValueError, UsageError):
            ref, x = val, np.array(cols[col], dtype=object)
            if op not in ("==", "!="):
                raise UsageError(f"filter {text!r}: ordering needs numeric values")
        keep &= np.array([_OPS[op](v, ref) for v in x], dtype=bool)
    return keep


def _scheme(kind, pi, lam) -> Optional[SchemeSpec]:
    if kind is None:
        return None
    try:
        return SchemeSpec(kind, pi=pi, lam=lam)
    except CarqError as exc:
        raise UsageError(str(exc))


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write(path, text: str):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def _num(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- estimate

def cmd_estimate(args) -> int:
    cols = _read_csv(args.data, ["y", "a", "s"])
    keep = _apply_filters(cols, args.subsample_filter, args.data)
    y = _numeric(args.data, "y", cols["y"])[keep]
    a = _numeric(args.data, "a", cols["a"], int)[keep]
    s = _numeric(args.data, "s", cols["s"], int)[keep]
    if y.size == 0:
        raise UsageError("the subsample filter removed every row")
    if np.any((a != 0) & (a != 1)):
        raise UsageError("column a must be binary (0/1)")
    try:
        sample = Sample(y, a, s)
    except CarqError as exc:
        raise UsageError(str(exc))

    methods = list(dict.fromkeys(args.method))
    ses = list(dict.fromkeys(args.se))
    scheme = _scheme(args.scheme, args.pi, args.lam)
    if ("adj" in ses or "ca-boot" in ses) and scheme is None:
        raise UsageError("--se adj and --se ca-boot need --scheme (the assignment rule)")
    if scheme is not None and scheme.pi != args.pi:
        raise UsageError("--pi disagrees with the scheme's target")
    if not (0.0 < args.pi < 1.0):
        raise UsageError("--pi must lie in (0, 1)")

    targets = [("qte", t) for t in args.tau] + [("contrast", tuple(c)) for c in args.contrast or ()]
    if args.ate:
        targets.append(("ate", None))

    points = {}
    for kind, t in targets:
        for m in methods:
            if kind == "qte":
                points[(kind, m, t)] = qte(sample, t, m).value
            elif kind == "contrast":
                points[(kind, m, t)] = qte(sample, t[0], m).value - qte(sample, t[1], m).value
            else:
                points[(kind, m, t)] = ate(sample, _ATE_NAME[m])
    diag = imbalance_diagnostic(sample, args.pi)

    lo_q, hi_q = args.se_quantiles
    results, skipped = [], []
    boot = {}
    for se_kind, bmethod in (("weighted-boot", "weighted"), ("ca-boot", "ca")):
        if se_kind not in ses:
            continue
        kw = dict(B=args.boot_b, seed=args.seed, scheme=scheme)
        q_taus = [t for k, t in targets if k == "qte"]
        c_taus = [t for k, t in targets if k == "contrast"]
        res = {}
        if q_taus or c_taus:
            res.update(bootstrap(sample, bmethod, methods, taus=q_taus, contrasts=c_taus, **kw))
        if args.ate:
            for key, d in bootstrap(sample, bmethod, [_ATE_NAME[m] for m in methods],
                                    ate=True, **kw).items():
                res[key] = d
        boot[se_kind] = res

    for kind, t in targets:
        for m in methods:
            est = points[(kind, m, t)]
            for se_kind in ses:
                if se_kind in ("naive", "adj"):
                    if kind != "qte" or m != "sqr":
                        skipped.append({"target": kind, "tau": _tau_json(t), "method": m,
                                        "se_method": se_kind,
                                        "reason": "analytic SE is available for sqr QTEs only"})
                        continue
                    if se_kind == "naive":
                        se = se_naive(sample, t, args.pi, args.bandwidth_scale).se
                    else:
                        se = se_adjusted(sample, t, args.pi, gamma_of(scheme),
                                         args.bandwidth_scale).se
                else:
                    key = (kind, _ATE_NAME[m] if kind == "ate" else m, t)
                    se = se_from_draws(boot[se_kind][key], lo_q, hi_q)
                w = wald(est, se, args.null, args.level)
                results.append({
                    "target": kind, "tau": _tau_json(t), "method": m, "se_method": se_kind,
                    "estimate": est, "se": se, "null": args.null, "t": w.t,
                    "critical_value": w.critical_value, "reject": bool(w.reject),
                })

    stats = strata_stats(sample, args.pi)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "input": {"n": sample.n, "n_treated": int(sample.a.sum()),
                  "subsample_filter": list(args.subsample_filter or [])},
        "settings": {"pi": args.pi, "level": args.level, "null": args.null,
                     "boot_b": args.boot_b, "seed": args.seed,
                     "se_quantiles": [lo_q, hi_q], "bandwidth_scale": args.bandwidth_scale,
                     "scheme": scheme.describe() if scheme else None},
        "strata": [{"s": lab, "n": int(stats.n_s[lab]), "n_treated": int(stats.n1_s[lab]),
                    "pi_hat": stats.pi_hat[lab]} for lab in stats.labels],
        "imbalance_diagnostic": diag,
        "results": results,
        "skipped": skipped,
    }
    _write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"imbalance diagnostic: {diag:.3f}", file=sys.stderr)

    if args.band:
        if len(methods) != 1 or len(ses) != 1:
            raise UsageError("--band needs exactly one --method and one --se")
        z = NormalDist().inv_cdf(1.0 - args.level / 2.0)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["tau", "estimate", "se", "lo", "hi"])
        for r in results:
            if r["target"] == "qte":
                wr.writerow([_num(r["tau"]), _num(r["estimate"]), _num(r["se"]),
                             _num(r["estimate"] - z * r["se"]), _num(r["estimate"] + z * r["se"])])
        _write(args.band, buf.getvalue())
    return EXIT_OK


def _tau_json(t):
    if t is None:
        return None
    return list(t) if isinstance(t, tuple) else t


# ---------------------------------------------------------------- assign

def cmd_assign(args) -> int:
    cols = _read_csv(args.strata, ["s"])
    s = _numeric(args.strata, "s", cols["s"], int)
    scheme = _scheme(args.scheme, args.pi, args.lam)
    a = assign(scheme, s, substream(args.seed, 0))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["s", "a"])
    wr.writerows(zip(s.tolist(), a.tolist()))
    _write(args.out, buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------- simulate

_NUM = {"type": "number"}
_POSINT = {"type": "integer", "minimum": 1}
_SCHEME_OBJ = {
    "type": "object",
    "properties": {"kind": {"enum": list(SCHEMES)}, "pi": _NUM, "lambda": _NUM},
    "required": ["kind"],
    "additionalProperties": False,
}
_TARGET = {"oneOf": [
    {"type": "number"},
    {"const": "ate"},
    {"type": "object",
     "properties": {"contrast": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
     "required": ["contrast"], "additionalProperties": False},
]}


def _one_or_many(schema):
    return {"oneOf": [schema, {"type": "array", "items": schema, "minItems": 1}]}


CELL_SCHEMA = {
    "type": "object",
    "properties": {
        "dgp": _one_or_many({"enum": [1, 2, 3, 4]}),
        "scheme": _one_or_many({"oneOf": [{"enum": list(SCHEMES)}, _SCHEME_OBJ]}),
        "n": _one_or_many(_POSINT),
        "tau": {"oneOf": [_TARGET, {"type": "array", "items": _TARGET, "minItems": 1}]},
        "hypothesis": _one_or_many({"enum": ["H0", "H1"]}),
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
        "mu_alt": _NUM,
        "true_value": _NUM,
        "gamma_coef": _NUM,
        "sigma": _NUM,
        "reps": _POSINT,
        "boot_b": _POSINT,
    },
    "required": ["dgp", "scheme", "n"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "reps": _POSINT,
        "boot_b": _POSINT,
        "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "se_quantiles": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "bandwidth_scale": {"type": "number", "exclusiveMinimum": 0},
        "oracle_n": _POSINT,
        "oracle_reps": _POSINT,
        "percent": {"type": "boolean"},
        "output": {"type": "string"},
        "cells": {"type": "array", "items": CELL_SCHEMA, "minItems": 1},
    },
    "required": ["cells"],
    "additionalProperties": False,
}


def load_config(path: str) -> dict:
    """Read and validate an experiment config (JSON, or YAML by extension)."""
    import jsonschema

    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot open {path}: {exc.strerror}")
    try:
        if path.endswith((".yaml", ".yml")):
            import yaml
            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except Exception as exc:  # parser-specific exception types
        raise UsageError(f"{path}: cannot parse: {exc}")
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: invalid config at {where}: {exc.message}")
    return doc


def _listify(v):
    return v if isinstance(v, list) else [v]


def build_configs(doc: dict, overrides: Optional[dict] = None) -> List[McConfig]:
    """Expand a validated config document into one :class:`McConfig` per cell.

    List-valued ``dgp``, ``scheme``, ``n``, ``tau`` and ``hypothesis`` entries
    expand to their Cartesian product. ``overrides`` (from flags) replace
    top-level and per-cell ``reps``, ``boot_b`` and ``seed``.
    """
    over = {k: v for k, v in (overrides or {}).items() if v is not None}
    configs = []
    for cell in doc["cells"]:
        grid = itertools.product(_listify(cell["dgp"]), _listify(cell["scheme"]),
                                 _listify(cell["n"]), _listify(cell.get("tau", 0.5)),
                                 _listify(cell.get("hypothesis", "H0")))
        for dgp, sch, n, tau, hyp in grid:
            if isinstance(sch, str):
                sch = {"kind": sch}
            target = tuple(tau["contrast"]) if isinstance(tau, dict) else tau
            try:
                scheme = SchemeSpec(sch["kind"], pi=sch.get("pi", 0.5),
                                    lam=sch.get("lambda", 0.75))
                cfg = McConfig(
                    dgp=DgpSpec(dgp, 0.0, cell.get("gamma_coef", 4.0), cell.get("sigma", 2.0)),
                    scheme=scheme, n=n, target=target,
                    methods=tuple(cell.get("methods", TABLE1_METHODS)),
                    reps=over.get("reps", cell.get("reps", doc.get("reps", 1000))),
                    boot_b=over.get("boot_b", cell.get("boot_b", doc.get("boot_b", 1000))),
                    level=doc.get("level", 0.05), hypothesis=hyp, mu_alt=cell.get("mu_alt"),
                    seed=over.get("seed", doc.get("seed", 0)),
                    true_value=cell.get("true_value"),
                    se_quantiles=tuple(doc.get("se_quantiles", (0.025, 0.975))),
                    bandwidth_scale=doc.get("bandwidth_scale", 1.0),
                    oracle_n=doc.get("oracle_n", 10 ** 6),
                    oracle_reps=doc.get("oracle_reps", 100),
                )
            except CarqError as exc:
                raise UsageError(f"cell {cell}: {exc}")
            configs.append(cfg)
    return configs


def cmd_simulate(args) -> int:
    doc = load_config(args.config)
    overrides = {"reps": args.reps, "boot_b": args.boot_b, "seed": args.seed}
    configs = build_configs(doc, overrides)
    table = run_table(configs)
    percent = args.percent or doc.get("percent", False)
    out = args.out or doc.get("output")
    if args.wide:
        _write(out, table.to_wide(percent=True) + "\n")
    else:
        _write(out, table.to_csv(percent=percent))
    for key, msg in table.errors.items():
        print(f"cell failed: {key}: {msg}", file=sys.stderr)
    return EXIT_NUMERIC if table.errors else EXIT_OK


# ---------------------------------------------------------------- true-values

TRUE_VALUE_COLUMNS = ("dgp", "tau", "mu", "estimand", "value", "mc_se", "oracle_n",
                      "oracle_reps", "seed")


def cmd_true_values(args) -> int:
    rows = []
    targets = [("qte", t, _num(t)) for t in args.tau or ()]
    targets += [("contrast", tuple(c), f"{_num(c[0])}-{_num(c[1])}") for c in args.contrast or ()]
    if args.ate:
        targets.append(("ate", None, ""))
    if not targets:
        raise UsageError("give at least one --tau, --contrast or --ate")
    for dgp in args.dgp:
        for mu in args.mu:
            try:
                spec = DgpSpec(dgp, mu=mu)
            except CarqError as exc:
                raise UsageError(str(exc))
            for est, t, label in targets:
                tv = true_value(spec, t, est, args.oracle_n, args.oracle_reps, args.seed)
                rows.append([dgp, label, _num(mu), est, _num(tv.value), _num(tv.mc_se),
                             args.oracle_n, args.oracle_reps, args.seed])
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRUE_VALUE_COLUMNS)
    wr.writerows(rows)
    _write(args.out, buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _prob(text):
    v = float(text)
    if not (0.0 < v < 1.0):
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return v


def _unit(text):
    v = float(text)
    if not (0.0 <= v <= 1.0):
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carq", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"carq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimates, standard errors and Wald tests")
    e.add_argument("data", help="CSV with columns y,a,s ('-' for stdin)")
    e.add_argument("--tau", type=_prob, nargs="+", default=[0.5])
    e.add_argument("--contrast", type=_prob, nargs=2, action="append", metavar=("TAU1", "TAU2"),
                   help="also report q(TAU1) - q(TAU2); repeatable")
    e.add_argument("--ate", action="store_true", help="also report the average treatment effect")
    e.add_argument("--method", nargs="+", choices=["sqr", "ipw", "sfe"], default=["sqr"])
    e.add_argument("--se", nargs="+", choices=SE_KINDS, default=["weighted-boot"])
    e.add_argument("--scheme", choices=SCHEMES, help="assignment rule used in the experiment")
    e.add_argument("--pi", type=_prob, default=0.5, help="target treated share")
    e.add_argument("--lambda", dest="lam", type=float, default=0.75,
                   help="biased-coin probability (bcd)")
    e.add_argument("--boot-b", type=int, default=1000)
    e.add_argument("--seed", type=_nonneg_int, default=0)
    e.add_argument("--level", type=_prob, default=0.05)
    e.add_argument("--null", type=float, default=0.0, help="null value of the Wald test")
    e.add_argument("--se-quantiles", type=_unit, nargs=2, default=[0.025, 0.975],
                   metavar=("LO", "HI"), help="bootstrap quantile pair for the SE")
    e.add_argument("--bandwidth-scale", type=float, default=1.0)
    e.add_argument("--subsample-filter", action="append", metavar="EXPR",
                   help="row predicate 'column op value' (op in == != < <= > >=); repeatable")
    e.add_argument("--band", metavar="CSV", help="write tau,estimate,se,lo,hi series")
    e.add_argument("--out", help="report path (default stdout)")
    e.set_defaults(func=cmd_estimate)

    a = sub.add_parser("assign", help="assign treatments to a strata CSV")
    a.add_argument("strata", help="CSV with column s ('-' for stdin)")
    a.add_argument("--scheme", choices=SCHEMES, required=True)
    a.add_argument("--pi", type=_unit, default=0.5)
    a.add_argument("--lambda", dest="lam", type=float, default=0.75)
    a.add_argument("--seed", type=_nonneg_int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_assign)

    s = sub.add_parser("simulate", help="run a rejection-rate experiment grid")
    s.add_argument("config", help="JSON or YAML experiment config")
    s.add_argument("--reps", type=int)
    s.add_argument("--boot-b", type=int)
    s.add_argument("--seed", type=_nonneg_int)
    s.add_argument("--percent", action="store_true", help="rates multiplied by 100")
    s.add_argument("--wide", action="store_true", help="one row per cell, methods as columns")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("true-values", help="Monte Carlo true parameters of the designs")
    t.add_argument("--dgp", type=int, nargs="+", choices=[1, 2, 3, 4], required=True)
    t.add_argument("--tau", type=_prob, nargs="+")
    t.add_argument("--contrast", type=_prob, nargs=2, action="append", metavar=("TAU1", "TAU2"))
    t.add_argument("--ate", action="store_true")
    t.add_argument("--mu", type=float, nargs="+", default=[0.0])
    t.add_argument("--oracle-n", type=int, default=10 ** 6)
    t.add_argument("--oracle-reps", type=int, default=100)
    t.add_argument("--seed", type=_nonneg_int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_true_values)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"carq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ConfigurationError) as exc:
        print(f"carq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimationError as exc:
        print(f"carq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
