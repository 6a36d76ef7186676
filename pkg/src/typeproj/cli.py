"""Command-line front end.

    typeproj <kind> --config FILE [--set k=v]... [--out PATH] [--threads N] [--seed S]
    typeproj run --config FILE ...        # kind taken from the config
    typeproj validate --config FILE

Exit codes: 0 ok, 1 solver failure, 2 validation error, 3 infeasible,
4 enumeration cap exceeded. Errors go to stderr as one line of JSON.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import bayes, estimators, projections, typespace
from .config import KINDS, apply_overrides, build, parse_config
from .core import total_variation
from .errors import InfeasibleError, ResourceCapError, TypeprojError, ValidationError

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_CAP = 0, 1, 2, 3, 4


def fmt(x) -> str:
    """17 significant digits; round-trips every float64."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    return x


def produced_at():
    """Timestamp from SOURCE_DATE_EPOCH, else None (keeps outputs reproducible)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()


# --------------------------------------------------------------------------
# per-kind runners: each returns ("csv", header, rows, diagnostics) or ("json", obj, diagnostics)


def _pred(cfg, objs):
    return typespace.RegionPredicate(objs["constraints"], cfg.slack)


def run_enumerate(cfg, objs, threads):
    alpha = objs["alphabet"]
    header = [f"count_{i + 1}" for i in range(alpha.m)]
    rows = [list(t.counts) for t in typespace.enumerate_types(alpha, cfg.n)]
    return "csv", header, rows, []


def run_maxprob(cfg, objs, threads):
    q = objs["q"]
    types = typespace.maxprob_types(cfg.n, q, _pred(cfg, objs), threads=threads)
    header = [f"count_{i + 1}" for i in range(q.m)] + ["log_prob"]
    rows = [list(t.counts) + [typespace.log_type_prob(t, q)] for t in types]
    diags = [f"{len(types)} tied maximizers"] if len(types) > 1 else []
    return "csv", header, rows, diags


def _projection_json(res):
    return {"pmf": res.pmf.probs, "multipliers": res.multipliers, "divergence": res.divergence,
            "dual_value": res.dual_value, "iterations": res.iterations, "residual": res.residual,
            "active": list(res.active), "l_value": res.l_value}


def run_project_i(cfg, objs, threads):
    res = projections.i_projection(objs["q"], objs["constraints"])
    return "json", _projection_json(res), list(res.diagnostics)


def run_project_l(cfg, objs, threads):
    res = projections.l_projection(objs["r"], objs["constraints"])
    return "json", _projection_json(res), list(res.diagnostics)


def run_sanov(cfg, objs, threads):
    region = objs["constraints"]
    ref = projections.i_projection(objs["q"], region).divergence
    curve = typespace.sanov_rate_curve(cfg.n_list, objs["q"], _pred(cfg, objs), threads=threads)
    rows = [[p.n, p.log_prob, p.rate, ref, p.rate - ref] for p in curve]
    return "csv", ["n", "log_prob", "rate", "i_projection_rate", "gap"], rows, []


def run_clln(cfg, objs, threads):
    center = objs.get("center")
    diags = []
    if center is None:
        center = projections.i_projection(objs["q"], objs["constraints"]).pmf
        diags.append("center: I-projection of q on the constraints")
    rows = []
    for n in cfg.n_list:
        mass = typespace.clln_ball_mass(n, objs["q"], _pred(cfg, objs), center, cfg.eps,
                                        threads=threads)
        rows.append([n, cfg.eps, mass])
    return "csv", ["n", "eps", "ball_mass"], rows, diags


def run_posterior(cfg, objs, threads):
    t = objs["type"] if "type" in objs else objs["sample"].type()
    rep = bayes.posterior(objs["prior"], t)
    return "json", {"log_posterior": rep.log_posterior, "map_indices": list(rep.map_indices),
                    "mnpl_indices": list(rep.mnpl_indices), "n": rep.n}, []


def run_bst(cfg, objs, threads):
    rows = []
    for n in cfg.n_list:
        res = bayes.bst_rate(objs["prior"], cfg.subset, objs["r"], n, mode=cfg.mode or "exact",
                             seed=cfg.seed, threads=threads)
        rows.append([n, res.empirical_rate, res.theoretical_rate, res.gap])
    return "csv", ["n", "empirical_rate", "theoretical_rate", "gap"], rows, []


def run_blln(cfg, objs, threads):
    rows = []
    for n in cfg.n_list:
        mass = bayes.blln_ball_mass(objs["prior"], objs["r"], n, cfg.eps, objs.get("center"),
                                    mode=cfg.mode or "exact", seed=cfg.seed, threads=threads)
        rows.append([n, cfg.eps, mass])
    return "csv", ["n", "eps", "ball_mass"], rows, []


def _estimate_json(rep, model):
    return {"method": rep.method, "theta_hat": rep.theta_hat, "lambda_hat": rep.lambda_hat,
            "weights": rep.weights, "points": rep.points, "objective": rep.objective,
            "ties": rep.ties, "moment_residual": rep.moment_residual(model),
            "profile": [{"theta": list(t), "objective": v} for t, v in rep.profile]}


def _estimator(fn, data_key):
    def runner(cfg, objs, threads):
        rep = fn(objs[data_key], objs["model"])
        return "json", _estimate_json(rep, objs["model"]), list(rep.diagnostics)
    return runner


RUNNERS = {
    "enumerate": run_enumerate, "maxprob": run_maxprob, "project_i": run_project_i,
    "project_l": run_project_l, "sanov": run_sanov, "clln": run_clln,
    "posterior": run_posterior, "bst": run_bst, "blln": run_blln,
    "estimate_el": _estimator(estimators.el_estimate, "sample"),
    "estimate_emme": _estimator(estimators.emme_estimate, "sample"),
    "estimate_maxmaxent": _estimator(estimators.maxmaxent_estimate, "r"),
    "estimate_lproj": _estimator(estimators.lprojection_estimate, "r"),
}


def render(cfg, result) -> str:
    """Serialize a runner result together with the config echo."""
    echo = cfg.canonical()
    if result[0] == "csv":
        _, header, rows, diags = result
        buf = io.StringIO()
        buf.write(f"# config: {echo}\n")
        buf.write(f"# produced_at: {json.dumps(produced_at())}\n")
        for d in diags:
            buf.write(f"# warning: {d}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
        return buf.getvalue()
    _, obj, diags = result
    envelope = {"config_echo": json.loads(echo), "produced_at": produced_at(),
                "result": _jsonable(obj), "diagnostics": diags}
    return json.dumps(envelope, sort_keys=True, indent=2) + "\n"


def execute(data: dict, threads: int = 1) -> tuple[object, str]:
    cfg = parse_config(data)
    objs = build(cfg)
    result = RUNNERS[cfg.kind](cfg, objs, max(1, threads))
    return cfg, render(cfg, result)


def read_echo(text: str) -> dict:
    """Recover the config echoed in an output file."""
    if text.startswith("# config: "):
        return json.loads(text.splitlines()[0][len("# config: "):])
    return json.loads(text)["config_echo"]


# --------------------------------------------------------------------------


class _Fail(Exception):
    def __init__(self, code, payload):
        self.code, self.payload = code, payload


def _load(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise _Fail(EXIT_INVALID, {"error": "validation", "message": f"cannot read config: {err}"})
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise _Fail(EXIT_INVALID, {"error": "validation", "message": f"malformed JSON: {err.msg}",
                                   "line": err.lineno, "column": err.colno})


def _prepare(args, kind):
    data = _load(args.config)
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    data = apply_overrides(data, overrides)
    if kind is not None:
        if "kind" in data and data["kind"] != kind:
            raise ValidationError(f"config kind {data['kind']!r} does not match subcommand {kind!r}",
                                  field="kind")
        data["kind"] = kind
    return data


def _error_payload(err):
    if isinstance(err, ValidationError):
        return EXIT_INVALID, {"error": "validation", "message": str(err), "field": err.field}
    if isinstance(err, InfeasibleError):
        p = {"error": "infeasible", "message": str(err)}
        if err.certificate is not None:
            p["certificate"] = _jsonable(err.certificate)
        return EXIT_INFEASIBLE, p
    if isinstance(err, ResourceCapError):
        return EXIT_CAP, {"error": "resource_cap", "message": str(err), "count": err.count,
                          "cap": err.cap}
    return EXIT_FAIL, {"error": type(err).__name__, "message": str(err)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="typeproj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + KINDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--out")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int)
    p = sub.add_parser("validate")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = parse_config(_prepare(args, None))
            print(json.dumps({"status": "ok", "kind": cfg.kind}))
            return EXIT_OK
        kind = None if args.command == "run" else args.command
        cfg, text = execute(_prepare(args, kind), threads=args.threads)
        if cfg.out:
            with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except _Fail as fail:
        print(json.dumps(fail.payload), file=sys.stderr)
        return fail.code
    except TypeprojError as err:
        code, payload = _error_payload(err)
        print(json.dumps(payload), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
