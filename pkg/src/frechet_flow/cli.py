"""Command line entry point: ``frechet-flow {check, leaf, flow, fixtures, report}``.

Exit codes: 0 when every verification passed, 1 when one failed (the report
is still written), 2 for unusable input or usage errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algebroid as alg
from . import fixtures, leaf, ode, sampling
from .errors import FrechetFlowError, SchemaError

SEED_ENV = "FRECHET_FLOW_SEED"
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

DEFAULT_TOLERANCES = {
    "antisymmetry": alg.ANTISYMMETRY_TOL,
    "jacobi": alg.JACOBI_TOL,
    "leibniz": alg.LEIBNIZ_TOL,
    "psbla": alg.PSBLA_TOL,
    "anchor_morphism": alg.MORPHISM_TOL,
    "involutivity": 1e-9,
    "tangency": leaf.TANGENCY_TOL,
    "chart_coherence": leaf.CHART_COHERENCE_TOL,
    "fd_oracle": leaf.FD_ORACLE_TOL,
    "flow_coherence": ode.STATE_COHERENCE_TOL,
}


@dataclass
class RunConfig:
    command: str
    input: str = None
    seed: int = sampling.DEFAULT_SEED
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_format: str = "json"
    options: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


# -- input ---------------------------------------------------------------------------

def _canonical(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def load_input(spec):
    """``(kind, object, document)`` for a fixture name or a JSON file path."""
    if spec in fixtures.REGISTRY:
        entry = fixtures.REGISTRY[spec]
        return entry.kind, entry.build(), fixtures.export(spec)
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"{spec}: no such file or fixture")
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", f"{spec}:{exc.lineno}:{exc.colno}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object", spec)
    if "field" in doc:
        return "field", ode.field_from_json(doc, spec), doc
    if "anchor" in doc:
        return "algebroid", alg.algebroid_from_json(doc, spec), doc
    raise SchemaError("document has neither 'anchor' nor 'field'", spec)


def _expectations(doc):
    return (doc.get("metadata") or {}).get("expect", {})


def _header(cfg, doc):
    return {
        "command": cfg.command,
        "input": cfg.input,
        "input_sha256": hashlib.sha256(_canonical(doc).encode()).hexdigest(),
        "seed": cfg.seed,
        "tolerances": cfg.tolerances,
    }


# -- commands ------------------------------------------------------------------------

def run_check(cfg, T, doc):
    tol = cfg.tolerances
    expect = _expectations(doc)
    C = cfg.options.get("C", expect.get("C"))
    samples = cfg.options.get("samples", alg.DEFAULT_POINTS)
    star = alg.check_star_assumptions(T, C, samples, cfg.seed)
    report = {"star": star.as_dict()}
    ok = star.passes
    if T.depth > 0:
        ps = alg.check_psbla(T, samples, seed=cfg.seed)
        report["psbla"] = ps.as_dict()
        ok &= ps.passes(tol["psbla"])
    rng = np.random.default_rng(cfg.seed)
    axioms = []
    for n, lv in enumerate(T.levels):
        pts = lv.sample(16, cfg.seed)
        entry = {"level": n, "involutivity_defect": alg.involutivity_defect(lv, pts)[0]}
        if lv.has_bracket:
            a, b, c = alg.random_sections(lv, 3, rng)
            f = alg.random_sections(lv, 1, rng)[0].map_coeffs(lambda v: v[0])
            entry["antisymmetry"] = alg.check_antisymmetry(lv, a, b, pts)
            entry["jacobi"] = alg.check_jacobi(lv, a, b, c, pts)
            entry["leibniz"] = alg.check_leibniz(lv, a, b, f, pts)
            entry["anchor_morphism"] = alg.check_anchor_morphism(lv, a, b, pts)
            ok &= entry["antisymmetry"] <= tol["antisymmetry"]
            ok &= entry["jacobi"] <= tol["jacobi"]
            ok &= entry["leibniz"] <= tol["leibniz"]
            ok &= entry["anchor_morphism"] <= tol["anchor_morphism"]
        axioms.append(entry)
    report["levels"] = axioms
    inv = max(e["involutivity_defect"] for e in axioms)
    report["bracket_defect"] = {"max": inv, "involutive": inv <= tol["involutivity"]}
    if cfg.options.get("expect_involutive"):
        ok &= inv <= tol["involutivity"]
    report["passed"] = bool(ok)
    return report, bool(ok)


def _point(T, spec):
    if spec is None:
        return None
    top = np.asarray(json.loads(spec) if isinstance(spec, str) else spec, dtype=float)
    return T.base_tower.thread_from_top(top)


def run_leaf(cfg, T, doc):
    tol = cfg.tolerances
    eta = cfg.options.get("eta", 1.0)
    samples = cfg.options.get("samples", 64)
    chart, probe = leaf.certify_chart(T, _point(T, cfg.options.get("point")), eta, samples, cfg.seed)
    U = chart.sample_params(samples, cfg.seed)
    diag = leaf.leaf_diagnostics(chart, U, cfg.seed)
    report = {
        "constants": chart.diagnostics(),
        "injectivity": chart.injectivity,
        "diagnostics": diag,
    }
    ok = probe.passes
    ok &= diag["chart_coherence_defect"] <= tol["chart_coherence"]
    ok &= diag["tangency_residual"] <= tol["tangency"]
    ok &= diag["fd_relative_error"] <= tol["fd_oracle"]
    ok &= diag["S_bound_ratio"] <= 1.0 and diag["G_bound_ratio"] <= 1.0
    report["passed"] = bool(ok)
    return report, bool(ok), leaf.samples_csv(chart, U)


def run_flow(cfg, X, doc):
    opts = cfg.options
    x0 = doc.get("x0")
    if opts.get("x0") is not None:
        x0 = json.loads(opts["x0"])
    if x0 is None:
        x0 = X.domain.center
    elif isinstance(x0[0], list):
        x0 = ode.Thread(tuple(np.asarray(c, dtype=float) for c in x0))
    else:
        x0 = X.tower.thread_from_top(np.asarray(x0, dtype=float))
    cert = ode.flow_certificate(X, x0, seed=cfg.seed)
    t = opts.get("t")
    t = cert.alpha if t is None else float(t)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = ode.integrate(X, x0, (0.0, t), opts.get("method", "rk4"), opts.get("alpha_override"), cfg.seed, cert)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    defect = result.certificate["coherence_defect"]
    ok = defect <= cfg.tolerances["flow_coherence"]
    report = {
        "certificate": result.certificate,
        "final": result.final.tolist(),
        "warnings": [str(w.message) for w in caught],
        "passed": bool(ok),
    }
    return report, bool(ok), result.to_csv()


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(text, out, name):
    if out is None:
        sys.stdout.write(text)
        return
    out = Path(out)
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def run(cfg):
    """Execute one command; returns the exit code."""
    cmd = cfg.command
    if cmd == "fixtures":
        action = cfg.options.get("action", "list")
        if action == "list":
            lines = [f"{n}\t{e.kind}\t{e.description}" for n, e in sorted(fixtures.REGISTRY.items())]
            _emit("\n".join(lines) + "\n", cfg.options.get("out"), "fixtures.txt")
            return EXIT_OK
        name = cfg.options.get("name")
        if name not in fixtures.REGISTRY:
            raise UsageError(f"unknown fixture {name!r}")
        _emit(_dump(fixtures.export(name)), cfg.options.get("out"), f"{name}.json")
        return EXIT_OK
    if cmd == "report":
        return run_report(cfg)

    kind, obj, doc = load_input(cfg.input)
    header = _header(cfg, doc)
    out = cfg.options.get("out")
    if cmd == "check":
        if kind != "algebroid":
            raise UsageError("check needs an algebroid tower")
        body, ok = run_check(cfg, obj, doc)
        _emit(_dump({**header, **body}), out, "check.json")
    elif cmd == "leaf":
        if kind != "algebroid":
            raise UsageError("leaf needs an algebroid tower")
        body, ok, table = run_leaf(cfg, obj, doc)
        if cfg.output_format == "csv":
            _emit(table, out, "leaf.csv")
        else:
            _emit(_dump({**header, **body}), out, "leaf.json")
            if out is not None and not Path(out).suffix:
                (Path(out) / "leaf.csv").write_text(table)
    elif cmd == "flow":
        if kind != "field":
            raise UsageError("flow needs a graded field document")
        body, ok, table = run_flow(cfg, obj, doc)
        if cfg.output_format == "csv":
            _emit(table, out, "flow.csv")
        else:
            _emit(_dump({**header, **body}), out, "flow.json")
            if out is not None and not Path(out).suffix:
                (Path(out) / "flow.csv").write_text(table)
    else:
        raise UsageError(f"unknown command {cmd!r}")
    return EXIT_OK if ok else EXIT_FAILED


def run_report(cfg):
    """Run every shipped fixture through its commands and compare with the recorded expectations."""
    out = Path(cfg.options.get("dir") or cfg.input)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, entry in sorted(fixtures.REGISTRY.items()):
        sub = RunConfig("check", name, cfg.seed, dict(cfg.tolerances), "json", {})
        _, obj, doc = load_input(name)
        header = _header(sub, doc)
        if entry.kind == "field":
            sub.command = "flow"
            body, ok, table = run_flow(sub, obj, doc)
            (out / f"{name}.flow.json").write_text(_dump({**header, "command": "flow", **body}))
            (out / f"{name}.flow.csv").write_text(table)
            summary[name] = {"flow": ok, "expected": True, "matches": ok}
            continue
        expected = bool(entry.expect.get("involutive", True) and entry.expect.get("split", True))
        sub.options = {"expect_involutive": True}
        check, ok_check = run_check(sub, obj, doc)
        (out / f"{name}.check.json").write_text(_dump({**header, **check}))
        sub.command = "leaf"
        sub.options = {"samples": 32}
        body, ok_leaf, table = run_leaf(sub, obj, doc)
        (out / f"{name}.leaf.json").write_text(_dump({**header, "command": "leaf", **body}))
        (out / f"{name}.leaf.csv").write_text(table)
        summary[name] = {
            "check": ok_check,
            "leaf": ok_leaf,
            "expected": expected,
            "matches": ok_check == expected and ok_leaf == expected,
        }
    all_ok = all(r["matches"] for r in summary.values())
    (out / "summary.json").write_text(_dump({"seed": cfg.seed, "tolerances": cfg.tolerances, "fixtures": summary, "passed": all_ok}))
    return EXIT_OK if all_ok else EXIT_FAILED


# -- argument parsing ---------------------------------------------------------------------

def _parse_tol(items):
    tol = dict(DEFAULT_TOLERANCES)
    for item in items or []:
        key, _, value = item.partition("=")
        if key not in tol:
            raise UsageError(f"unknown tolerance {key!r}; known: {', '.join(sorted(tol))}")
        tol[key] = float(value)
    return tol


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"sampling seed (the env var {SEED_ENV} overrides it)")
    common.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", default=None, help="output file or directory (default: stdout)")
    p = argparse.ArgumentParser(prog="frechet-flow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="verify algebroid axioms, the uniform anchor bound and involutivity")
    c.add_argument("input")
    c.add_argument("--C", type=float, default=None, help="uniform anchor bound to certify")
    c.add_argument("--samples", type=int, default=alg.DEFAULT_POINTS)
    c.add_argument("--expect-involutive", action="store_true")

    lf = sub.add_parser("leaf", parents=[common], help="build and diagnose a leaf chart")
    lf.add_argument("input")
    lf.add_argument("--point", default=None, help="top-level base point as a JSON list")
    lf.add_argument("--eta", type=float, default=1.0)
    lf.add_argument("--samples", type=int, default=64)

    fl = sub.add_parser("flow", parents=[common], help="integrate a graded affine field")
    fl.add_argument("input")
    fl.add_argument("--t", type=float, default=None, help="final time (default: certified alpha)")
    fl.add_argument("--method", choices=("rk4", "picard"), default="rk4")
    fl.add_argument("--alpha-override", type=float, default=None)
    fl.add_argument("--x0", default=None, help="initial point: top-level JSON list")

    fx = sub.add_parser("fixtures", parents=[common], help="list or export shipped fixtures")
    fx.add_argument("action", choices=("list", "export"))
    fx.add_argument("name", nargs="?")

    rp = sub.add_parser("report", parents=[common], help="run every fixture and write reports into a directory")
    rp.add_argument("dir")
    return p


def config_from_args(args):
    seed = sampling.DEFAULT_SEED if args.seed is None else args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        # the environment overrides whatever the command line configured
        try:
            seed = int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "seed", "tol", "format", "input")}
    if args.command == "check":
        opts["C"] = args.C
        if args.C is None:
            opts.pop("C")
    return RunConfig(args.command, getattr(args, "input", None), seed, _parse_tol(args.tol), args.format, opts)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = config_from_args(args)
        if cfg.command == "report":
            cfg.input = args.dir
        return run(cfg)
    except (UsageError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FrechetFlowError as exc:
        print(f"verification error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

