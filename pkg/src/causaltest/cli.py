"""Command-line front end.

Exit codes: 0 all tests pass (or a feasible identification), 1 a test
failed, 2 configuration or input error, 3 indeterminate (infeasible or
insufficient data, no failures).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import yaml

from . import __version__
from .dataset import DataError, load_csv, write_csv
from .estimation import EstimationError, parse_term
from .graph import DagError, adjustment_set, parse_dag
from .report import Report, digest, exit_code, format_text
from .scm import ScmError, ScmSpec, builtin_spec, drop_unobserved, generate
from .suite import SuiteError, read_suite
from .testing import CausalTestCase, IVConfig, OLSConfig, Oracle, OracleKind, evaluate, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INDETERMINATE = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _decode(path: str, raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not UTF-8") from None


def _schema_pairs(pairs):
    out = {}
    for item in pairs or ():
        name, sep, kind = item.partition("=")
        if not sep:
            raise ConfigError(f"schema override {item!r} should look like name=kind")
        out[name] = kind
    return out


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def cmd_identify(args) -> int:
    g = parse_dag(_decode(args.dag, _read_bytes(args.dag)))
    result = adjustment_set(g, args.treatment, args.outcome)
    if args.format == "json":
        _print_json({
            "treatment": result.treatment,
            "outcome": result.outcome,
            "adjustment_set": sorted(result.adjustment_set),
            "required_interactions": sorted(list(p) for p in result.required_interactions),
            "feasible": result.feasible,
            "unobserved": sorted(result.unobserved_members),
        })
    else:
        members = ", ".join(
            f"{n} (unobserved)" if n in result.unobserved_members else n
            for n in sorted(result.adjustment_set)
        )
        print(f"{args.treatment} -> {args.outcome}")
        print(f"adjustment set: {{{members}}}")
        pairs = ", ".join(f"{t}*{m}" for m, t in sorted(result.required_interactions))
        print(f"required interactions: {pairs or 'none'}")
        print(f"feasible: {'yes' if result.feasible else 'no'}")
    return EXIT_OK if result.feasible else EXIT_INDETERMINATE


def cmd_test(args) -> int:
    start = time.perf_counter()
    suite = read_suite(args.suite)
    suite_bytes = _read_bytes(args.suite)
    dag_path, data_path = suite.path(suite.dag), suite.path(suite.data)
    dag_bytes, data_bytes = _read_bytes(dag_path), _read_bytes(data_path)
    g = parse_dag(_decode(dag_path, dag_bytes))
    d = load_csv(_decode(data_path, data_bytes), suite.schema)
    outcomes = run_suite(g, d, suite.tests, jobs=args.jobs)
    report = Report(
        tuple(outcomes),
        {
            "suite": {"path": args.suite, "sha256": digest(suite_bytes)},
            "dag": {"path": dag_path, "sha256": digest(dag_bytes)},
            "data": {"path": data_path, "sha256": digest(data_bytes)},
        },
        time.perf_counter() - start,
    )
    sys.stdout.write(report.to_json() if args.format == "json" else format_text(report))
    return exit_code(outcomes)


def _params(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"parameter {item!r} should look like key=value")
        out[key] = yaml.safe_load(value)
    return out


def cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.builtin:
        kwargs = {"n": args.n if args.n is not None else 1000, "seed": seed}
        spec = builtin_spec(args.builtin, **kwargs, **_params(args.param))
    else:
        doc = yaml.safe_load(_decode(args.spec, _read_bytes(args.spec)))
        if not isinstance(doc, dict):
            raise ConfigError("spec document must be a mapping")
        dag = None
        if "dag_path" in doc:
            path = os.path.join(os.path.dirname(os.path.abspath(args.spec)), doc.pop("dag_path"))
            dag = parse_dag(_decode(path, _read_bytes(path)))
        spec = ScmSpec.from_dict(doc, dag)
        spec = spec.replace(
            n=args.n if args.n is not None else spec.n,
            seed=args.seed if args.seed is not None else spec.seed,
        )
    data = generate(spec)
    if args.drop_unobserved:
        data = drop_unobserved(data, spec.dag)
    text = write_csv(data)
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc.strerror}") from None
    if args.format == "json":
        _print_json({"path": args.out, "rows": data.row_count, "columns": data.names, "seed": spec.seed})
    else:
        print(f"wrote {data.row_count} rows x {len(data.names)} columns to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    g = parse_dag(_decode(args.dag, _read_bytes(args.dag)))
    d = load_csv(_decode(args.data, _read_bytes(args.data)), _schema_pairs(args.schema))
    if args.instrument:
        estimator = IVConfig(args.instrument, allow_biased=args.allow_biased)
    else:
        terms = args.terms or ["1", args.treatment]
        estimator = OLSConfig(
            tuple(parse_term(t) for t in terms),
            stratify_by=args.stratify_by,
            stratum=args.stratum,
            treatment_level=args.treatment_level,
            allow_biased=args.allow_biased,
        )
    tc = CausalTestCase("estimate", args.treatment, args.outcome, Oracle(OracleKind.SOME_EFFECT), estimator)
    outcome = evaluate(g, d, tc)
    if args.format == "json":
        out = outcome.to_dict()
        out.pop("verdict")
        out.pop("rationale")
        if outcome.estimate is None:
            out["error"] = outcome.rationale
        _print_json(out)
    elif outcome.estimate is None:
        print(f"{outcome.verdict.value}: {outcome.rationale}")
    else:
        e = outcome.estimate
        print(f"{args.treatment} -> {args.outcome}: {e.point:.6g} [{e.ci_low:.6g}, {e.ci_high:.6g}] ({e.method})")
        print(f"adjustment set: {{{', '.join(outcome.diagnostics.get('adjustment_set', []))}}}")
        for note in outcome.diagnostics.get("notes", []):
            print(f"note: {note}")
    if outcome.estimate is None:
        return EXIT_INDETERMINATE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="causaltest", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.set_defaults(format="text", seed=None, jobs=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", parents=[common], help="print the backdoor adjustment set")
    p.add_argument("dag")
    p.add_argument("treatment")
    p.add_argument("outcome")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("test", parents=[common], help="run a test suite")
    p.add_argument("suite")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("generate", parents=[common], help="write synthetic data from a structural causal model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", metavar="NAME")
    src.add_argument("--spec", metavar="PATH")
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-unobserved", action="store_true")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="override a planted value of a builtin")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", parents=[common], help="estimate one effect without an oracle")
    p.add_argument("--dag", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("treatment")
    p.add_argument("outcome")
    p.add_argument("--terms", nargs="+", metavar="TERM")
    p.add_argument("--stratify-by")
    p.add_argument("--stratum")
    p.add_argument("--treatment-level")
    p.add_argument("--instrument")
    p.add_argument("--schema", action="append", metavar="NAME=KIND")
    p.add_argument("--allow-biased", action="store_true")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DagError, DataError, SuiteError, ScmError, EstimationError, ValueError) as exc:
        print(f"causaltest: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
