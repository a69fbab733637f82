"""Command-line entry point: ``fairsampler {audit,cluster,mitigate,report,generate}``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .errors import InputError
from .pipeline import RunConfig, render_run, run_audit, run_cluster, run_mitigate
from .synthetic import generate, preset

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _cluster_k(text: str):
    if text in ("auto", "off"):
        return text
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'auto' or 'off', got {text!r}")
    if k < 2:
        raise argparse.ArgumentTypeError("cluster k must be >= 2")
    return k


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairsampler", description="Fairness audit and oversampling sweeps.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="RunConfig JSON; flags given explicitly override it")
        p.add_argument("--records", help="records file (JSONL or CSV)")
        p.add_argument("--schema", help="attribute schema JSON")
        p.add_argument("--format", dest="records_format", choices=("jsonl", "csv"))
        p.add_argument("--preset", help="synthetic preset instead of input files")
        p.add_argument("--n-students", type=int)
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out", required=out_required, help="run directory")
        p.add_argument("--threshold", type=float, help="imbalance threshold (share of N)")
        p.add_argument("--folds", type=int)
        p.add_argument("--strategies", help="comma-separated subset of equal,majority,cascade,minor,within")
        p.add_argument("--cluster-k", type=_cluster_k, help="integer k, 'auto' or 'off'")
        p.add_argument("--attributes", help="comma-separated audited attributes")
        p.add_argument("--workers", type=int, default=1, help="parallel configurations (mitigate)")

    for name, text in (("audit", "imbalance audit and baseline fairness report"),
                       ("cluster", "behavioural clustering"),
                       ("mitigate", "full oversampling sweep and selection")):
        common(sub.add_parser(name, help=text))
    rep = sub.add_parser("report", help="render a finished run directory")
    rep.add_argument("--out", required=True, help="run directory")
    gen = sub.add_parser("generate", help="write a synthetic preset cohort")
    gen.add_argument("--preset", required=True)
    gen.add_argument("--seed", type=_u64, default=0)
    gen.add_argument("--n-students", type=int)
    gen.add_argument("--format", dest="records_format", choices=("jsonl", "csv"), default="jsonl")
    gen.add_argument("--out", required=True)
    return parser


def config_from_args(args) -> RunConfig:
    if args.config:
        base = RunConfig.load(args.config).to_json()
    elif args.preset is not None:
        base = RunConfig.for_preset(args.preset).to_json()
    else:
        base = {}
    over = {}
    for key in ("records", "schema", "records_format", "preset", "n_students", "seed",
                "threshold", "folds"):
        value = getattr(args, key, None)
        if value is not None:
            over[key] = value
    # an explicit input source replaces the other kind from --config
    if args.records is not None and args.preset is None:
        over["preset"] = None
    if args.preset is not None and args.records is None:
        over["records"] = None
        over["schema"] = None
    if args.strategies:
        over["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.attributes:
        over["audited_attributes"] = [s.strip() for s in args.attributes.split(",") if s.strip()]
    if args.cluster_k is not None:
        if args.cluster_k in ("auto", "off"):
            over["cluster_mode"], over["cluster_k"] = args.cluster_k, None
        else:
            over["cluster_mode"], over["cluster_k"] = "fixed", args.cluster_k
    merged = {**base, **over}
    if over.get("cluster_mode") == "off":
        merged["behavioral_specs"] = None
    try:
        return RunConfig.from_json(merged)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise UsageError(str(exc)) from exc


def _log(msg):
    print(msg, file=sys.stderr)


def dispatch(args) -> int:
    if args.command == "generate":
        scenario = preset(args.preset).with_(seed=args.seed)
        if args.n_students is not None:
            scenario = scenario.with_(n_students=args.n_students)
        out = generate(scenario).write(args.out, args.records_format)
        print(f"wrote {scenario.n_students} records of preset {args.preset!r} to {out}")
        return EXIT_OK
    if args.command == "report":
        text = render_run(args.out)
        Path(args.out, "report.txt").write_text(text)
        print(text)
        return EXIT_OK
    config = config_from_args(args)
    if args.command == "audit":
        result = run_audit(config, args.out)
        print(json.dumps({k: result[k] for k in ("imbalanced", "biased_attributes")}, indent=2))
        print("candidates:", ", ".join(c["spec"] for c in result["candidates"]) or "none")
    elif args.command == "cluster":
        result = run_cluster(config, args.out)
        if result is None:
            print("clustering is off in this configuration")
        else:
            print(f"k={result['k']} silhouette={result['silhouette']:.3f} sizes={result['sizes']}")
    else:
        sel = run_mitigate(config, args.out, workers=args.workers, log=_log)
        print(f"selected {sel['chosen']}" + (f" ({', '.join(sel['flags'])})" if sel["flags"] else ""))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fairsampler: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return dispatch(args)
    except (InputError, FileNotFoundError) as exc:
        print(f"fairsampler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
