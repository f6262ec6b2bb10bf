"""Command-line entry point.

Exit codes: 0 success, 1 failed verification, 2 usage error (bad flags,
missing or invalid input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import analysis, fractional, graph, harness, offline

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise UsageError(f"cannot write {out}: {e.strerror or e}") from None


def _load_graph(args) -> graph.TypeGraph:
    try:
        return graph.load_type_graph(args.graph, args.weights)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.graph}") from None
    except (graph.GraphParseError, graph.GraphValidationError) as e:
        raise UsageError(f"{args.graph}: {e}") from None


def _fractional_text(fm: fractional.FractionalMatching, tg: graph.TypeGraph, fmt: str) -> str:
    if fmt == "json":
        rows = [{"i": i, "j": j, "x": float(fm.dense[i, j])} for i, j in tg.edges]
        return json.dumps({"provenance": fm.provenance, "objective": fm.value,
                           "shape": list(fm.dense.shape), "x": rows}, indent=2) + "\n"
    return fractional.format_fractional(fm, tg)


def cmd_solve_lp(args) -> int:
    tg = _load_graph(args)
    fm = fractional.solve_natural_lp(tg)
    _write(_fractional_text(fm, tg, args.format), args.out)
    print(f"objective {fm.value!r}", file=sys.stderr)
    return EXIT_OK


def cmd_estimate_x(args) -> int:
    tg = _load_graph(args)
    fm = fractional.estimate_fractional_matching_mc(tg, args.samples, args.seed)
    _write(_fractional_text(fm, tg, args.format), args.out)
    print(f"objective {fm.value!r}", file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = harness.load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"no such config file: {args.config}") from None
    except harness.ConfigError as e:
        raise UsageError(str(e)) from None
    if args.trials is not None:
        cfg.trials = args.trials
    if args.seed is not None:
        cfg.seed = args.seed
    fmt = args.format or cfg.format
    out = args.out or cfg.output
    if out is not None and args.out is None:
        out = str(harness._resolve(cfg, out))
    try:
        cfg.__post_init__()
        report = harness.run_experiment(cfg, threads=args.threads)
    except harness.ConfigError as e:
        raise UsageError(str(e)) from None
    except FileNotFoundError as e:
        raise UsageError(f"missing input: {e.filename}") from None
    _write(harness.format_report(report, fmt), out)
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = analysis.verify_all()
    if args.format == "json":
        text = json.dumps([json.loads(r.to_json()) for r in reports], indent=2) + "\n"
    else:
        text = "".join(f"{'PASS' if r.passed else 'FAIL'} {r.check} {json.dumps(r.grid)} "
                       f"max_violation={r.max_violation!r} tolerance={r.tolerance!r}\n"
                       for r in reports)
    _write(text, args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_opt(args) -> int:
    try:
        g = offline.read_realized_graph(args.graph, args.weights)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.graph}") from None
    except (graph.GraphParseError, graph.GraphValidationError) as e:
        raise UsageError(f"{args.graph}: {e}") from None
    m = offline.max_weight_matching(g) if g.weighted else offline.max_cardinality_matching(g)
    if args.format == "json":
        text = json.dumps({"value": m.weight, "size": m.size,
                           "pairs": [list(p) for p in m.pairs]}) + "\n"
    else:
        text = "online,offline\n" + "".join(f"{u},{v}\n" for u, v in m.pairs)
        print(f"value {m.weight!r}", file=sys.stderr)
    _write(text, args.out)
    return EXIT_OK


def _positive(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochmatch",
                                     description="Online and stochastic bipartite matching experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_args(p):
        p.add_argument("graph", help="type graph: .json, or an edge list (duplicating transform)")
        p.add_argument("--weights", action="store_true", help="edge list has a weight column")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", help="output path (default stdout)")

    p = sub.add_parser("solve-lp", help="solve the natural LP by cutting planes")
    graph_args(p)
    p.set_defaults(func=cmd_solve_lp)

    p = sub.add_parser("estimate-x", help="Monte-Carlo fractional matching from hindsight optima")
    graph_args(p)
    p.add_argument("--samples", type=_positive, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate_x)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=_positive)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out")
    p.add_argument("--threads", type=_positive, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run every closed-form and grid check")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("opt", help="offline optimum of a realized graph (online offline [w] per line)")
    graph_args(p)
    p.set_defaults(func=cmd_opt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


cli_main = main


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
