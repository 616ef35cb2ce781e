"""tevc: parse, analyze, optimize, run and verify single-loop tensor programs.

Exit codes: 0 ok, 1 usage or parse error, 2 analysis failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import ir
from . import tensor as T
from . import tev
from .analysis import analyze_loop
from .codegen import NotFullyAnalyzable, emit_optimized_program
from .interpreter import BindingError, UnboundParameter, run_program
from .verify import verify_program

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ANALYSIS = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    # the subcommand copy must not clobber a value given before the subcommand
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--json", action="store_true", default=d if suppress else False, help="machine-readable output")
    p.add_argument("--seed", type=int, default=d if suppress else 0, help="seed for random inputs")
    p.add_argument("--trials", type=int, default=d if suppress else 200, help="number of random inputs")
    p.add_argument("--trip-count", type=int, default=d, help="override the loop trip count")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tevc", description="Closed-form loop optimization for tensor programs.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("file", help="program source (.tev)")
        _global_flags(p, suppress=True)
        return p

    command("parse", "check a program and print it (or its JSON AST)")
    command("analyze", "print per-variable TeVs and exit values")
    opt = command("optimize", "replace the loop by closed forms")
    opt.add_argument("-o", "--output", help="write the optimized program here")
    run = command("run", "execute a program with the reference interpreter")
    run.add_argument("--inputs", required=True, help="JSON file mapping parameter names to tensors")
    run.add_argument("--record-headers", action="store_true", help="log loop-carried values per iteration")
    command("verify", "compare optimized and original programs on random inputs")
    return parser


def _load(args) -> ir.Program:
    p = ir.parse_program(Path(args.file).read_text())
    if args.trip_count is not None:
        p = p.with_trip_count(args.trip_count)
    return p


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _blocking(args, exc: NotFullyAnalyzable) -> int:
    payload = {"error": exc.code, "blocking": exc.blocking}
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"error: {exc.code}", file=sys.stderr)
        for v, why in exc.blocking.items():
            print(f"  {v}: {why}", file=sys.stderr)
    return EXIT_ANALYSIS


def cmd_parse(args) -> int:
    p = _load(args)
    _emit(args, ir.to_json(p), ir.serialize_program(p).rstrip("\n"))
    return EXIT_OK


def cmd_analyze(args) -> int:
    p = _load(args)
    r = analyze_loop(p)
    if args.json:
        print(json.dumps(r.to_json(), indent=2))
    else:
        print(f"trip count: {r.trip_count}")
        for v, t in r.per_variable.items():
            tag = " (carried)" if v in r.carried else ""
            print(f"{v}{tag} = {tev.render(t)}")
        for v, t in r.exit_values.items():
            print(f"exit {v} = {ir.format_expr(t.expr)}")
        for v, why in {**r.failures, **r.exit_failures}.items():
            print(f"unanalyzable {v}: {why}")
    blocked = any(v not in r.exit_values for v in r.carried)
    return EXIT_ANALYSIS if blocked else EXIT_OK


def cmd_optimize(args) -> int:
    p = _load(args)
    try:
        out = emit_optimized_program(p)
    except NotFullyAnalyzable as exc:
        return _blocking(args, exc)
    text = ir.serialize_program(out)
    if args.output:
        Path(args.output).write_text(text)
        if args.json:
            print(json.dumps(ir.to_json(out), indent=2))
    else:
        _emit(args, ir.to_json(out), text.rstrip("\n"))
    return EXIT_OK


def cmd_run(args) -> int:
    p = _load(args)
    env = T.load_bindings(json.loads(Path(args.inputs).read_text()))
    res = run_program(p, env, record_headers=args.record_headers)
    print(json.dumps(res.to_json(), indent=2 if args.json else None))
    return EXIT_OK


def cmd_verify(args) -> int:
    p = ir.parse_program(Path(args.file).read_text())
    try:
        report = verify_program(p, trials=args.trials, seed=args.seed, trip_count=args.trip_count)
    except NotFullyAnalyzable as exc:
        return _blocking(args, exc)
    if args.json:
        print(json.dumps(report.to_json(), indent=2))
    else:
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{status}: {report.compared} trials (seed {report.seed}, {report.input_mode} inputs, "
            f"trip count {report.trip_count}, oracle at {report.oracle_trip_count}); "
            f"max abs deviation {report.max_abs_deviation:.3g}, max rel deviation {report.max_rel_deviation:.3g}; "
            f"statements {report.original_statements} -> {report.optimized_statements}"
        )
        for w in report.warnings:
            print(f"warning: {w}")
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS = {
    "parse": cmd_parse,
    "analyze": cmd_analyze,
    "optimize": cmd_optimize,
    "run": cmd_run,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ir.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
    except ir.ValidationError as exc:
        print(f"invalid program: {exc}", file=sys.stderr)
    except (OSError, json.JSONDecodeError, UnboundParameter, BindingError, T.TensorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
