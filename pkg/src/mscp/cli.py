"""Command-line interface: alias analysis and deadlock checking for CI.

Exit codes: 0 success / no deadlock, 1 usage, parse or validation error,
2 deadlock found, 3 analysis ran out of fuel.  ``--format json`` makes
every report machine-readable; setting ``MSCP_COLOR=0`` (or piping)
disables styling.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import engine, sim
from .aliasing import AliasError
from .frontend import DiagnosticsError, ParseError, parse, validate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEADLOCK = 2
EXIT_FUEL = 3


def _style(text: str, code: str) -> str:
    if os.environ.get("MSCP_COLOR") == "0" or not sys.stdout.isatty():
        return text
    return f"\x1b[{code}m{text}\x1b[0m"


def _load(path: str, mode: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        print(f"{path}: {exc.strerror or exc}", file=sys.stderr)
        return None
    try:
        return validate(parse(source, path), mode)
    except ParseError as exc:
        print(exc.diagnostic.render(), file=sys.stderr)
    except DiagnosticsError as exc:
        for d in exc.diagnostics:
            print(d.render(), file=sys.stderr)
    return None


def _cmd_alias(args) -> int:
    program = _load(args.file, "alias")
    if program is None:
        return EXIT_ERROR
    cfg = engine.EngineConfig(mode=args.mode, cut_length=args.cut_length,
                              max_len=args.max_path_len, recursion_fuel=args.fuel)
    try:
        report = engine.analyze(program, cfg)
    except engine.FuelError as exc:
        print(f"{args.file}: E_FUEL {exc}", file=sys.stderr)
        return EXIT_FUEL
    except AliasError as exc:
        print(f"{args.file}: {exc.code} {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.format == "json":
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(_style(f"may-alias relation for {args.file} ({args.mode} mode)", "1"))
        for a, b in report.result.to_json():
            print(f"  {a} ~ {b}")
        print(f"pairs: {len(report.result)}  rewrite steps: {report.rewrite_steps}  "
              f"dropped negative-variable pairs: {report.dropped_negvar_pairs}")
        for construct, base, grown in report.lasso_events:
            print(f"lasso: {construct} folded ({base} -> {grown} pairs)")
    return EXIT_OK


def _print_deadlock(report: sim.DeadlockReport, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
        return
    if report.found:
        witness = ", ".join(str(p) for p in report.witness)
        print(_style(f"deadlock found: processors {{{witness}}}", "1;31"))
        for p, rule in report.trace:
            print(f"  proc {p}: {rule}")
    else:
        note = "state space exhausted" if report.exhausted else "bounds hit, not exhaustive"
        print(_style(f"no deadlock found ({note})", "1;32"))
    print(f"states explored: {report.states}")


def _cmd_deadlock(args) -> int:
    program = _load(args.file, "sim")
    if program is None:
        return EXIT_ERROR
    if args.check == "bfs":
        report = sim.model_check(program, max_states=args.max_states,
                                 max_depth=args.max_depth, unroll=args.loop_unroll)
    else:
        report = sim.random_walk(program, seed=args.seed, max_steps=args.max_depth,
                                 unroll=args.loop_unroll)
    _print_deadlock(report, args.format)
    return EXIT_DEADLOCK if report.found else EXIT_OK


def _cmd_replay(args) -> int:
    program = _load(args.file, "sim")
    if program is None:
        return EXIT_ERROR
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{args.trace}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    trace = [(step["proc"], step["rule"]) for step in data.get("trace", [])]
    unroll = int(data.get("settings", {}).get("unroll", args.loop_unroll))
    try:
        final = sim.replay(program, trace, unroll=unroll)
    except ValueError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    witness = sim.deadlocked(final)
    reported = tuple(data.get("witness", []))
    actual = tuple(sorted(witness)) if witness else ()
    if args.format == "json":
        print(json.dumps({"witness": list(actual),
                          "matches_report": list(actual) == list(reported)},
                         indent=2, sort_keys=True))
    else:
        if witness:
            print(f"replayed state is deadlocked: processors "
                  f"{{{', '.join(str(p) for p in actual)}}}")
        else:
            print("replayed state is not deadlocked")
    if data.get("found") and actual != reported:
        print("replay does not reproduce the reported witness", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscp",
        description="May-alias analysis and deadlock checking for .mscp programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    alias = sub.add_parser("alias", help="compute the may-alias relation of a program")
    alias.add_argument("file")
    alias.add_argument("--mode", choices=("lasso", "cut"), default="lasso")
    alias.add_argument("--cut-length", type=int, default=10)
    alias.add_argument("--max-path-len", type=int, default=10)
    alias.add_argument("--fuel", type=int, default=1000)
    alias.add_argument("--format", choices=("text", "json"), default="text")
    alias.set_defaults(func=_cmd_alias)

    deadlock = sub.add_parser("deadlock", help="search for Coffman deadlocks")
    deadlock.add_argument("file")
    deadlock.add_argument("--check", choices=("bfs", "random"), default="bfs")
    deadlock.add_argument("--max-states", type=int, default=1_000_000)
    deadlock.add_argument("--max-depth", type=int, default=10_000)
    deadlock.add_argument("--seed", type=int, default=0)
    deadlock.add_argument("--loop-unroll", type=int, default=2)
    deadlock.add_argument("--format", choices=("text", "json"), default="text")
    deadlock.set_defaults(func=_cmd_deadlock)

    rep = sub.add_parser("replay", help="re-execute a recorded deadlock trace")
    rep.add_argument("file")
    rep.add_argument("trace", help="JSON report produced by 'deadlock --format json'")
    rep.add_argument("--loop-unroll", type=int, default=2)
    rep.add_argument("--format", choices=("text", "json"), default="text")
    rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
