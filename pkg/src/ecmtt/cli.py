"""Command-line front end.

Five subcommands over the library: `check` typechecks a file and prints the
type of its main term, `run` evaluates it, `trace` prints every reduction
step, `repl` starts an interactive session, and `corpus` runs the embedded
example programs against their expectations.

Exit codes are a total function of the outcome: 0 success, 1 type error,
2 parse error, 3 fuel exhausted, 4 I/O error, 5 runtime error.  The
evaluation fuel defaults to one million steps and can be overridden with
`--max-steps` or the ECMTT_MAX_STEPS environment variable (the flag wins).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional, TextIO

from .corpus import (
    CaseResult,
    EvaluatesTo,
    ParseErrorExpected,
    TypeErrorExpected,
    TypeIs,
    run_corpus,
)
from .evaluator import DEFAULT_MAX_STEPS, FuelExhausted, Stuck, Value, evaluate
from .parser import DefTable, ParseError, parse_source, parse_term
from .pretty import pretty, type_text
from .typecheck import TypeCheckError, infer_term

__all__ = ["CliConfig", "build_arg_parser", "main", "main_entry"]

EXIT_OK = 0
EXIT_TYPE_ERROR = 1
EXIT_PARSE_ERROR = 2
EXIT_FUEL = 3
EXIT_IO_ERROR = 4
EXIT_RUNTIME = 5

ENV_MAX_STEPS = "ECMTT_MAX_STEPS"


@dataclass(frozen=True)
class CliConfig:
    command: str
    input_path: Optional[str] = None
    max_steps: int = DEFAULT_MAX_STEPS
    output_format: str = "pretty"


def _resolve_fuel(flag_value: Optional[int]) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_MAX_STEPS)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            pass
    return DEFAULT_MAX_STEPS


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecmtt",
        description="Typechecker and interpreter for a calculus of boxed computations and effect handlers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="typecheck a file and print the type of its main term")
    check.add_argument("file", help="source file to check")

    run = sub.add_parser("run", help="evaluate the main term of a file")
    run.add_argument("file", help="source file to run")
    run.add_argument("--max-steps", type=int, default=None, help="evaluation fuel")
    run.add_argument("--json", action="store_true", help="emit the outcome as JSON")

    trace = sub.add_parser("trace", help="evaluate and print every reduction step")
    trace.add_argument("file", help="source file to trace")
    trace.add_argument("--max-steps", type=int, default=None, help="evaluation fuel")

    sub.add_parser("repl", help="start an interactive session")
    sub.add_parser("corpus", help="run the embedded example corpus")
    return parser


def config_from_args(args: argparse.Namespace) -> CliConfig:
    return CliConfig(
        command=args.command,
        input_path=getattr(args, "file", None),
        max_steps=_resolve_fuel(getattr(args, "max_steps", None)),
        output_format="json" if getattr(args, "json", False) else "pretty",
    )


def _load_main(path: str, err: TextIO):
    """Read and parse a source file, returning its main term or an exit code."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IO_ERROR
    try:
        source = parse_source(text)
    except ParseError as exc:
        print(exc, file=err)
        return EXIT_PARSE_ERROR
    if source.main is None:
        print(f"{path}: parse error: source has no main term", file=err)
        return EXIT_PARSE_ERROR
    return source.main


def cmd_check(path: str, out: TextIO, err: TextIO) -> int:
    main_term = _load_main(path, err)
    if isinstance(main_term, int):
        return main_term
    try:
        ty = infer_term(main_term)
    except TypeCheckError as exc:
        print(exc.render(), file=err)
        return EXIT_TYPE_ERROR
    print(type_text(ty), file=out)
    return EXIT_OK


def _finish_run(final, steps: int, as_json: bool, out: TextIO, err: TextIO) -> int:
    match final:
        case Value(term):
            text = pretty(term)
            if as_json:
                print(json.dumps({"status": "ok", "value": text, "steps": steps}), file=out)
            else:
                print(text, file=out)
            return EXIT_OK
        case FuelExhausted(spent):
            if as_json:
                print(json.dumps({"status": "fuel-exhausted", "steps": spent}), file=out)
            print(f"error: fuel exhausted after {spent} steps", file=err)
            return EXIT_FUEL
        case Stuck(reason):
            if as_json:
                print(json.dumps({"status": "runtime-error", "message": reason}), file=out)
            print(f"runtime error: {reason}", file=err)
            return EXIT_RUNTIME
    print("error: evaluation produced no outcome", file=err)
    return EXIT_RUNTIME


def cmd_run(path: str, max_steps: int, as_json: bool, out: TextIO, err: TextIO) -> int:
    main_term = _load_main(path, err)
    if isinstance(main_term, int):
        return main_term
    try:
        infer_term(main_term)
    except TypeCheckError as exc:
        print(exc.render(), file=err)
        return EXIT_TYPE_ERROR
    trace = evaluate(main_term, max_steps=max_steps)
    return _finish_run(trace.final, trace.step_count, as_json, out, err)


def cmd_trace(path: str, max_steps: int, out: TextIO, err: TextIO) -> int:
    main_term = _load_main(path, err)
    if isinstance(main_term, int):
        return main_term
    try:
        infer_term(main_term)
    except TypeCheckError as exc:
        print(exc.render(), file=err)
        return EXIT_TYPE_ERROR
    trace = evaluate(main_term, max_steps=max_steps, record=True)
    if trace.steps:
        print(pretty(trace.initial), file=out)
        for stepped in trace.steps:
            print(f"  --[{stepped.rule}]--> {pretty(stepped.term)}", file=out)
    if isinstance(trace.final, Value):
        print(pretty(trace.final.term), file=out)
        return EXIT_OK
    return _finish_run(trace.final, trace.step_count, False, out, err)


_REPL_BANNER = "ecmtt repl; :t TERM for a type, def NAME = ... to define, :q to quit"
_PROMPT = "ecmtt> "


def cmd_repl(max_steps: int, stdin: TextIO, out: TextIO, err: TextIO) -> int:
    table = DefTable()
    print(_REPL_BANNER, file=out)
    while True:
        out.write(_PROMPT)
        out.flush()
        line = stdin.readline()
        if not line:
            print(file=out)
            return EXIT_OK
        line = line.strip()
        if not line:
            continue
        if line in (":q", ":quit"):
            return EXIT_OK
        try:
            if line.startswith(":t "):
                term = parse_term(line[len(":t "):], table)
                print(type_text(infer_term(term)), file=out)
            elif line.startswith("def "):
                parse_source(line, table)
            else:
                term = parse_term(line, table)
                infer_term(term)
                trace = evaluate(term, max_steps=max_steps)
                match trace.final:
                    case Value(value_term):
                        print(pretty(value_term), file=out)
                    case FuelExhausted(spent):
                        print(f"error: fuel exhausted after {spent} steps", file=out)
                    case Stuck(reason):
                        print(f"runtime error: {reason}", file=out)
        except ParseError as exc:
            print(exc, file=out)
        except TypeCheckError as exc:
            print(exc.render(), file=out)


def _expectation_text(result: CaseResult) -> str:
    match result.case.expectation:
        case TypeIs(text):
            return f"type {text}"
        case EvaluatesTo(text):
            return f"value {text}"
        case TypeErrorExpected(kind):
            return f"type error: {kind}" if kind else "type error"
        case ParseErrorExpected():
            return "parse error"
    return "?"


def cmd_corpus(out: TextIO) -> int:
    results = run_corpus()
    name_w = max(len(r.case.name) for r in results)
    expect_w = max(len(_expectation_text(r)) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        expect = _expectation_text(r)
        print(f"{status}  {r.case.name:<{name_w}}  {expect:<{expect_w}}  {r.observed}", file=out)
    failed = sum(1 for r in results if not r.passed)
    if failed:
        print(f"{failed} of {len(results)} cases failed", file=out)
        return EXIT_TYPE_ERROR
    print(f"all {len(results)} cases pass", file=out)
    return EXIT_OK


def main(
    argv: Optional[list[str]] = None,
    stdin: Optional[TextIO] = None,
    stdout: Optional[TextIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    args = build_arg_parser().parse_args(argv)
    config = config_from_args(args)
    match config.command:
        case "check":
            assert config.input_path is not None
            return cmd_check(config.input_path, out, err)
        case "run":
            assert config.input_path is not None
            return cmd_run(config.input_path, config.max_steps, config.output_format == "json", out, err)
        case "trace":
            assert config.input_path is not None
            return cmd_trace(config.input_path, config.max_steps, out, err)
        case "repl":
            return cmd_repl(config.max_steps, stdin, out, err)
        case "corpus":
            return cmd_corpus(out)
    raise AssertionError(f"unknown command {config.command!r}")


def main_entry() -> None:
    sys.exit(main())
