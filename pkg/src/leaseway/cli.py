"""``leaseway`` command line: simulate, report, validate, media-list.

Exit codes: 0 ok, 1 internal error, 2 input error, 3 no observation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import EventLog, NoObservation, report, run
from .media_sim import builtin_media, media_row
from .scenario import MAX_SEED, SchemaError, load_scenario_file

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_NO_OBSERVATION = 0, 1, 2, 3
SEED_ENV = "LEASEWAY_SEED"


class InputError(Exception):
    pass


def _seed(value: str, source: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError:
        raise InputError(f"{source}: seed must be an integer, got {value!r}") from None
    if not 0 <= seed <= MAX_SEED:
        raise InputError(f"{source}: seed must fit in 64 unsigned bits")
    return seed


def resolve_seed(flag: str | None, scenario_seed: int) -> int:
    """Flag beats environment beats scenario."""
    if flag is not None:
        return _seed(flag, "--seed")
    env = os.environ.get(SEED_ENV)
    if env:
        return _seed(env, SEED_ENV)
    return scenario_seed


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario_file(args.scenario)
    seed = resolve_seed(args.seed, scenario.seed)
    log = run(scenario, seed=seed)
    try:
        log.write(args.log)
    except OSError as exc:
        raise InputError(f"cannot write {args.log}: {exc}") from None
    print(f"{scenario.name}: {len(log)} events, seed {seed} -> {args.log}", file=sys.stderr)
    return EXIT_OK


def _format_table(row: dict) -> str:
    lines = [
        f"observer:       {row['observer']}",
        f"observation:    {row['observation']} (t={row['at']}, contacting {row['rm']})",
        f"design:         {row['design']}",
        f"n_explanations: {row['n_explanations']}",
        f"n_actors:       {row['n_actors']}",
        "explanations:",
    ]
    lines += [f"  {e['actor']:<7} {e['action']}" for e in row["explanations"]]
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    try:
        log = EventLog.read(args.log)
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise InputError(f"cannot read log {args.log}: {exc}") from None
    row = report(log, args.observer, args.at)
    if args.format == "json":
        print(json.dumps(row, ensure_ascii=False, indent=2))
    else:
        print(_format_table(row))
    return EXIT_OK


def cmd_media_list(args: argparse.Namespace) -> int:
    for medium in builtin_media().values():
        print(media_row(medium))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario_file(args.scenario)
    print(f"{scenario.name}: ok", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leaseway", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write its JSONL event log")
    p.add_argument("scenario")
    p.add_argument("--log", required=True, help="output path for the event log")
    p.add_argument("--seed", help=f"overrides ${SEED_ENV} and the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="ambiguity report for an observer's loss of access")
    p.add_argument("--log", required=True)
    p.add_argument("--observer", required=True)
    p.add_argument("--at", type=float, default=None, help="latest observation time (seconds)")
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("media-list", help="print the built-in media and their affordances")
    p.set_defaults(func=cmd_media_list)

    p = sub.add_parser("validate", help="check a scenario file against the schema")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoObservation as exc:
        print(f"no observation: {exc}", file=sys.stderr)
        return EXIT_NO_OBSERVATION
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
