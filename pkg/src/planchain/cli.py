"""Command line entry point: ``planchain run|verify|gen-random``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    MODES,
    ScenarioError,
    emit_report,
    load_scenario,
    random_scenario,
    read_audit_log,
    run_scenario,
    scenario_to_document,
    verify_audit_log,
)

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planchain", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--mode", choices=MODES, help="override the scenario's mode")
    run.add_argument("--seed", type=int, help="override the scenario's seed")
    run.add_argument("--report", choices=("text", "json-lines"), default="text")
    run.add_argument("--audit-log", metavar="PATH", help="write the receipt log as JSON lines")
    run.add_argument(
        "--expect-violation",
        action="store_true",
        help="exit 0 when a violation is detected and 2 when the run is clean",
    )
    run.add_argument("--continue", dest="keep_going", action="store_true", help="keep running after a violation")

    ver = sub.add_parser("verify", help="check an exported audit log")
    ver.add_argument("audit_log")

    gen = sub.add_parser("gen-random", help="print a random honest scenario")
    gen.add_argument("--actions", type=int, required=True)
    gen.add_argument("--agents", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--mode", choices=MODES, default="centralized")
    return p


def _run(args) -> int:
    scenario = load_scenario(args.scenario)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.keep_going:
        changes["abort_on_violation"] = False
    if changes:
        scenario = scenario.with_config(**changes)
    report = run_scenario(scenario)
    sys.stdout.write(emit_report(report, args.report))
    if args.audit_log:
        with open(args.audit_log, "w") as fh:
            for rec in report.receipts:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    clean = report.terminal == "done" and not report.violations
    if args.expect_violation:
        return EXIT_OK if report.violations else EXIT_VIOLATION
    return EXIT_OK if clean else EXIT_VIOLATION


def _verify(args) -> int:
    problems = verify_audit_log(read_audit_log(args.audit_log))
    for p in problems:
        print(p)
    print("audit log ok" if not problems else f"{len(problems)} problem(s)")
    return EXIT_OK if not problems else EXIT_VIOLATION


def _gen(args) -> int:
    if args.actions < 1 or args.agents < 1:
        raise ScenarioError(["--actions and --agents must be at least 1"])
    scenario, _ = random_scenario(args.seed, args.actions, args.agents, mode=args.mode)
    print(json.dumps(scenario_to_document(scenario), indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _run, "verify": _verify, "gen-random": _gen}[args.command]
    try:
        return handler(args)
    except ScenarioError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
