"""Command-line surface: plan, decide, simulate, and escalate audits.

Every subcommand reads files named on the command line, writes one JSON
report to stdout, and signals its fate through the exit status: 0 for a
completed computation (whatever the decision), 2 for input problems, 3
for a broken internal contract, 4 for an unreachable planning target.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys

from .comparison import (
    DEFAULT_GAMMA,
    minimal_clean_sample,
    read_discrepancy_csv,
)
from .contest import ContestSpec, contest_from_obj, strata_by_kind, validate_contest
from .decision import audit_pvalue
from .fisher import MaximizerControls, MonotonicityViolation
from .polling import read_interpretation_csv
from .session import apply_round, load_session, new_session, save_session
from .simulation import (
    build_population,
    plan_sample_sizes,
    report_to_obj,
    scenario_from_obj,
    stopping_probability,
)

EXIT_COMPUTED = 0
EXIT_INPUT = 2
EXIT_CONTRACT = 3
EXIT_UNREACHABLE = 4


class CliError(Exception):
    """Input problem already phrased for the user, file name included."""


def _read_text(path: str) -> str:
    try:
        with open(path) as handle:
            return handle.read()
    except OSError as err:
        raise CliError(f"{path}: {err.strerror or err}") from err


def _parse_json(path: str, text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise CliError(f"{path}: line {err.lineno}: {err.msg}") from err


def _load_contest(path: str) -> ContestSpec:
    try:
        contest = contest_from_obj(_parse_json(path, _read_text(path)))
    except ValueError as err:
        raise CliError(f"{path}: {err}") from err
    problems = validate_contest(contest)
    if problems:
        raise CliError(f"{path}: invalid contest: " + "; ".join(problems))
    return contest


def _load_comparison(path: str | None, gamma: float):
    if path is None:
        return None
    text = _read_text(path)
    try:
        return read_discrepancy_csv(io.StringIO(text), gamma=gamma)
    except ValueError as err:
        raise CliError(f"{path}: {err}") from err


def _load_polling(path: str | None):
    if path is None:
        return None
    text = _read_text(path)
    try:
        return read_interpretation_csv(io.StringIO(text))
    except ValueError as err:
        raise CliError(f"{path}: {err}") from err


def _parse_pair(raw: str) -> tuple[str, str]:
    parts = raw.split(":")
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise CliError(f"--pair wants winner:loser, got {raw!r}")
    return parts[0], parts[1]


def _default_threads() -> int | None:
    raw = os.environ.get("SUITE_THREADS")
    if raw is None:
        return None
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise CliError(f"SUITE_THREADS must be a positive integer, got {raw!r}")
    return threads


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def cmd_pvalue(args) -> int:
    contest = _load_contest(args.contest)
    controls = MaximizerControls(
        initial_grid_points=args.grid_points,
        max_refinements=args.max_refinements,
    )
    comparison = _load_comparison(args.cvr_sample, args.gamma)
    polling = _load_polling(args.polling_sample)
    pairs = [_parse_pair(raw) for raw in args.pair] if args.pair else None
    decision = audit_pvalue(
        contest,
        comparison=comparison,
        polling=polling,
        controls=controls,
        pairs=pairs,
    )
    _emit(
        {
            "pairs": [
                {
                    "winner": d.winner,
                    "loser": d.loser,
                    "max_pvalue_upper": d.result.max_pvalue_upper,
                    "lambda_at_max": d.result.lambda_at_max,
                    "decisive": d.result.decisive,
                }
                for d in decision.pairs
            ],
            "max_pvalue_upper": decision.max_pvalue_upper,
            "risk_limit": contest.risk_limit,
            "decision": "stop" if decision.stop else "continue",
        }
    )
    return EXIT_COMPUTED


def cmd_simulate(args) -> int:
    try:
        scenario = scenario_from_obj(
            _parse_json(args.scenario, _read_text(args.scenario))
        )
        if args.reps is not None:
            scenario = dataclasses.replace(scenario, replicates=args.reps)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
    except ValueError as err:
        raise CliError(f"{args.scenario}: {err}") from err
    threads = args.threads if args.threads is not None else _default_threads()
    report = stopping_probability(scenario, threads=threads)
    # timing varies run to run, so it goes to stderr and stays out of the
    # byte-stable stdout report
    _emit(report_to_obj(report, include_timing=False))
    sys.stderr.write(
        f"{scenario.replicates} replicates in {report.wall_clock_seconds:.3f}s\n"
    )
    return EXIT_COMPUTED


def cmd_plan(args) -> int:
    contest = _load_contest(args.contest)
    population = build_population(contest, "reported_correct")
    plan = plan_sample_sizes(
        contest,
        population,
        target_probability=args.target_prob,
        replicates=args.reps,
        seed=args.seed,
        gamma=args.gamma,
    )
    report = {
        "target_probability": args.target_prob,
        "n1": plan.n1,
        "n2": plan.n2,
        "achieved_probability": plan.achieved_probability,
        "feasible": plan.feasible,
        # hypothetical single-stratum comparison audit of the same contest,
        # for judging the cost of stratification
        "comparison_benchmark_n": minimal_clean_sample(
            contest.total_ballots(),
            contest.min_margin(),
            contest.risk_limit,
            args.gamma,
        ),
    }
    if not plan.feasible:
        report["note"] = "escalation required"
    _emit(report)
    return EXIT_COMPUTED if plan.feasible else EXIT_UNREACHABLE


def cmd_escalate(args) -> int:
    given = _load_contest(args.contest) if args.contest else None
    if os.path.exists(args.session):
        session = _load_session_file(args.session)
        if given is not None and given != session.contest:
            raise CliError(
                f"{args.session}: session contest does not match {args.contest}"
            )
        if args.gamma is not None and args.gamma != session.gamma:
            raise CliError(
                f"{args.session}: session gamma is {session.gamma}, not"
                f" {args.gamma}"
            )
    else:
        if given is None:
            raise CliError(
                f"{args.session}: no such session; pass --contest to start one"
            )
        session = new_session(
            given, gamma=DEFAULT_GAMMA if args.gamma is None else args.gamma
        )
    comparison = _load_comparison(args.cvr_sample, session.gamma)
    polling = _load_polling(args.polling_sample)
    session = apply_round(session, comparison=comparison, polling=polling)
    save_session(session, args.session)
    latest = session.rounds[-1]
    _emit(
        {
            "session": args.session,
            "rounds": len(session.rounds),
            "max_pvalue_upper": latest.max_pvalue_upper,
            "decisive": latest.decisive,
            "status": session.status,
        }
    )
    return EXIT_COMPUTED


def _load_session_file(path: str):
    try:
        return load_session(path)
    except OSError as err:
        raise CliError(f"{path}: {err.strerror or err}") from err
    except json.JSONDecodeError as err:
        raise CliError(f"{path}: line {err.lineno}: {err.msg}") from err
    except ValueError as err:
        raise CliError(f"{path}: {err}") from err


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suite-audit",
        description="Risk-limiting audits from stratified samples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pvalue = sub.add_parser(
        "pvalue", help="decide the audit from sample files"
    )
    pvalue.add_argument("--contest", required=True, help="contest JSON file")
    pvalue.add_argument("--cvr-sample", help="comparison draws CSV")
    pvalue.add_argument("--polling-sample", help="polling draws CSV")
    pvalue.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    pvalue.add_argument("--grid-points", type=int, default=26)
    pvalue.add_argument("--max-refinements", type=int, default=20)
    pvalue.add_argument(
        "--pair",
        action="append",
        metavar="WINNER:LOSER",
        help="restrict to this pair (repeatable; default all pairs)",
    )
    pvalue.set_defaults(func=cmd_pvalue)

    simulate = sub.add_parser("simulate", help="estimate stopping probability")
    simulate.add_argument("--scenario", required=True, help="scenario JSON file")
    simulate.add_argument("--reps", type=int, help="override replicate count")
    simulate.add_argument("--seed", type=int, help="override base seed")
    simulate.add_argument(
        "--threads",
        type=int,
        help="worker threads (default: SUITE_THREADS or serial)",
    )
    simulate.set_defaults(func=cmd_simulate)

    plan = sub.add_parser("plan", help="recommend initial sample sizes")
    plan.add_argument("--contest", required=True, help="contest JSON file")
    plan.add_argument("--target-prob", type=float, default=0.9)
    plan.add_argument("--reps", type=int, default=2000)
    plan.add_argument("--seed", type=int, default=2026)
    plan.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    plan.set_defaults(func=cmd_plan)

    escalate = sub.add_parser(
        "escalate", help="add a round of draws to a session file"
    )
    escalate.add_argument("--session", required=True, help="session JSON file")
    escalate.add_argument(
        "--contest", help="contest JSON file (only to start a new session)"
    )
    escalate.add_argument("--cvr-sample", help="comparison increment CSV")
    escalate.add_argument("--polling-sample", help="polling increment CSV")
    escalate.add_argument("--gamma", type=float, default=None)
    escalate.set_defaults(func=cmd_escalate)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INPUT
    except MonotonicityViolation as err:
        sys.stderr.write(f"contract violation: {err}\n")
        return EXIT_CONTRACT
    except ValueError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
