"""Escalating audit sessions persisted as a single JSON file.

A session is the audit trail of one contest: the contest itself, every
round of sample increments, and the decision recomputed on the cumulative
samples after each round.  Both stratum tests tolerate repeated looks at
growing samples, so rounds may be added until the audit stops or the
samples amount to a full count.  The file is rewritten atomically
(write-then-rename) so a crash never leaves a half-written trail.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, replace

from .comparison import DEFAULT_GAMMA, ComparisonSampleSummary
from .contest import ContestSpec, contest_from_obj, contest_to_obj, strata_by_kind
from .decision import audit_pvalue
from .fisher import MaximizerControls
from .polling import PollingSampleTally

SCHEMA_VERSION = 1

IN_PROGRESS = "in_progress"
STOPPED = "stopped"
FULL_HAND_COUNT = "full_hand_count_recommended"


@dataclass(frozen=True)
class EscalationRound:
    """One batch of draws and the decision on the samples so far."""

    comparison: ComparisonSampleSummary | None
    polling: PollingSampleTally | None
    max_pvalue_upper: float
    decisive: bool


@dataclass(frozen=True)
class AuditSession:
    contest: ContestSpec
    gamma: float = DEFAULT_GAMMA
    rounds: tuple[EscalationRound, ...] = ()
    status: str = IN_PROGRESS

    def cumulative_comparison(self) -> ComparisonSampleSummary | None:
        """Sum of all comparison increments, None for a polling-only audit."""
        parts = [r.comparison for r in self.rounds if r.comparison is not None]
        if not parts:
            return None
        return ComparisonSampleSummary(
            n=sum(p.n for p in parts),
            o1=sum(p.o1 for p in parts),
            o2=sum(p.o2 for p in parts),
            u1=sum(p.u1 for p in parts),
            u2=sum(p.u2 for p in parts),
            gamma=self.gamma,
        )

    def cumulative_polling(self) -> PollingSampleTally | None:
        parts = [r.polling for r in self.rounds if r.polling is not None]
        if not parts:
            return None
        return PollingSampleTally(
            W_n=sum(p.W_n for p in parts),
            L_n=sum(p.L_n for p in parts),
            U_n=sum(p.U_n for p in parts),
        )


def new_session(contest: ContestSpec, gamma: float = DEFAULT_GAMMA) -> AuditSession:
    if gamma < 1.0:
        raise ValueError("gamma must be at least 1")
    return AuditSession(contest=contest, gamma=gamma)


def _exhausted(session: AuditSession) -> bool:
    """True when any sampled stratum has been drawn at least once over."""
    cvr, no_cvr = strata_by_kind(session.contest)
    comparison = session.cumulative_comparison()
    polling = session.cumulative_polling()
    if cvr is not None and comparison is not None and comparison.n >= cvr.ballots:
        return True
    if no_cvr is not None and polling is not None and polling.n >= no_cvr.ballots:
        return True
    return False


def apply_round(
    session: AuditSession,
    comparison: ComparisonSampleSummary | None = None,
    polling: PollingSampleTally | None = None,
    controls: MaximizerControls | None = None,
) -> AuditSession:
    """Append one escalation round and refresh the session status.

    Increments may be empty (zero draws); the decision always runs on the
    cumulative samples.  Only an in-progress session accepts more draws.
    """
    if session.status != IN_PROGRESS:
        raise ValueError(f"session is already {session.status}")
    cvr, no_cvr = strata_by_kind(session.contest)
    if comparison is None and cvr is not None:
        comparison = ComparisonSampleSummary(n=0, gamma=session.gamma)
    if comparison is not None:
        if cvr is None:
            raise ValueError("comparison draws need a cvr stratum")
        if comparison.gamma != session.gamma:
            raise ValueError("comparison increment disagrees with session gamma")
    if polling is None and no_cvr is not None:
        polling = PollingSampleTally(W_n=0, L_n=0, U_n=0)
    elif polling is not None and no_cvr is None:
        raise ValueError("polling draws need a no_cvr stratum")
    probe = replace(session, rounds=session.rounds + (
        EscalationRound(
            comparison=comparison,
            polling=polling,
            max_pvalue_upper=1.0,
            decisive=False,
        ),
    ))
    decision = audit_pvalue(
        session.contest,
        comparison=probe.cumulative_comparison(),
        polling=probe.cumulative_polling(),
        controls=controls,
    )
    completed = replace(
        probe.rounds[-1],
        max_pvalue_upper=decision.max_pvalue_upper,
        decisive=decision.stop,
    )
    updated = replace(session, rounds=session.rounds + (completed,))
    if decision.stop:
        status = STOPPED
    elif _exhausted(updated):
        status = FULL_HAND_COUNT
    else:
        status = IN_PROGRESS
    return replace(updated, status=status)


def _summary_to_obj(summary: ComparisonSampleSummary | None):
    if summary is None:
        return None
    return {
        "n": summary.n,
        "o1": summary.o1,
        "o2": summary.o2,
        "u1": summary.u1,
        "u2": summary.u2,
    }


def _tally_to_obj(tally: PollingSampleTally | None):
    if tally is None:
        return None
    return {"W_n": tally.W_n, "L_n": tally.L_n, "U_n": tally.U_n}


def session_to_obj(session: AuditSession) -> dict:
    comparison = session.cumulative_comparison()
    polling = session.cumulative_polling()
    return {
        "schema_version": SCHEMA_VERSION,
        "contest": contest_to_obj(session.contest),
        "gamma": session.gamma,
        "status": session.status,
        "rounds": [
            {
                "comparison": _summary_to_obj(r.comparison),
                "polling": _tally_to_obj(r.polling),
                "max_pvalue_upper": r.max_pvalue_upper,
                "decisive": r.decisive,
            }
            for r in session.rounds
        ],
        "cumulative": {
            "comparison": _summary_to_obj(comparison),
            "polling": _tally_to_obj(polling),
        },
    }


def _counts_from_obj(obj, keys, where):
    if not isinstance(obj, dict) or set(obj) != set(keys):
        raise ValueError(f"{where} must be an object with keys {', '.join(keys)}")
    counts = []
    for key in keys:
        value = obj[key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValueError(f"{where}.{key} must be an integer")
        counts.append(value)
    return counts


def session_from_obj(obj) -> AuditSession:
    if not isinstance(obj, dict):
        raise ValueError("session JSON must be an object")
    for key in ("schema_version", "contest", "gamma", "status", "rounds"):
        if key not in obj:
            raise ValueError(f"session JSON missing key {key!r}")
    if obj["schema_version"] != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported session schema version {obj['schema_version']!r}"
        )
    contest = contest_from_obj(obj["contest"])
    gamma = obj["gamma"]
    if not isinstance(gamma, (int, float)) or isinstance(gamma, bool):
        raise ValueError("gamma must be a number")
    status = obj["status"]
    if status not in (IN_PROGRESS, STOPPED, FULL_HAND_COUNT):
        raise ValueError(f"unknown session status {status!r}")
    if not isinstance(obj["rounds"], list):
        raise ValueError("rounds must be an array")
    rounds = []
    for i, raw in enumerate(obj["rounds"]):
        if not isinstance(raw, dict):
            raise ValueError(f"rounds[{i}] must be an object")
        where = f"rounds[{i}]"
        comparison = None
        if raw.get("comparison") is not None:
            n, o1, o2, u1, u2 = _counts_from_obj(
                raw["comparison"],
                ("n", "o1", "o2", "u1", "u2"),
                f"{where}.comparison",
            )
            comparison = ComparisonSampleSummary(
                n=n, o1=o1, o2=o2, u1=u1, u2=u2, gamma=gamma
            )
        polling = None
        if raw.get("polling") is not None:
            w_n, l_n, u_n = _counts_from_obj(
                raw["polling"], ("W_n", "L_n", "U_n"), f"{where}.polling"
            )
            polling = PollingSampleTally(W_n=w_n, L_n=l_n, U_n=u_n)
        upper = raw.get("max_pvalue_upper")
        if not isinstance(upper, (int, float)) or isinstance(upper, bool):
            raise ValueError(f"{where}.max_pvalue_upper must be a number")
        if not isinstance(raw.get("decisive"), bool):
            raise ValueError(f"{where}.decisive must be a boolean")
        rounds.append(
            EscalationRound(
                comparison=comparison,
                polling=polling,
                max_pvalue_upper=float(upper),
                decisive=raw["decisive"],
            )
        )
    if status == STOPPED and not (rounds and rounds[-1].decisive):
        raise ValueError("status is stopped but the last round was not decisive")
    session = AuditSession(
        contest=contest, gamma=float(gamma), rounds=tuple(rounds), status=status
    )
    recorded = obj.get("cumulative")
    if recorded is not None:
        expected = {
            "comparison": _summary_to_obj(session.cumulative_comparison()),
            "polling": _tally_to_obj(session.cumulative_polling()),
        }
        if recorded != expected:
            raise ValueError(
                "cumulative totals do not match the sum of the rounds"
            )
    return session


def session_to_json(session: AuditSession) -> str:
    return json.dumps(session_to_obj(session), indent=2)


def session_from_json(text: str) -> AuditSession:
    return session_from_obj(json.loads(text))


def save_session(session: AuditSession, path: str) -> None:
    """Persist atomically: write a sibling temp file, then rename over."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(session_to_json(session))
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_session(path: str) -> AuditSession:
    with open(path) as handle:
        return session_from_json(handle.read())
