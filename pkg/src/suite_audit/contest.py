"""Contest and stratum data model shared by the stratum tests and the combiner.

Vote counts are exact integers throughout; fractional quantities such as
diluted margins are derived on demand and never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

STRATUM_KINDS = ("cvr", "no_cvr")


@dataclass(frozen=True)
class StratumSpec:
    """One stratum: identifier, kind, ballot count, and reported tallies."""

    id: str
    kind: str  # "cvr" or "no_cvr"
    ballots: int
    reported_votes: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "reported_votes", dict(self.reported_votes))

    def votes(self, candidate: str) -> int:
        """Reported votes for a candidate; unlisted candidates count zero."""
        return self.reported_votes.get(candidate, 0)

    def margin(self, winner: str, loser: str) -> int:
        """Reported margin in votes within this stratum; may be negative."""
        return self.votes(winner) - self.votes(loser)

    def other_ballots(self, winner: str, loser: str) -> int:
        """Ballots in this stratum reported for neither member of the pair."""
        return self.ballots - self.votes(winner) - self.votes(loser)


@dataclass(frozen=True)
class ContestSpec:
    """A contest to audit: strata, winner/loser sets, and the risk limit."""

    strata: tuple[StratumSpec, ...]
    winners: frozenset[str]
    losers: frozenset[str]
    risk_limit: float

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        object.__setattr__(self, "winners", frozenset(self.winners))
        object.__setattr__(self, "losers", frozenset(self.losers))

    def pairs(self) -> list[tuple[str, str]]:
        """Every (winner, loser) pair, sorted so iteration order is stable."""
        return [(w, l) for w in sorted(self.winners) for l in sorted(self.losers)]

    def margin(self, winner: str, loser: str) -> int:
        """Overall reported margin in votes, summed across strata."""
        return sum(s.margin(winner, loser) for s in self.strata)

    def min_margin(self) -> int:
        """Smallest overall pairwise margin."""
        return min(self.margin(w, l) for w, l in self.pairs())

    def total_ballots(self) -> int:
        return sum(s.ballots for s in self.strata)


@dataclass(frozen=True)
class LambdaAllocation:
    """Split of outcome-changing error across two strata.

    share1 is the fraction charged to the first stratum; the second stratum
    absorbs the rest.  Shares may fall outside [0, 1]: error in one stratum
    can exceed the whole quota when the other stratum understates.
    """

    share1: float

    @property
    def share2(self) -> float:
        return 1.0 - self.share1


def validate_contest(spec: ContestSpec) -> list[str]:
    """Check every contest invariant and describe each violation found.

    Returns an empty list when the contest is internally consistent.  Never
    raises: callers get the complete list of problems in one pass.
    """
    problems: list[str] = []
    if not 0.0 < spec.risk_limit < 1.0:
        problems.append(f"risk_limit {spec.risk_limit} not in (0, 1)")
    if not spec.winners:
        problems.append("winner set is empty")
    if not spec.losers:
        problems.append("loser set is empty")
    overlap = spec.winners & spec.losers
    if overlap:
        problems.append(
            "winners and losers are not disjoint: " + ", ".join(sorted(overlap))
        )
    seen: set[str] = set()
    for stratum in spec.strata:
        if stratum.id in seen:
            problems.append(f"duplicate stratum id {stratum.id!r}")
        seen.add(stratum.id)
        if stratum.kind not in STRATUM_KINDS:
            problems.append(f"stratum {stratum.id!r}: unknown kind {stratum.kind!r}")
        if stratum.ballots < 0:
            problems.append(f"stratum {stratum.id!r}: negative ballot count")
        for candidate, count in sorted(stratum.reported_votes.items()):
            if not 0 <= count <= stratum.ballots:
                problems.append(
                    f"stratum {stratum.id!r}: {candidate} has {count} votes,"
                    f" outside [0, {stratum.ballots}]"
                )
    if spec.winners and spec.losers and not overlap:
        for w, l in spec.pairs():
            for stratum in spec.strata:
                if stratum.votes(w) + stratum.votes(l) > stratum.ballots:
                    problems.append(
                        f"stratum {stratum.id!r}: votes for {w} and {l}"
                        f" exceed {stratum.ballots} ballots"
                    )
            if spec.margin(w, l) <= 0:
                problems.append(f"overall margin not positive for pair ({w}, {l})")
    return problems


def strata_by_kind(spec: ContestSpec) -> tuple[StratumSpec | None, StratumSpec | None]:
    """The (cvr, no_cvr) strata of a contest, either possibly absent."""
    cvr = None
    no_cvr = None
    for stratum in spec.strata:
        if stratum.kind == "cvr":
            if cvr is not None:
                raise ValueError("at most one stratum of each kind is supported")
            cvr = stratum
        elif stratum.kind == "no_cvr":
            if no_cvr is not None:
                raise ValueError("at most one stratum of each kind is supported")
            no_cvr = stratum
    return cvr, no_cvr


def contest_to_obj(spec: ContestSpec) -> dict:
    """Plain-dict form of a contest, matching the JSON schema."""
    return {
        "risk_limit": spec.risk_limit,
        "winners": sorted(spec.winners),
        "losers": sorted(spec.losers),
        "strata": [
            {
                "id": s.id,
                "kind": s.kind,
                "ballots": s.ballots,
                "reported_votes": dict(sorted(s.reported_votes.items())),
            }
            for s in spec.strata
        ],
    }


def contest_from_obj(obj) -> ContestSpec:
    """Build a ContestSpec from a parsed JSON object.

    Raises ValueError on structural problems (missing keys, wrong types);
    semantic checks stay in validate_contest.
    """
    if not isinstance(obj, dict):
        raise ValueError("contest JSON must be an object")
    for key in ("risk_limit", "winners", "losers", "strata"):
        if key not in obj:
            raise ValueError(f"contest JSON missing key {key!r}")
    if not isinstance(obj["risk_limit"], (int, float)) or isinstance(
        obj["risk_limit"], bool
    ):
        raise ValueError("risk_limit must be a number")
    for key in ("winners", "losers"):
        names = obj[key]
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ValueError(f"{key} must be an array of strings")
    if not isinstance(obj["strata"], list):
        raise ValueError("strata must be an array")
    strata = []
    for i, raw in enumerate(obj["strata"]):
        if not isinstance(raw, dict):
            raise ValueError(f"strata[{i}] must be an object")
        for key in ("id", "kind", "ballots", "reported_votes"):
            if key not in raw:
                raise ValueError(f"strata[{i}] missing key {key!r}")
        if not isinstance(raw["id"], str) or not isinstance(raw["kind"], str):
            raise ValueError(f"strata[{i}]: id and kind must be strings")
        if not isinstance(raw["ballots"], int) or isinstance(raw["ballots"], bool):
            raise ValueError(f"strata[{i}]: ballots must be an integer")
        votes = raw["reported_votes"]
        if not isinstance(votes, dict) or not all(
            isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
            for k, v in votes.items()
        ):
            raise ValueError(
                f"strata[{i}]: reported_votes must map candidate to integer"
            )
        strata.append(
            StratumSpec(
                id=raw["id"],
                kind=raw["kind"],
                ballots=raw["ballots"],
                reported_votes=votes,
            )
        )
    return ContestSpec(
        strata=tuple(strata),
        winners=frozenset(obj["winners"]),
        losers=frozenset(obj["losers"]),
        risk_limit=float(obj["risk_limit"]),
    )


def contest_to_json(spec: ContestSpec) -> str:
    return json.dumps(contest_to_obj(spec), indent=2)


def contest_from_json(text: str) -> ContestSpec:
    return contest_from_obj(json.loads(text))
