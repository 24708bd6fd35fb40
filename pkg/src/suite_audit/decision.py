"""Wires the stratum tests to the allocation maximizer for a whole contest.

Each winner-loser pair gets a comparison P-value function and a polling
P-value function of the allocation share, built from the samples and the
reported tallies, and the maximizer certifies the worst-case combination.
The audit stops only when every pair is decisively below the risk limit.

Contests with a single stratum skip the combination step: the lone
stratum's sequential test at its boundary allocation is the whole audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .comparison import ComparisonSampleSummary, km_pvalue
from .contest import ContestSpec, StratumSpec, strata_by_kind, validate_contest
from .fisher import (
    FisherGridPoint,
    FisherMaximizationResult,
    MaximizerControls,
    PvalueFn,
    maximize_combined_pvalue,
)
from .polling import PollingNull, PollingSampleTally, sprt_pvalue

# Either a tally already reduced for one pair, or draw counts keyed by
# candidate name (keys outside the pair land in the neither pile).
PollingSample = Union[PollingSampleTally, Mapping[str, int]]


def pair_polling_tally(
    polling: PollingSample, pair: tuple[str, str]
) -> PollingSampleTally:
    """Reduce a polling sample to one pair's winner/loser/neither tally."""
    if isinstance(polling, PollingSampleTally):
        return polling
    w, l = pair
    total = w_n = l_n = 0
    for name, count in polling.items():
        if count < 0:
            raise ValueError("draw counts must be nonnegative")
        total += count
        if name == w:
            w_n = count
        elif name == l:
            l_n = count
    return PollingSampleTally(W_n=w_n, L_n=l_n, U_n=total - w_n - l_n)


def comparison_pvalue_fn(
    summary: ComparisonSampleSummary, stratum_ballots: int, pair_margin: int
) -> PvalueFn:
    """Comparison-stratum test as a function of the allocation share.

    The share scales how much of the pair's overall margin the stratum is
    allowed to absorb in overstatement; larger shares make the null harder
    to sustain, so the returned function is nonincreasing.
    """
    if stratum_ballots <= 0:
        raise ValueError("stratum ballot count must be positive")
    if pair_margin <= 0:
        raise ValueError("pair margin must be positive")

    def p1(lam: float) -> float:
        return km_pvalue(summary, stratum_ballots, pair_margin, lam)

    return p1


def polling_pvalue_fn(
    tally: PollingSampleTally,
    stratum: StratumSpec,
    pair: tuple[str, str],
    pair_margin: int,
) -> PvalueFn:
    """Polling-stratum test as a function of the allocation share.

    The complement of the share fixes how many votes of the pair's margin
    the stratum must defend; the margin threshold is rounded up so the
    null never shrinks.  A sample that contradicts the reported tallies
    outright can never reject, so it yields the constant 1.
    """
    if pair_margin <= 0:
        raise ValueError("pair margin must be positive")
    if tally.n > stratum.ballots:
        raise ValueError("polling sample larger than its stratum")
    w, l = pair
    v_w = stratum.votes(w)
    v_l = stratum.votes(l)
    v_u = stratum.other_ballots(w, l)
    if tally.W_n > v_w or tally.L_n > v_l or tally.U_n > v_u:
        return lambda lam: 1.0

    def p2(lam: float) -> float:
        c = math.ceil(v_w - v_l - (1.0 - lam) * pair_margin)
        if c >= v_w - v_l:
            # The null swallows the reported outcome itself.
            return 1.0
        null = PollingNull(N_s=stratum.ballots, c=c, V_w=v_w, V_l=v_l, V_u=v_u)
        return sprt_pvalue(tally, null)

    return p2


@dataclass(frozen=True)
class PairDecision:
    """One winner-loser pair's maximized result."""

    winner: str
    loser: str
    result: FisherMaximizationResult


@dataclass(frozen=True)
class AuditDecision:
    """The whole contest's decision: stop only if every pair is decisive."""

    pairs: tuple[PairDecision, ...]
    max_pvalue_upper: float
    stop: bool


def _single_stratum_result(
    p: float, lam: float, alpha: float
) -> FisherMaximizationResult:
    # One stratum means one allocation: the result degenerates to a
    # single grid point whose 2-dof tail value is the P-value itself.
    chi = math.inf if p == 0.0 else -2.0 * math.log(p)
    point = FisherGridPoint(lam=lam, chi=chi, pvalue=p)
    return FisherMaximizationResult(
        max_pvalue_upper=p,
        max_pvalue_point=p,
        lambda_at_max=lam,
        decisive=p <= alpha,
        grid=(point,),
        intervals=(),
    )


def audit_pvalue(
    contest: ContestSpec,
    comparison: ComparisonSampleSummary | None = None,
    polling: PollingSample | None = None,
    controls: MaximizerControls | None = None,
    pairs: Sequence[tuple[str, str]] | None = None,
) -> AuditDecision:
    """Decide the audit from the cumulative samples.

    Every sample must match a stratum of its kind and vice versa.  The
    certified upper bound is the worst pair's; the audit stops only when
    all pairs are decisive at the contest's risk limit.  Passing `pairs`
    restricts the decision to that subset of winner-loser pairs.
    """
    problems = validate_contest(contest)
    if problems:
        raise ValueError("invalid contest: " + "; ".join(problems))
    cvr, no_cvr = strata_by_kind(contest)
    if cvr is None and no_cvr is None:
        raise ValueError("contest has no strata")
    if (cvr is None) != (comparison is None):
        raise ValueError(
            "comparison sample and cvr stratum must be supplied together"
        )
    if (no_cvr is None) != (polling is None):
        raise ValueError(
            "polling sample and no_cvr stratum must be supplied together"
        )
    if pairs is None:
        pairs = contest.pairs()
    else:
        allowed = set(contest.pairs())
        for pair in pairs:
            if tuple(pair) not in allowed:
                raise ValueError(
                    f"{pair[0]}:{pair[1]} is not a winner-loser pair"
                    " of this contest"
                )
        pairs = [tuple(pair) for pair in pairs]
        if not pairs:
            raise ValueError("pair subset is empty")
    if isinstance(polling, PollingSampleTally) and len(pairs) > 1:
        raise ValueError(
            "a pair tally is ambiguous with several winner-loser pairs;"
            " pass draw counts keyed by candidate"
        )
    alpha = contest.risk_limit
    decisions = []
    for w, l in pairs:
        margin = contest.margin(w, l)
        if polling is not None:
            tally = pair_polling_tally(polling, (w, l))
        if cvr is not None and no_cvr is not None:
            p1 = comparison_pvalue_fn(comparison, cvr.ballots, margin)
            p2 = polling_pvalue_fn(tally, no_cvr, (w, l), margin)
            result = maximize_combined_pvalue(contest, (w, l), p1, p2, controls)
        elif cvr is not None:
            p = km_pvalue(comparison, cvr.ballots, margin, 1.0)
            result = _single_stratum_result(p, 1.0, alpha)
        else:
            p = polling_pvalue_fn(tally, no_cvr, (w, l), margin)(0.0)
            result = _single_stratum_result(p, 0.0, alpha)
        decisions.append(PairDecision(winner=w, loser=l, result=result))
    return AuditDecision(
        pairs=tuple(decisions),
        max_pvalue_upper=max(d.result.max_pvalue_upper for d in decisions),
        stop=all(d.result.decisive for d in decisions),
    )
