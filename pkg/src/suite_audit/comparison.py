"""Ballot-level comparison test for the stratum with cast vote records.

Tests the hypothesis that the overstatement in this stratum is at least a
given share of the overall margin, via the Kaplan-Markov supermartingale
bound on taints sampled with replacement.  All probability products run in
log space so tens of thousands of draws cannot underflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, TextIO

from .contest import ContestSpec

# Error inflation keeps understatement taints strictly inside (-1, 1) so the
# closed-form bound stays finite.  The value is the one in common audit use.
DEFAULT_GAMMA = 1.03905


@dataclass(frozen=True)
class BatchRecord:
    """Reported and audited tallies for one batch of ballots."""

    n_p: int
    reported: Mapping[str, int]
    audited: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "reported", dict(self.reported))
        object.__setattr__(self, "audited", dict(self.audited))
        if self.n_p < 0:
            raise ValueError("batch size must be nonnegative")
        for side, votes in (("reported", self.reported), ("audited", self.audited)):
            for candidate, count in votes.items():
                if not 0 <= count <= self.n_p:
                    raise ValueError(
                        f"{side} count for {candidate} outside [0, {self.n_p}]"
                    )


@dataclass(frozen=True)
class ComparisonSampleSummary:
    """Draw count and discrepancy tallies for a with-replacement sample.

    o1/o2 count one- and two-vote overstatements, u1/u2 the matching
    understatements.  gamma is the error inflation factor; gamma = 1 is
    allowed and reproduces the uninflated bound.
    """

    n: int
    o1: int = 0
    o2: int = 0
    u1: int = 0
    u2: int = 0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        counts = (self.n, self.o1, self.o2, self.u1, self.u2)
        if any(c < 0 for c in counts):
            raise ValueError("draw and discrepancy counts must be nonnegative")
        if self.o1 + self.o2 + self.u1 + self.u2 > self.n:
            raise ValueError("discrepancy counts exceed the number of draws")
        if self.gamma < 1.0:
            raise ValueError("gamma must be at least 1")


@dataclass(frozen=True)
class ErrorBound:
    """A priori bound on each batch's error plus the total across batches."""

    u_p: tuple[float, ...]
    U: float

    def __post_init__(self):
        if any(u <= 0 for u in self.u_p):
            raise ValueError("every batch error bound must be positive")
        if not math.isclose(self.U, sum(self.u_p), rel_tol=1e-12, abs_tol=0.0):
            raise ValueError("total bound must equal the sum of batch bounds")


def _require_pairs(margins: Mapping[tuple[str, str], int]) -> None:
    if not margins:
        raise ValueError("no winner/loser pairs supplied")
    for pair, margin in margins.items():
        if margin <= 0:
            raise ValueError(f"margin for pair {pair} must be positive")


def pair_margins(contest: ContestSpec) -> dict[tuple[str, str], int]:
    """Overall reported margins keyed by (winner, loser) pair."""
    return {(w, l): contest.margin(w, l) for w, l in contest.pairs()}


def batch_error(batch: BatchRecord, margins: Mapping[tuple[str, str], int]) -> float:
    """Worst relative overstatement this batch contributes to any pair.

    For each (winner, loser) pair the batch's error is the reported margin
    minus the audited margin, as a fraction of that pair's overall margin;
    the batch error is the maximum over pairs.
    """
    _require_pairs(margins)
    worst = -math.inf
    for (w, l), margin in margins.items():
        reported = batch.reported.get(w, 0) - batch.reported.get(l, 0)
        audited = batch.audited.get(w, 0) - batch.audited.get(l, 0)
        worst = max(worst, (reported - audited) / margin)
    return worst


def batch_bound(
    batch: BatchRecord,
    margins: Mapping[tuple[str, str], int],
    mode: str = "sharp",
) -> float:
    """A priori bound on batch_error, knowing only the reported side.

    sharp mode bounds each pair by assuming every ballot in the batch flips
    to the loser; simple mode is the coarser 2 n_p / V with V the smallest
    overall margin.  Both dominate any achievable batch_error.
    """
    _require_pairs(margins)
    if mode == "simple":
        return 2.0 * batch.n_p / min(margins.values())
    if mode != "sharp":
        raise ValueError(f"unknown bound mode {mode!r}")
    worst = -math.inf
    for (w, l), margin in margins.items():
        reported = batch.reported.get(w, 0) - batch.reported.get(l, 0)
        worst = max(worst, (reported + batch.n_p) / margin)
    return worst


def error_bounds(
    batches: Iterable[BatchRecord],
    margins: Mapping[tuple[str, str], int],
    mode: str = "sharp",
) -> ErrorBound:
    bounds = tuple(batch_bound(b, margins, mode) for b in batches)
    return ErrorBound(u_p=bounds, U=sum(bounds))


def km_pvalue(
    summary: ComparisonSampleSummary, N_1: int, V_wl: int, lam: float
) -> float:
    """Kaplan-Markov P-value for "stratum overstatement >= lam * V_wl".

    Uses the inflated single-ballot bound 2*gamma/V_wl for every draw, so
    the five discrepancy classes have fixed taints and the supermartingale
    bound collapses to a closed form.  Sequentially valid: the value for
    any prefix of the draws is itself a valid P-value.
    """
    if N_1 <= 0:
        raise ValueError("stratum ballot count must be positive")
    if V_wl <= 0:
        raise ValueError("overall margin must be positive")
    if summary.n == 0:
        return 1.0
    gamma = summary.gamma
    u_total = gamma * 2.0 * N_1 / V_wl
    t = lam / u_total
    if t >= 1.0:
        # The null pins every taint at its maximum; only an all-2-vote
        # overstatement sample at gamma 1 and t exactly 1 is consistent.
        if t == 1.0 and gamma == 1.0 and summary.o2 == summary.n:
            return 1.0
        return 0.0
    if gamma == 1.0 and summary.o2 > 0:
        # An observed full flip has taint 1, so the bound degenerates.
        return 1.0
    log_p = summary.n * math.log1p(-t)
    if summary.o1:
        log_p -= summary.o1 * math.log1p(-1.0 / (2.0 * gamma))
    if summary.o2:
        log_p -= summary.o2 * math.log1p(-1.0 / gamma)
    if summary.u1:
        log_p -= summary.u1 * math.log1p(1.0 / (2.0 * gamma))
    if summary.u2:
        log_p -= summary.u2 * math.log1p(1.0 / gamma)
    if log_p >= 0.0:
        return 1.0
    return math.exp(log_p)


def minimal_clean_sample(
    N_1: int, V_wl: int, alpha: float, gamma: float = DEFAULT_GAMMA
) -> int:
    """Smallest error-free sample that alone drives the P-value to alpha.

    Closed-form start from the clean-sample geometric decay, then exact
    adjustment against km_pvalue so float rounding cannot shift the answer
    off the true threshold.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if N_1 <= 0:
        raise ValueError("stratum ballot count must be positive")
    if V_wl <= 0:
        raise ValueError("overall margin must be positive")
    t = V_wl / (gamma * 2.0 * N_1)
    if t >= 1.0:
        return 1
    n = max(1, math.ceil(math.log(alpha) / math.log1p(-t)))
    while n > 1 and km_pvalue(
        ComparisonSampleSummary(n=n - 1, gamma=gamma), N_1, V_wl, 1.0
    ) <= alpha:
        n -= 1
    while km_pvalue(ComparisonSampleSummary(n=n, gamma=gamma), N_1, V_wl, 1.0) > alpha:
        n += 1
    return n


def classify_draw(
    batch: BatchRecord, margins: Mapping[tuple[str, str], int]
) -> int:
    """Vote-level discrepancy of a single-ballot draw, in {-2, ..., 2}.

    Scales the batch error back to votes against the smallest margin, then
    rounds half-up; values beyond two votes cannot occur for one ballot but
    are clipped defensively.
    """
    if batch.n_p != 1:
        raise ValueError("draw summaries are ballot-level; got a batch")
    votes = batch_error(batch, margins) * min(margins.values())
    return max(-2, min(2, math.floor(votes + 0.5)))


def summarize_draws(
    draws: Iterable[BatchRecord],
    margins: Mapping[tuple[str, str], int],
    gamma: float = DEFAULT_GAMMA,
) -> ComparisonSampleSummary:
    """Tally single-ballot draws into the five discrepancy classes."""
    _require_pairs(margins)
    n = o1 = o2 = u1 = u2 = 0
    for batch in draws:
        votes = classify_draw(batch, margins)
        n += 1
        if votes == 2:
            o2 += 1
        elif votes == 1:
            o1 += 1
        elif votes == -1:
            u1 += 1
        elif votes == -2:
            u2 += 1
    return ComparisonSampleSummary(n=n, o1=o1, o2=o2, u1=u1, u2=u2, gamma=gamma)


def read_discrepancy_csv(
    stream: TextIO, gamma: float = DEFAULT_GAMMA
) -> ComparisonSampleSummary:
    """Parse a comparison sample CSV into a summary.

    Expects a header row with draw_index and discrepancy columns; each
    discrepancy is an integer number of overstatement votes in [-2, 2].
    Raises ValueError naming the offending line on malformed input.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise ValueError("line 1: missing header row")
    header = [h.strip() for h in header]
    try:
        disc_col = header.index("discrepancy")
    except ValueError:
        raise ValueError("line 1: no 'discrepancy' column in header") from None
    if "draw_index" not in header:
        raise ValueError("line 1: no 'draw_index' column in header")
    n = o1 = o2 = u1 = u2 = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            votes = int(row[disc_col].strip())
        except (IndexError, ValueError):
            raise ValueError(f"line {lineno}: discrepancy not an integer") from None
        if not -2 <= votes <= 2:
            raise ValueError(f"line {lineno}: discrepancy {votes} outside [-2, 2]")
        n += 1
        if votes == 2:
            o2 += 1
        elif votes == 1:
            o1 += 1
        elif votes == -1:
            u1 += 1
        elif votes == -2:
            u2 += 1
    return ComparisonSampleSummary(n=n, o1=o1, o2=o2, u1=u1, u2=u2, gamma=gamma)
