"""Ballot-polling test for the stratum without cast vote records.

Tests the composite null "stratum margin is at most c votes" against the
reported tallies.  The null likelihood is maximized exactly over every
population satisfying the margin constraint: with the winner count fixed
the best loser count has a closed form, and the profiled winner-count
objective is discretely concave, so an exact integer neighbor search
locates the peak.  The likelihood ratio is then formed from exact
falling-factorial products.  A branch and bound maximizer restricted to
boundary populations (margin exactly c) is exposed separately."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TextIO

# Interval bounds are computed from lgamma, whose absolute rounding error
# grows with the stratum size; this slack keeps pruning sound up to a few
# million ballots.  The exact polish after the search removes any residue.
_BOUND_SAFETY = 1e-6


@dataclass(frozen=True)
class PollingSampleTally:
    """Counts from a without-replacement polling sample.

    W_n ballots showed the winner and not the loser, L_n the reverse, and
    U_n anything else (both marked, neither marked, other candidates).
    """

    W_n: int
    L_n: int
    U_n: int

    def __post_init__(self):
        if min(self.W_n, self.L_n, self.U_n) < 0:
            raise ValueError("tally counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.W_n + self.L_n + self.U_n


@dataclass(frozen=True)
class PollingNull:
    """Null "winner margin <= c votes" plus the reported alternative tallies."""

    N_s: int
    c: int
    V_w: int
    V_l: int
    V_u: int

    def __post_init__(self):
        if min(self.V_w, self.V_l, self.V_u) < 0:
            raise ValueError("alternative tallies must be nonnegative")
        if self.V_w + self.V_l + self.V_u != self.N_s:
            raise ValueError("alternative tallies must sum to the stratum size")
        if self.V_w - self.V_l <= self.c:
            raise ValueError(
                "threshold c reaches the reported margin; the test is vacuous"
            )


@dataclass(frozen=True)
class ProfileMaximizer:
    """Maximizer of the boundary null log-likelihood over winner counts."""

    x_star: int
    f_at_x_star: float


def _f_plus(x: int, W: int, L: int, c: int) -> float:
    # winner and loser factors; nondecreasing in x
    lg = math.lgamma
    return lg(x + 1) - lg(x - W + 1) + lg(x - c + 1) - lg(x - c - L + 1)


def _f_minus(x: int, U: int, c: int, N: int) -> float:
    # unaccounted-ballot factors; nonincreasing in x
    a = N - 2 * x + c
    return math.lgamma(a + 1) - math.lgamma(a - U + 1)


def _f(x: int, W: int, L: int, U: int, c: int, N: int) -> float:
    return _f_plus(x, W, L, c) + _f_minus(x, U, c, N)


def _step_sign(x: int, W: int, L: int, U: int, c: int, N: int) -> int:
    """Exact sign of f(x+1) - f(x).  Valid for lo <= x < hi."""
    a = N - 2 * x + c
    num = (x + 1) * (x + 1 - c) * (a - U) * (a - U - 1)
    den = (x + 1 - W) * (x + 1 - c - L) * a * (a - 1)
    return (num > den) - (num < den)


def _feasible_range(W: int, L: int, U: int, c: int, N: int) -> tuple[int, int]:
    # winner count must cover the sample and leave room for the others; the
    # upper limit keeps the unaccounted pile at least U
    return max(W, L + c), (N - U + c) // 2


def profile_max(tally: PollingSampleTally, null: PollingNull) -> ProfileMaximizer:
    """Maximize the boundary null log-likelihood over integer winner counts.

    Branch and bound: the objective splits into a nondecreasing and a
    nonincreasing part, so an open interval (y, z) is bounded above by
    evaluating the rising part at z and the falling part at y.  Intervals
    are subdivided at their midpoints, largest bound first, until every
    open interval is dominated by an evaluated point.  A final exact
    integer walk settles ties toward the smallest maximizer.
    """
    W, L, U = tally.W_n, tally.L_n, tally.U_n
    N, c = null.N_s, null.c
    lo, hi = _feasible_range(W, L, U, c, N)
    if lo > hi:
        raise ValueError("null unsatisfiable with observed counts")

    fvals: dict[int, float] = {}

    def ev(x: int) -> float:
        fx = _f(x, W, L, U, c, N)
        fvals[x] = fx
        return fx

    best_x, best_f = lo, ev(lo)
    if hi != lo:
        f_hi = ev(hi)
        if f_hi > best_f:
            best_x, best_f = hi, f_hi
    heap: list[tuple[float, int, int]] = []
    if hi - lo > 1:
        bound = _f_plus(hi, W, L, c) + _f_minus(lo, U, c, N) + _BOUND_SAFETY
        heapq.heappush(heap, (-bound, lo, hi))
    while heap:
        neg_bound, y, z = heapq.heappop(heap)
        if -neg_bound <= best_f:
            break  # every remaining interval is dominated
        m = (y + z) // 2
        fm = ev(m)
        if fm > best_f or (fm == best_f and m < best_x):
            best_x, best_f = m, fm
        for yy, zz in ((y, m), (m, z)):
            if zz - yy > 1:
                b = _f_plus(zz, W, L, c) + _f_minus(yy, U, c, N) + _BOUND_SAFETY
                heapq.heappush(heap, (-b, yy, zz))

    # The objective is concave in x, so an exact neighbor comparison can
    # finish the job: climb while the exact step improves, then slide left
    # over any plateau so ties break toward the smallest x.
    x = best_x
    while x < hi and _step_sign(x, W, L, U, c, N) > 0:
        x += 1
    while x > lo and _step_sign(x - 1, W, L, U, c, N) < 0:
        x -= 1
    while x > lo and _step_sign(x - 1, W, L, U, c, N) == 0:
        x -= 1
    f_at = fvals.get(x)
    if f_at is None:
        f_at = _f(x, W, L, U, c, N)
    return ProfileMaximizer(x_star=x, f_at_x_star=f_at)


def _falling(base: int, count: int) -> int:
    """base * (base-1) * ... * (base-count+1) as an exact integer."""
    return math.prod(range(base, base - count, -1))


def _inner_argmax(M: int, L: int, U: int, lo: int, hi: int) -> int:
    """Best loser count in [lo, hi] given M ballots split between losers
    and the unaccounted pile.  The objective is unimodal, so the
    unconstrained optimum clamps to the interval."""
    if L + U == 0:
        return lo
    # the product rises at N_l exactly when L*(M - N_l) > U*(N_l + 1)
    raw = -((U - L * M) // (L + U))
    return min(max(raw, lo), hi)


def _null_region_top(W: int, L: int, U: int, c: int, N: int) -> int:
    """Largest winner count any population with margin at most c allows."""
    return min(N - L - U, max(L + c, (N - U + c) // 2))


def _null_step_sign(w: int, W: int, L: int, U: int, c: int, N: int) -> int:
    """Exact sign of G(w+1) - G(w), where G profiles out the loser count.

    The loser-count argmax moves by at most one when the winner count
    steps, so the ratio telescopes to a handful of integer factors."""
    M0 = N - w
    n0 = _inner_argmax(M0, L, U, max(L, w - c), M0 - U)
    n1 = _inner_argmax(M0 - 1, L, U, max(L, w + 1 - c), M0 - 1 - U)
    num, den = w + 1, w + 1 - W
    u0 = M0 - n0
    d = n1 - n0
    if d == 1:
        num *= (n0 + 1) * (u0 - U) * (u0 - U - 1)
        den *= (n0 + 1 - L) * u0 * (u0 - 1)
    elif d == 0:
        num *= u0 - U
        den *= u0
    elif d == -1:
        num *= n0 - L
        den *= n0
    else:
        raise RuntimeError("loser-count argmax moved by more than one step")
    return (num > den) - (num < den)


def _null_sup_product(W: int, L: int, U: int, c: int, N: int) -> int:
    """Exact max of the null likelihood product over all populations with
    margin at most c.  The caller guarantees the region is nonempty.

    Binary search on the exact neighbor comparison; plateaus only ever sit
    at the peak, so the first strict descent marks a maximizer."""
    lo, hi = W, _null_region_top(W, L, U, c, N)
    while lo < hi:
        mid = (lo + hi) // 2
        if _null_step_sign(mid, W, L, U, c, N) >= 0:
            lo = mid + 1
        else:
            hi = mid
    M = N - lo
    nl = _inner_argmax(M, L, U, max(L, lo - c), M - U)
    return _falling(lo, W) * _falling(nl, L) * _falling(M - nl, U)


@lru_cache(maxsize=8192)
def _log_alt_likelihood(V_w: int, V_l: int, V_u: int, W: int, L: int, U: int) -> float:
    return float(
        math.log(_falling(V_w, W) * _falling(V_l, L) * _falling(V_u, U))
    )


@lru_cache(maxsize=65536)
def _sprt_pvalue_cached(
    W: int, L: int, U: int, N: int, c: int, V_w: int, V_l: int, V_u: int
) -> float:
    n = W + L + U
    if n == 0:
        return 1.0
    alt_possible = W <= V_w and L <= V_l and U <= V_u
    null_possible = W <= _null_region_top(W, L, U, c, N)
    if not alt_possible and not null_possible:
        raise ValueError("tally impossible under both hypotheses")
    if not alt_possible:
        return 1.0  # the evidence, such as it is, favors the null
    if not null_possible:
        return 0.0  # no null population can produce this sample
    if (W - L) * N <= c * n:
        return 1.0  # sample leans toward the null; nothing to reject
    numerator = _null_sup_product(W, L, U, c, N)
    log_ratio = math.log(numerator) - _log_alt_likelihood(V_w, V_l, V_u, W, L, U)
    if log_ratio >= 0.0:
        return 1.0
    return math.exp(log_ratio)


def sprt_pvalue(tally: PollingSampleTally, null: PollingNull) -> float:
    """Conservative sequential P-value for the polling-stratum null.

    Valid at every prefix of a without-replacement sample: under any
    population satisfying the null, the chance this value ever drops below
    p is at most p.  Maximizing over the whole null region, not just its
    boundary, keeps the value nondecreasing in the threshold c.
    """
    if tally.n > null.N_s:
        raise ValueError("sample larger than the stratum")
    return _sprt_pvalue_cached(
        tally.W_n,
        tally.L_n,
        tally.U_n,
        null.N_s,
        null.c,
        null.V_w,
        null.V_l,
        null.V_u,
    )


def read_interpretation_csv(stream: TextIO) -> PollingSampleTally:
    """Parse a polling sample CSV into a tally.

    Expects a header with draw_index and interpretation columns; each
    interpretation is one of w, l, u.  Raises ValueError naming the
    offending line on malformed input.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise ValueError("line 1: missing header row")
    header = [h.strip() for h in header]
    try:
        interp_col = header.index("interpretation")
    except ValueError:
        raise ValueError("line 1: no 'interpretation' column in header") from None
    if "draw_index" not in header:
        raise ValueError("line 1: no 'draw_index' column in header")
    counts = {"w": 0, "l": 0, "u": 0}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            mark = row[interp_col].strip()
        except IndexError:
            raise ValueError(f"line {lineno}: missing interpretation") from None
        if mark not in counts:
            raise ValueError(
                f"line {lineno}: interpretation {mark!r} not one of w, l, u"
            )
        counts[mark] += 1
    return PollingSampleTally(W_n=counts["w"], L_n=counts["l"], U_n=counts["u"])
