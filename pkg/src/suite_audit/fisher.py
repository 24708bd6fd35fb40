"""Fisher combination of stratum P-values over the error allocation.

The overall null splits into one hypothesis per allocation lambda of the
overstatement quota between the strata.  Each is tested by combining the
stratum P-values through Fisher's statistic; the audit's P-value is the
maximum of the combined value over feasible allocations.  The maximizer
brackets the statistic on grid intervals using the monotone dependence
of each stratum test on its own quota, so the decision against the risk
limit is certified rather than read off a finite grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

from .contest import ContestSpec, strata_by_kind

logger = logging.getLogger(__name__)

# Grid points are spaced inside this window; feasible allocations beyond
# it are covered by one coarse bracketed interval per side.
_LAMBDA_WINDOW = (-3.0, 4.0)

# Refinement stops once this many allocations have been evaluated; the
# interval cover stays valid, so the reported upper bound is still sound.
_MAX_EVALUATIONS = 4096

_QUANTILE_TOL = 1e-12


class MonotonicityViolation(ValueError):
    """A stratum P-value function moved the wrong way across an interval."""


def chi2_sf_even(x: float, dof: int) -> float:
    """Upper tail of the chi-square distribution with even degrees of
    freedom, via the exact finite sum; no numeric dependency needed."""
    if not x >= 0.0:
        raise ValueError("statistic must be nonnegative")
    if dof <= 0 or dof % 2:
        raise ValueError("degrees of freedom must be a positive even integer")
    if math.isinf(x):
        return 0.0
    half = x / 2.0
    if half == 0.0:
        return 1.0
    # sum the Poisson terms in log space so large dof cannot overflow
    lh = math.log(half)
    logs = [k * lh - math.lgamma(k + 1) for k in range(dof // 2)]
    peak = max(logs)
    acc = math.fsum(math.exp(v - peak) for v in logs)
    return min(1.0, math.exp(peak + math.log(acc) - half))


def chi2_quantile_even(tail: float, dof: int) -> float:
    """Statistic whose upper tail probability equals ``tail``, found by
    bisection on the closed-form tail."""
    if not 0.0 < tail < 1.0:
        raise ValueError("tail probability must lie strictly inside (0, 1)")
    hi = 1.0
    while chi2_sf_even(hi, dof) > tail:
        hi *= 2.0
    lo = 0.0
    while hi - lo > _QUANTILE_TOL:
        mid = (lo + hi) / 2.0
        if chi2_sf_even(mid, dof) > tail:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def _neg_log(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError("P-values must lie in [0, 1]")
    if p == 0.0:
        return math.inf
    return -math.log(p)


def combine_pvalues(pvalues) -> float:
    """Fisher's combined P-value for independent stratum tests at one
    fixed allocation.  Works for any number of strata."""
    ps = tuple(pvalues)
    if not ps:
        raise ValueError("need at least one P-value to combine")
    chi = 2.0 * math.fsum(_neg_log(p) for p in ps)
    if math.isinf(chi):
        logger.debug("a stratum P-value reached zero; combining at the limit")
        return 0.0
    return chi2_sf_even(chi, 2 * len(ps))


def combine_at_lambda(p1: float, p2: float) -> float:
    """Combined P-value for the two-stratum audit at one allocation."""
    return combine_pvalues((p1, p2))


def _split_strata(contest: ContestSpec):
    cvr, no_cvr = strata_by_kind(contest)
    if cvr is None or no_cvr is None:
        raise ValueError("allocation bounds need one stratum of each kind")
    return cvr, no_cvr


def lambda_bounds(contest: ContestSpec, pair: tuple[str, str]) -> tuple[float, float]:
    """Feasible allocation range for one winner-loser pair.

    Outside these bounds one stratum would have to hold more net error
    than it has ballots, so such allocations need no testing.
    """
    s1, s2 = _split_strata(contest)
    w, l = pair
    v1, v2 = s1.margin(w, l), s2.margin(w, l)
    v = v1 + v2
    if v <= 0:
        raise ValueError("pair margin must be positive")
    lam_lo = 1.0 - (v2 + s2.ballots) / v
    lam_hi = (v1 + s1.ballots) / v
    return lam_lo, lam_hi


PvalueFn = Callable[[float], float]


def interval_chi_bounds(
    a: float, b: float, p1_fn: PvalueFn, p2_fn: PvalueFn
) -> tuple[float, float]:
    """Bracket Fisher's statistic over one allocation interval.

    With p1 nonincreasing in lambda and p2 nondecreasing, pairing the
    endpoint values crosswise bounds the statistic on the whole interval
    from both sides.  The directions are verified at the endpoints, not
    assumed.
    """
    if not a < b:
        raise ValueError("interval must have positive width")
    p1a, p1b = p1_fn(a), p1_fn(b)
    p2a, p2b = p2_fn(a), p2_fn(b)
    if p1a < p1b or p2b < p2a:
        raise MonotonicityViolation("monotonicity contract violated")
    chi_lower = 2.0 * (_neg_log(p1a) + _neg_log(p2b))
    chi_upper = 2.0 * (_neg_log(p1b) + _neg_log(p2a))
    return chi_lower, chi_upper


@dataclass(frozen=True)
class MaximizerControls:
    """Grid-search knobs: initial spacing, the narrowest interval still
    worth splitting, and how many refinement passes to allow."""

    initial_grid_points: int = 26
    refine_threshold: float = 1e-6
    max_refinements: int = 20

    def __post_init__(self):
        if self.initial_grid_points < 2:
            raise ValueError("need at least two grid points")
        if self.refine_threshold <= 0.0:
            raise ValueError("refine threshold must be positive")
        if self.max_refinements < 0:
            raise ValueError("refinement count cannot be negative")


@dataclass(frozen=True)
class FisherGridPoint:
    lam: float
    chi: float
    pvalue: float


@dataclass(frozen=True)
class FisherInterval:
    lo: float
    hi: float
    chi_lower: float
    chi_upper: float


@dataclass(frozen=True)
class FisherMaximizationResult:
    """Outcome of maximizing the combined P-value over allocations.

    max_pvalue_upper is a certified bound on the supremum over the whole
    feasible range; max_pvalue_point is the largest value actually seen
    on the grid, attained at lambda_at_max.  decisive is true only when
    every interval's statistic provably clears the risk-limit quantile.
    """

    max_pvalue_upper: float
    max_pvalue_point: float
    lambda_at_max: float
    decisive: bool
    grid: tuple[FisherGridPoint, ...]
    intervals: tuple[FisherInterval, ...]


def maximize_combined_pvalue(
    contest: ContestSpec,
    pair: tuple[str, str],
    p1_fn: PvalueFn,
    p2_fn: PvalueFn,
    controls: MaximizerControls | None = None,
) -> FisherMaximizationResult:
    """Maximize the combined P-value over feasible allocations.

    Evaluates the statistic on a grid, brackets it on every interval,
    and bisects intervals the brackets cannot settle.  Stops early once
    any single allocation provably keeps the audit running.
    """
    if controls is None:
        controls = MaximizerControls()
    lam_lo, lam_hi = lambda_bounds(contest, pair)
    if lam_lo > lam_hi:
        raise ValueError("empty allocation range")
    alpha = contest.risk_limit
    quantile = chi2_quantile_even(alpha, 4)
    # clearing the quantile by the bisection tolerance guarantees the
    # certified upper bound lands at or below the risk limit
    clear = quantile + _QUANTILE_TOL

    cache: dict[float, tuple[float, float, float]] = {}

    def ev(lam: float) -> tuple[float, float, float]:
        got = cache.get(lam)
        if got is None:
            p1, p2 = p1_fn(lam), p2_fn(lam)
            chi = 2.0 * (_neg_log(p1) + _neg_log(p2))
            got = cache[lam] = (p1, p2, chi)
        return got

    def bracket(a: float, b: float) -> tuple[float, float]:
        return interval_chi_bounds(a, b, lambda t: ev(t)[0], lambda t: ev(t)[1])

    lo_clip = max(lam_lo, _LAMBDA_WINDOW[0])
    hi_clip = min(lam_hi, _LAMBDA_WINDOW[1])
    k = controls.initial_grid_points
    if hi_clip > lo_clip:
        knots = [lo_clip + (hi_clip - lo_clip) * i / (k - 1) for i in range(k)]
        knots[0], knots[-1] = lo_clip, hi_clip
    else:
        knots = [lo_clip]
    if lam_lo < knots[0]:
        knots.insert(0, lam_lo)
    if lam_hi > knots[-1]:
        knots.append(lam_hi)

    for lam in knots:
        ev(lam)
    work = [
        (a, b, *bracket(a, b))
        for a, b in zip(knots, knots[1:])
    ]

    passes = 0
    while True:
        if any(chi < quantile for _, _, chi in cache.values()):
            decisive = False
            break
        if any(cu < quantile for _, _, _, cu in work):
            decisive = False
            break
        undecided = [iv for iv in work if iv[2] <= clear]
        if not undecided:
            decisive = True
            break
        splittable = [
            iv for iv in undecided if iv[1] - iv[0] > controls.refine_threshold
        ]
        if (
            passes >= controls.max_refinements
            or not splittable
            or len(cache) >= _MAX_EVALUATIONS
        ):
            decisive = False
            break
        passes += 1
        chosen = set(splittable)
        refined = []
        for iv in work:
            if iv in chosen:
                a, b = iv[0], iv[1]
                m = (a + b) / 2.0
                refined.append((a, m, *bracket(a, m)))
                refined.append((m, b, *bracket(m, b)))
            else:
                refined.append(iv)
        work = refined

    points = tuple(
        FisherGridPoint(lam=lam, chi=chi, pvalue=chi2_sf_even(chi, 4))
        for lam, (_, _, chi) in sorted(cache.items())
    )
    best = max(points, key=lambda pt: (pt.pvalue, -pt.lam))
    if work:
        min_lower = min(cl for _, _, cl, _ in work)
    else:
        min_lower = min(pt.chi for pt in points)
    upper = chi2_sf_even(min_lower, 4)
    return FisherMaximizationResult(
        max_pvalue_upper=upper,
        max_pvalue_point=best.pvalue,
        lambda_at_max=best.lam,
        decisive=decisive,
        grid=points,
        intervals=tuple(FisherInterval(*iv) for iv in sorted(work)),
    )
