"""End-to-end acceptance gate, one test per shipped guarantee.

Each test pins a complete scenario with frozen seeds and tolerances: the
two large reference contests, the pure-comparison benchmark sizes, the
tied-strata and wrong-outcome behavior of the combined test, and the
exactness contracts of the numeric kernels.  Expected constants were
fixed from independent closed-form work or oracle runs, never from the
code under test.
"""

import json
import math

import numpy as np
import pytest
import scipy.special

from suite_audit import cli
from suite_audit.comparison import (
    ComparisonSampleSummary,
    km_pvalue,
    minimal_clean_sample,
)
from suite_audit.contest import ContestSpec, StratumSpec
from suite_audit.decision import comparison_pvalue_fn, polling_pvalue_fn
from suite_audit.fisher import chi2_sf_even, maximize_combined_pvalue
from suite_audit.polling import (
    PollingNull,
    PollingSampleTally,
    profile_max,
    sprt_pvalue,
)
from suite_audit.simulation import (
    SimulationScenario,
    build_population,
    scenario_to_json,
    simulate_once,
    stopping_probability,
)

SEED = 20_260_821


def two_stratum(n1, votes1, n2, votes2, alpha):
    return ContestSpec(
        strata=(
            StratumSpec(id="cvr", kind="cvr", ballots=n1, reported_votes=votes1),
            StratumSpec(id="poll", kind="no_cvr", ballots=n2, reported_votes=votes2),
        ),
        winners=frozenset({"w"}),
        losers=frozenset({"l"}),
        risk_limit=alpha,
    )


def example_1_contest():
    # 110,000 ballots, 9.1% without CVRs, 1.8% diluted margin overall
    return two_stratum(
        100_000,
        {"w": 50_900, "l": 49_100},
        10_000,
        {"w": 1_590, "l": 1_410},
        alpha=0.1,
    )


def example_2_contest():
    # 2,000,000 ballots, 5% without CVRs, 20% diluted margin; the no-CVR
    # stratum is unanimous for the winner
    return two_stratum(
        1_900_000,
        {"w": 1_100_000, "l": 800_000},
        100_000,
        {"w": 100_000, "l": 0},
        alpha=0.05,
    )


def test_criterion_01_large_contest_stopping_probability():
    """Reported-correct 110k contest, plan (700, 500): stop rate in [0.92, 0.96]."""
    contest = example_1_contest()
    population = build_population(contest, "reported_correct")
    scenario = SimulationScenario(
        contest, population, (700, 500), 10_000, seed=SEED
    )
    report = stopping_probability(scenario)
    assert 0.92 <= report.stop_probability <= 0.96
    assert report.wall_clock_seconds < 300.0


def test_criterion_02_landslide_contest_always_stops():
    """Reported-correct 2M contest at 20% margin, plan (43, 15): stop rate >= 0.999."""
    contest = example_2_contest()
    population = build_population(contest, "reported_correct")
    scenario = SimulationScenario(
        contest, population, (43, 15), 10_000, seed=SEED, gamma=1.0
    )
    report = stopping_probability(scenario)
    assert report.stop_probability >= 0.999


def test_criterion_03_pure_comparison_benchmark_sizes():
    """Error-free single-stratum comparison sizes sit in the published bands."""
    tight = minimal_clean_sample(100_000, 1_800, 0.1)
    assert tight == 265  # frozen under default gamma
    assert 250 <= tight <= 270
    wide = minimal_clean_sample(100_000, 20_000, 0.05)
    assert wide == 30  # frozen under default gamma
    assert 28 <= wide <= 34
    # the frozen sizes are minimal: one fewer draw misses the limit
    assert km_pvalue(ComparisonSampleSummary(n=264), 100_000, 1_800, 1.0) > 0.1
    assert km_pvalue(ComparisonSampleSummary(n=29), 100_000, 20_000, 1.0) > 0.05


def test_criterion_04_tied_strata_leave_high_pvalues():
    """True ties at a ~1% reported margin keep the maximized P-value large."""
    contest = two_stratum(
        1_900_000,
        {"w": 959_595, "l": 940_405},
        100_000,
        {"w": 50_505, "l": 49_495},
        alpha=0.05,
    )
    population = build_population(contest, "tied")
    scenario = SimulationScenario(
        contest, population, (500, 1000), 1_000, seed=SEED
    )
    maxima = [
        simulate_once(scenario, i).max_pvalue for i in range(scenario.replicates)
    ]
    above = sum(m > 0.25 for m in maxima) / len(maxima)
    below = sum(m < 0.05 for m in maxima) / len(maxima)
    se = math.sqrt(0.05 * 0.95 / len(maxima))
    assert above >= 0.90
    assert below <= 0.05 + 3 * se


def test_criterion_05_wrong_outcomes_respect_the_risk_limit():
    """Stopping against a wrong outcome stays within alpha at every margin."""
    replicates = 5_000
    for m1, m2 in ((90, 10), (180, 20), (360, 40)):
        for alpha in (0.05, 0.1):
            contest = two_stratum(
                18_000,
                {"w": 9_000 + m1 // 2, "l": 9_000 - m1 // 2},
                2_000,
                {"w": 1_000 + m2 // 2, "l": 1_000 - m2 // 2},
                alpha=alpha,
            )
            population = build_population(
                contest,
                "explicit",
                actual_votes=({"w": 9_000, "l": 9_000}, {"w": 999, "l": 1_000}),
            )
            assert not population.outcome_correct(contest)
            scenario = SimulationScenario(
                contest, population, (400, 300), replicates, seed=SEED
            )
            report = stopping_probability(scenario)
            se = math.sqrt(alpha * (1 - alpha) / replicates)
            assert report.stop_probability <= alpha + 3 * se


def _exact_kernel(x, W, L, U, c, N):
    # integer image of the profiled null likelihood kernel: products of
    # falling factorials, compared without rounding
    out = 1
    for base, length in ((x, W), (x - c, L), (N - 2 * x + c, U)):
        for i in range(length):
            out *= base - i
    return out


def _float_kernel(x, W, L, U, c, N):
    lg = math.lgamma
    rising = lg(x + 1) - lg(x - W + 1) + lg(x - c + 1) - lg(x - c - L + 1)
    a = N - 2 * x + c
    falling = lg(a + 1) - lg(a - U + 1)
    return rising + falling


def test_criterion_06_profile_search_matches_exhaustive_maximization():
    """Branch-and-bound equals exact exhaustive search on 1,000 instances."""
    rng = np.random.default_rng(SEED)
    checked = 0
    while checked < 1_000:
        N = int(rng.integers(2, 201))
        V_w = int(rng.integers(1, N + 1))
        V_l = int(rng.integers(0, N - V_w + 1))
        if V_w <= V_l:
            continue
        V_u = N - V_w - V_l
        c = int(rng.integers(-N, V_w - V_l))
        n = int(rng.integers(0, min(N, 60) + 1))
        W, L, U = (
            int(d) for d in rng.multivariate_hypergeometric([V_w, V_l, V_u], n)
        )
        lo, hi = max(W, L + c), (N - U + c) // 2
        if lo > hi:
            continue
        mx = profile_max(
            PollingSampleTally(W, L, U),
            PollingNull(N_s=N, c=c, V_w=V_w, V_l=V_l, V_u=V_u),
        )
        best = max(_exact_kernel(x, W, L, U, c, N) for x in range(lo, hi + 1))
        assert _exact_kernel(mx.x_star, W, L, U, c, N) == best
        assert mx.f_at_x_star == _float_kernel(mx.x_star, W, L, U, c, N)
        checked += 1


def _random_fisher_setup(rng):
    """A two-stratum contest with samples, as the decision layer wires it."""
    while True:
        n1 = int(rng.integers(50, 401))
        v1w = int(rng.integers(1, n1 + 1))
        v1l = int(rng.integers(0, n1 - v1w + 1))
        n2 = int(rng.integers(20, 201))
        v2w = int(rng.integers(0, n2 + 1))
        v2l = int(rng.integers(0, n2 - v2w + 1))
        margin = (v1w - v1l) + (v2w - v2l)
        if margin <= 0:
            continue
        contest = two_stratum(
            n1, {"w": v1w, "l": v1l}, n2, {"w": v2w, "l": v2l}, alpha=0.05
        )
        draws = int(rng.integers(0, 41))
        o1 = int(rng.integers(0, min(2, draws) + 1))
        u1 = int(rng.integers(0, min(2, draws - o1) + 1))
        summary = ComparisonSampleSummary(n=draws, o1=o1, u1=u1)
        pulls = int(rng.integers(0, min(n2, 50) + 1))
        W, L, U = (
            int(d) for d in rng.multivariate_hypergeometric([v2w, v2l, n2 - v2w - v2l], pulls)
        )
        p1 = comparison_pvalue_fn(summary, n1, margin)
        p2 = polling_pvalue_fn(
            PollingSampleTally(W, L, U),
            contest.strata[1],
            ("w", "l"),
            margin,
        )
        return contest, p1, p2


def _neg_log(p):
    return math.inf if p == 0.0 else -math.log(p)


def test_criterion_07_interval_bounds_bracket_interior_points():
    """Every certified interval brackets the statistic, with no tolerance."""
    rng = np.random.default_rng(SEED)
    checked = 0
    for _ in range(200):
        contest, p1, p2 = _random_fisher_setup(rng)
        result = maximize_combined_pvalue(contest, ("w", "l"), p1, p2)
        for interval in result.intervals:
            for u in rng.random(10):
                lam = interval.lo + u * (interval.hi - interval.lo)
                chi = 2.0 * (_neg_log(p1(lam)) + _neg_log(p2(lam)))
                assert interval.chi_lower <= chi <= interval.chi_upper
                checked += 1
    assert checked >= 2_000


def _log_nonincreasing(ps, slack=1e-12):
    for previous, current in zip(ps, ps[1:]):
        if current == 0.0:
            continue
        assert previous > 0.0
        assert math.log(current) <= math.log(previous) + slack


def test_criterion_08_stratum_tests_are_monotone():
    """km falls as the allocation grows; the polling test rises with c."""
    rng = np.random.default_rng(SEED)
    lams = np.linspace(-3.0, 4.0, 57)
    for _ in range(200):
        ballots = int(rng.integers(1_000, 1_000_001))
        margin = int(rng.integers(max(2, ballots // 500), ballots // 3))
        draws = int(rng.integers(1, 2_000))
        o1 = int(rng.integers(0, min(3, draws) + 1))
        o2 = int(rng.integers(0, min(2, draws - o1) + 1))
        u1 = int(rng.integers(0, min(3, draws - o1 - o2) + 1))
        summary = ComparisonSampleSummary(n=draws, o1=o1, o2=o2, u1=u1)
        ps = [km_pvalue(summary, ballots, margin, float(lam)) for lam in lams]
        _log_nonincreasing(ps)
    for _ in range(200):
        N = int(rng.integers(10, 401))
        V_w = int(rng.integers(1, N + 1))
        V_l = int(rng.integers(0, N - V_w + 1))
        if V_w <= V_l:
            continue
        V_u = N - V_w - V_l
        pulls = int(rng.integers(0, min(N, 80) + 1))
        W, L, U = (
            int(d) for d in rng.multivariate_hypergeometric([V_w, V_l, V_u], pulls)
        )
        tally = PollingSampleTally(W, L, U)
        cs = sorted(
            {int(c) for c in rng.integers(-N, V_w - V_l, size=12)}
        )
        ps = [
            sprt_pvalue(tally, PollingNull(N_s=N, c=c, V_w=V_w, V_l=V_l, V_u=V_u))
            for c in cs
        ]
        _log_nonincreasing(list(reversed(ps)))


def test_criterion_09_chi_square_tail_matches_incomplete_gamma():
    """Closed-form even-dof survival function agrees with scipy to 1e-10."""
    xs = np.linspace(0.0, 100.0, 2_001)
    for dof in (2, 4, 8):
        for x in xs:
            ours = chi2_sf_even(float(x), dof)
            reference = float(scipy.special.gammaincc(dof / 2, float(x) / 2))
            assert abs(ours - reference) <= 1e-10


def test_criterion_10_simulation_reports_are_thread_invariant(tmp_path, capsys):
    """The simulate subcommand emits byte-identical reports at any thread count."""
    contest = example_1_contest()
    population = build_population(contest, "reported_correct")
    scenario = SimulationScenario(contest, population, (700, 500), 500, seed=SEED)
    path = tmp_path / "scenario.json"
    path.write_text(scenario_to_json(scenario) + "\n")
    outputs = []
    for extra in ([], ["--threads", "1"], ["--threads", "4"]):
        code = cli.main(["simulate", "--scenario", str(path)] + extra)
        captured = capsys.readouterr()
        assert code == 0
        outputs.append(captured.out.encode())
    assert outputs[0] == outputs[1] == outputs[2]
    report = json.loads(outputs[0])
    assert report["replicates"] == 500
