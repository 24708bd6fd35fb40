"""Monte Carlo harness: true populations, replicated audits, stopping
probabilities, and sample-size planning.

Replicate randomness derives from (seed, replicate index) alone, so any
execution order or degree of parallelism produces the same report.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .comparison import (
    DEFAULT_GAMMA,
    ComparisonSampleSummary,
    minimal_clean_sample,
)
from .contest import (
    ContestSpec,
    contest_from_obj,
    contest_to_obj,
    strata_by_kind,
    validate_contest,
)
from .decision import audit_pvalue
from .fisher import MaximizerControls

# with-replacement comparison sampling has no hard ceiling, but a draw
# count past this is a typo, not a plan
_DRAW_CAP = 10_000_000

# key under which polling draws matching no candidate are reported
OTHER_KEY = "(other)"


@dataclass(frozen=True)
class DiscrepancyRates:
    """Fractions of CVR-stratum ballots whose audit reading shifts the
    pair margin by +2, +1, -1, or -2 votes."""

    over2: float = 0.0
    over1: float = 0.0
    under1: float = 0.0
    under2: float = 0.0

    def __post_init__(self):
        rates = (self.over2, self.over1, self.under1, self.under2)
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("discrepancy rates must lie in [0, 1]")
        if sum(rates) > 1.0 + 1e-12:
            raise ValueError("discrepancy rates sum past 1")

    @property
    def clean(self) -> float:
        total = self.over2 + self.over1 + self.under1 + self.under2
        return max(0.0, 1.0 - total)


ZERO_RATES = DiscrepancyRates()


@dataclass(frozen=True)
class TruePopulation:
    """Actual ballots behind the reports, stratum by stratum.

    actual_votes runs parallel to the contest's strata; ballots for no
    listed candidate form the implicit remainder pile.  rates describe
    what comparison draws see in the CVR stratum.
    """

    actual_votes: tuple[Mapping[str, int], ...]
    rates: DiscrepancyRates = ZERO_RATES

    def __post_init__(self):
        object.__setattr__(
            self, "actual_votes", tuple(dict(v) for v in self.actual_votes)
        )

    def votes(self, stratum_index: int, candidate: str) -> int:
        return self.actual_votes[stratum_index].get(candidate, 0)

    def overstatement(self, contest: ContestSpec, pair: tuple[str, str]) -> int:
        """Reported minus actual margin for the pair, summed over strata."""
        w, l = pair
        reported = contest.margin(w, l)
        actual = sum(
            self.votes(i, w) - self.votes(i, l)
            for i in range(len(self.actual_votes))
        )
        return reported - actual

    def outcome_correct(self, contest: ContestSpec) -> bool:
        """True when every pair's actual margin stays positive."""
        return all(
            self.overstatement(contest, pair) < contest.margin(*pair)
            for pair in contest.pairs()
        )


def validate_population(contest: ContestSpec, population: TruePopulation) -> list[str]:
    """Describe every structural problem; empty list when consistent."""
    problems = []
    if len(population.actual_votes) != len(contest.strata):
        problems.append(
            f"population covers {len(population.actual_votes)} strata,"
            f" contest has {len(contest.strata)}"
        )
        return problems
    for stratum, votes in zip(contest.strata, population.actual_votes):
        for candidate, count in sorted(votes.items()):
            if count < 0:
                problems.append(
                    f"stratum {stratum.id!r}: negative count for {candidate}"
                )
        total = sum(votes.values())
        if total > stratum.ballots:
            problems.append(
                f"stratum {stratum.id!r}: {total} actual votes exceed"
                f" {stratum.ballots} ballots"
            )
    return problems


def _rates_from_overstatement(omega: int, ballots: int) -> DiscrepancyRates:
    """Fewest-ballot realization of a net margin error: two-vote flips
    plus at most one single-vote discrepancy."""
    if ballots <= 0 or omega == 0:
        return ZERO_RATES
    flips, single = divmod(abs(omega), 2)
    if flips + single > ballots:
        raise ValueError("margin error exceeds what the stratum can hold")
    if omega > 0:
        return DiscrepancyRates(over2=flips / ballots, over1=single / ballots)
    return DiscrepancyRates(under2=flips / ballots, under1=single / ballots)


def _derived_rates(contest: ContestSpec, actual_votes) -> DiscrepancyRates:
    cvr, _ = strata_by_kind(contest)
    if cvr is None:
        return ZERO_RATES
    index = contest.strata.index(cvr)
    votes = actual_votes[index]
    # charge the binding pair's error; other pairs share the same ballots
    pair = min(contest.pairs(), key=lambda p: contest.margin(*p))
    w, l = pair
    omega = cvr.margin(w, l) - (votes.get(w, 0) - votes.get(l, 0))
    return _rates_from_overstatement(omega, cvr.ballots)


def build_population(
    contest: ContestSpec,
    mode: str = "reported_correct",
    actual_votes: tuple[Mapping[str, int], ...] | None = None,
    rates: DiscrepancyRates | None = None,
) -> TruePopulation:
    """Construct the true ballots a scenario audits against.

    "reported_correct" copies the reported tallies with clean CVRs;
    "tied" levels each stratum's pair to an exact tie, odd vote going to
    the remainder pile; "explicit" takes the tallies as given.  Unless
    rates are supplied, CVR discrepancy rates are derived from the
    stratum's margin error as two-vote flips (fewest ballots touched).
    """
    problems = validate_contest(contest)
    if problems:
        raise ValueError("invalid contest: " + "; ".join(problems))
    if mode == "reported_correct":
        if actual_votes is not None:
            raise ValueError("reported_correct mode takes no tallies")
        built = tuple(dict(s.reported_votes) for s in contest.strata)
        derived = ZERO_RATES
    elif mode == "tied":
        if actual_votes is not None:
            raise ValueError("tied mode takes no tallies")
        pairs = contest.pairs()
        if len(pairs) != 1:
            raise ValueError("tied mode needs exactly one winner-loser pair")
        w, l = pairs[0]
        built = tuple(
            {w: (s.ballots - s.other_ballots(w, l)) // 2,
             l: (s.ballots - s.other_ballots(w, l)) // 2}
            for s in contest.strata
        )
        derived = _derived_rates(contest, built)
    elif mode == "explicit":
        if actual_votes is None:
            raise ValueError("explicit mode needs per-stratum tallies")
        built = tuple(dict(v) for v in actual_votes)
        derived = _derived_rates(contest, built)
    else:
        raise ValueError(f"unknown population mode {mode!r}")
    population = TruePopulation(
        actual_votes=built, rates=derived if rates is None else rates
    )
    problems = validate_population(contest, population)
    if problems:
        raise ValueError("infeasible population: " + "; ".join(problems))
    return population


@dataclass(frozen=True)
class SimulationScenario:
    """One reproducible experiment: what to audit, how hard, how often."""

    contest: ContestSpec
    population: TruePopulation
    sample_plan: tuple[int, int]
    replicates: int
    seed: int
    gamma: float = DEFAULT_GAMMA
    controls: MaximizerControls = field(default_factory=MaximizerControls)

    def __post_init__(self):
        object.__setattr__(self, "sample_plan", tuple(self.sample_plan))
        n1, n2 = self.sample_plan
        if n1 < 0 or n2 < 0:
            raise ValueError("draw counts must be nonnegative")
        if n1 > _DRAW_CAP:
            raise ValueError("comparison draw count is past any practical plan")
        cvr, no_cvr = strata_by_kind(self.contest)
        if cvr is None and n1 > 0:
            raise ValueError("comparison draws need a cvr stratum")
        if no_cvr is None and n2 > 0:
            raise ValueError("polling draws need a no_cvr stratum")
        if no_cvr is not None and n2 > no_cvr.ballots:
            raise ValueError("polling draws exceed the stratum")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not self.gamma >= 1.0:
            raise ValueError("gamma must be at least 1")
        problems = validate_population(self.contest, self.population)
        if problems:
            raise ValueError("infeasible population: " + "; ".join(problems))


@dataclass(frozen=True)
class ReplicateOutcome:
    stopped: bool
    max_pvalue: float


@dataclass(frozen=True)
class SimulationReport:
    """Aggregate of one scenario's replicates.

    Everything except wall_clock_seconds is a pure function of the
    scenario, so reports from different runs can be compared field by
    field after dropping the timing.
    """

    stop_count: int
    replicates: int
    stop_probability: float
    stop_probability_se: float
    max_pvalue_min: float
    max_pvalue_median: float
    max_pvalue_max: float
    wall_clock_seconds: float


def _replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    # spawn-key derivation gives each replicate its own stream without
    # any dependence on execution order
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(replicate_index,))
    )


def _draw_comparison(
    rng: np.random.Generator, rates: DiscrepancyRates, n1: int, gamma: float
) -> ComparisonSampleSummary:
    if n1 == 0:
        return ComparisonSampleSummary(n=0, gamma=gamma)
    probs = np.array(
        [rates.over2, rates.over1, rates.under1, rates.under2, rates.clean]
    )
    o2, o1, u1, u2, _ = (int(k) for k in rng.multinomial(n1, probs / probs.sum()))
    return ComparisonSampleSummary(n=n1, o1=o1, o2=o2, u1=u1, u2=u2, gamma=gamma)


def _draw_polling(
    rng: np.random.Generator,
    stratum_ballots: int,
    votes: Mapping[str, int],
    n2: int,
) -> dict[str, int]:
    names = sorted(votes)
    piles = [votes[name] for name in names]
    other = stratum_ballots - sum(piles)
    counts = rng.multivariate_hypergeometric([*piles, other], n2)
    drawn = {name: int(k) for name, k in zip(names, counts)}
    drawn[OTHER_KEY] = int(counts[-1])
    return drawn


def simulate_once(
    scenario: SimulationScenario, replicate_index: int
) -> ReplicateOutcome:
    """Run one replicate: draw both samples, audit, record the decision."""
    rng = _replicate_rng(scenario.seed, replicate_index)
    n1, n2 = scenario.sample_plan
    cvr, no_cvr = strata_by_kind(scenario.contest)
    comparison = None
    if cvr is not None:
        comparison = _draw_comparison(
            rng, scenario.population.rates, n1, scenario.gamma
        )
    polling = None
    if no_cvr is not None:
        index = scenario.contest.strata.index(no_cvr)
        polling = _draw_polling(
            rng, no_cvr.ballots, scenario.population.actual_votes[index], n2
        )
    decision = audit_pvalue(
        scenario.contest,
        comparison=comparison,
        polling=polling,
        controls=scenario.controls,
    )
    return ReplicateOutcome(stopped=decision.stop, max_pvalue=decision.max_pvalue_upper)


def stopping_probability(
    scenario: SimulationScenario, threads: int | None = None
) -> SimulationReport:
    """Estimate how often the scenario's audit stops.

    The aggregate is a commutative reduction over per-replicate results,
    so the thread count changes the wall clock and nothing else.
    """
    start = time.perf_counter()
    indexes = range(scenario.replicates)
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda i: simulate_once(scenario, i), indexes))
    else:
        outcomes = [simulate_once(scenario, i) for i in indexes]
    stop_count = sum(o.stopped for o in outcomes)
    maxima = sorted(o.max_pvalue for o in outcomes)
    p = stop_count / scenario.replicates
    se = math.sqrt(p * (1.0 - p) / scenario.replicates)
    return SimulationReport(
        stop_count=stop_count,
        replicates=scenario.replicates,
        stop_probability=p,
        stop_probability_se=se,
        max_pvalue_min=maxima[0],
        max_pvalue_median=statistics.median(maxima),
        max_pvalue_max=maxima[-1],
        wall_clock_seconds=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class SamplePlan:
    """Recommended first-round draw counts, or a verdict that no initial
    sample can reliably finish the audit."""

    n1: int
    n2: int
    achieved_probability: float
    feasible: bool


def plan_sample_sizes(
    contest: ContestSpec,
    population: TruePopulation,
    target_probability: float = 0.9,
    replicates: int = 2000,
    seed: int = 20_26,
    gamma: float = DEFAULT_GAMMA,
    controls: MaximizerControls | None = None,
) -> SamplePlan:
    """Search for a small (n1, n2) whose stop probability meets the target.

    n1 sweeps upward from the pure-comparison stopping size; for each n1
    the least sufficient n2 comes from doubling then bisection.  All
    probes share one seed, so the search is deterministic and larger
    samples never look worse by sampling luck alone.
    """
    if not 0.0 <= target_probability < 1.0:
        raise ValueError("target probability must be in [0, 1)")
    problems = validate_contest(contest)
    if problems:
        raise ValueError("invalid contest: " + "; ".join(problems))
    if target_probability == 0.0:
        return SamplePlan(n1=0, n2=0, achieved_probability=0.0, feasible=True)
    cvr, no_cvr = strata_by_kind(contest)
    margin = contest.min_margin()
    if controls is None:
        controls = MaximizerControls()

    def achieved(n1: int, n2: int) -> float:
        scenario = SimulationScenario(
            contest=contest,
            population=population,
            sample_plan=(n1, n2),
            replicates=replicates,
            seed=seed,
            gamma=gamma,
            controls=controls,
        )
        return stopping_probability(scenario).stop_probability

    if cvr is None:
        n1_start = 0
        n1_cap = 0
    else:
        n1_start = minimal_clean_sample(cvr.ballots, margin, contest.risk_limit, gamma)
        n1_cap = min(_DRAW_CAP, max(40 * n1_start, n1_start + 4000))
        if n1_start > n1_cap:
            # polling is vacuous at the allocation that charges the whole
            # margin to the cvr stratum, so no capped comparison sample can
            # be decisive there: the target is unreachable by sampling
            return SamplePlan(n1=0, n2=0, achieved_probability=0.0, feasible=False)
    n2_cap = 0 if no_cvr is None else no_cvr.ballots

    def least_n2(n1: int, limit: int) -> tuple[int, float] | None:
        """Smallest n2 <= limit hitting the target at this n1, if any."""
        p0 = achieved(n1, 0)
        if p0 >= target_probability:
            return 0, p0
        if limit < 1:
            return None
        lo = 0  # highest count known insufficient
        hi = None
        probe = 1
        while probe < limit:
            p_probe = achieved(n1, probe)
            if p_probe >= target_probability:
                hi, p_hi = probe, p_probe
                break
            lo = probe
            probe *= 2
        if hi is None:
            p_limit = achieved(n1, limit)
            if p_limit < target_probability:
                return None
            hi, p_hi = limit, p_limit
        while hi - lo > 1:
            mid = (lo + hi) // 2
            p_mid = achieved(n1, mid)
            if p_mid >= target_probability:
                hi, p_hi = mid, p_mid
            else:
                lo = mid
        return hi, p_hi

    best: SamplePlan | None = None
    n1 = n1_start
    while True:
        budget = n2_cap if best is None else min(n2_cap, best.n1 + best.n2 - n1 - 1)
        if budget >= 0:
            found = least_n2(n1, budget)
            if found is not None:
                n2, p = found
                if best is None or n1 + n2 < best.n1 + best.n2:
                    best = SamplePlan(
                        n1=n1, n2=n2, achieved_probability=p, feasible=True
                    )
        if cvr is None or n1 >= n1_cap:
            break
        if best is not None and n1 + 1 >= best.n1 + best.n2:
            break  # any larger n1 cannot beat the best total
        n1 = min(n1_cap, max(n1 + 25, int(n1 * 1.3)))
    if best is None:
        return SamplePlan(
            n1=0, n2=0, achieved_probability=0.0, feasible=False
        )
    return best


def scenario_to_obj(scenario: SimulationScenario) -> dict:
    """Plain-dict form of a scenario, matching the JSON schema."""
    return {
        "contest": contest_to_obj(scenario.contest),
        "population": {
            "actual_votes": [
                dict(sorted(v.items())) for v in scenario.population.actual_votes
            ],
            "rates": {
                "over2": scenario.population.rates.over2,
                "over1": scenario.population.rates.over1,
                "under1": scenario.population.rates.under1,
                "under2": scenario.population.rates.under2,
            },
        },
        "sample_plan": {
            "n1": scenario.sample_plan[0],
            "n2": scenario.sample_plan[1],
        },
        "replicates": scenario.replicates,
        "seed": scenario.seed,
        "gamma": scenario.gamma,
        "controls": {
            "initial_grid_points": scenario.controls.initial_grid_points,
            "refine_threshold": scenario.controls.refine_threshold,
            "max_refinements": scenario.controls.max_refinements,
        },
    }


def _population_from_obj(contest: ContestSpec, obj) -> TruePopulation:
    if obj == "reported_correct" or obj == "tied":
        return build_population(contest, mode=obj)
    if not isinstance(obj, dict):
        raise ValueError(
            'population must be "reported_correct", "tied", or an object'
        )
    if "actual_votes" not in obj:
        raise ValueError("population object missing key 'actual_votes'")
    votes = obj["actual_votes"]
    if not isinstance(votes, list) or not all(isinstance(v, dict) for v in votes):
        raise ValueError("actual_votes must be an array of objects")
    for i, v in enumerate(votes):
        for name, count in v.items():
            if not isinstance(name, str) or not isinstance(count, int) or isinstance(
                count, bool
            ):
                raise ValueError(f"actual_votes[{i}] must map candidate to integer")
    rates = None
    if "rates" in obj:
        raw = obj["rates"]
        if not isinstance(raw, dict):
            raise ValueError("rates must be an object")
        known = {"over2", "over1", "under1", "under2"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError("unknown rate keys: " + ", ".join(sorted(unknown)))
        for key, value in raw.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"rate {key} must be a number")
        rates = DiscrepancyRates(**{k: float(v) for k, v in raw.items()})
    return build_population(
        contest, mode="explicit", actual_votes=tuple(votes), rates=rates
    )


def scenario_from_obj(obj) -> SimulationScenario:
    """Build a scenario from a parsed JSON object.

    Raises ValueError on structural problems; the dataclass constructors
    reject the semantic ones.
    """
    if not isinstance(obj, dict):
        raise ValueError("scenario JSON must be an object")
    for key in ("contest", "population", "sample_plan", "replicates", "seed"):
        if key not in obj:
            raise ValueError(f"scenario JSON missing key {key!r}")
    contest = contest_from_obj(obj["contest"])
    population = _population_from_obj(contest, obj["population"])
    plan = obj["sample_plan"]
    if (
        not isinstance(plan, dict)
        or not {"n1", "n2"} <= set(plan)
        or not all(
            isinstance(plan[k], int) and not isinstance(plan[k], bool)
            for k in ("n1", "n2")
        )
    ):
        raise ValueError("sample_plan must be an object with integer n1 and n2")
    for key in ("replicates", "seed"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise ValueError(f"{key} must be an integer")
    gamma = obj.get("gamma", DEFAULT_GAMMA)
    if not isinstance(gamma, (int, float)) or isinstance(gamma, bool):
        raise ValueError("gamma must be a number")
    controls = MaximizerControls()
    if "controls" in obj:
        raw = obj["controls"]
        if not isinstance(raw, dict):
            raise ValueError("controls must be an object")
        known = {"initial_grid_points", "refine_threshold", "max_refinements"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError("unknown control keys: " + ", ".join(sorted(unknown)))
        controls = replace(controls, **raw)
    return SimulationScenario(
        contest=contest,
        population=population,
        sample_plan=(plan["n1"], plan["n2"]),
        replicates=obj["replicates"],
        seed=obj["seed"],
        gamma=float(gamma),
        controls=controls,
    )


def scenario_to_json(scenario: SimulationScenario) -> str:
    return json.dumps(scenario_to_obj(scenario), indent=2)


def scenario_from_json(text: str) -> SimulationScenario:
    return scenario_from_obj(json.loads(text))


def report_to_obj(report: SimulationReport, include_timing: bool = True) -> dict:
    """Plain-dict form of a report; timing is optional so callers needing
    run-to-run identical bytes can drop the one nondeterministic field."""
    obj = {
        "stop_count": report.stop_count,
        "replicates": report.replicates,
        "stop_probability": report.stop_probability,
        "stop_probability_se": report.stop_probability_se,
        "max_pvalue": {
            "min": report.max_pvalue_min,
            "median": report.max_pvalue_median,
            "max": report.max_pvalue_max,
        },
    }
    if include_timing:
        obj["wall_clock_seconds"] = report.wall_clock_seconds
    return obj
