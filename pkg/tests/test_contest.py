import json

import pytest

from suite_audit.contest import (
    ContestSpec,
    LambdaAllocation,
    StratumSpec,
    contest_from_json,
    contest_from_obj,
    contest_to_json,
    validate_contest,
)


def two_stratum_contest():
    s1 = StratumSpec("s1", "cvr", 110, {"alice": 60, "bob": 40})
    s2 = StratumSpec("s2", "no_cvr", 110, {"alice": 60, "bob": 40})
    return ContestSpec((s1, s2), frozenset({"alice"}), frozenset({"bob"}), 0.05)


def test_consistent_contest_validates_clean():
    assert validate_contest(two_stratum_contest()) == []


def test_overlapping_winner_loser_reported():
    spec = ContestSpec(
        (StratumSpec("s1", "cvr", 10, {"a": 6, "b": 4}),),
        frozenset({"a"}),
        frozenset({"a", "b"}),
        0.05,
    )
    problems = validate_contest(spec)
    assert any("disjoint" in p and "a" in p for p in problems)


def test_canceling_margins_flagged():
    s1 = StratumSpec("s1", "cvr", 100, {"a": 60, "b": 40})
    s2 = StratumSpec("s2", "no_cvr", 100, {"a": 40, "b": 60})
    spec = ContestSpec((s1, s2), frozenset({"a"}), frozenset({"b"}), 0.05)
    problems = validate_contest(spec)
    assert any("overall margin not positive" in p for p in problems)


def test_vote_count_exceeding_ballots_flagged():
    spec = ContestSpec(
        (StratumSpec("s1", "cvr", 10, {"a": 11, "b": 0}),),
        frozenset({"a"}),
        frozenset({"b"}),
        0.05,
    )
    problems = validate_contest(spec)
    assert any("outside [0, 10]" in p for p in problems)


def test_pair_votes_exceeding_ballots_flagged():
    spec = ContestSpec(
        (StratumSpec("s1", "cvr", 10, {"a": 7, "b": 6}),),
        frozenset({"a"}),
        frozenset({"b"}),
        0.05,
    )
    problems = validate_contest(spec)
    assert any("exceed 10 ballots" in p for p in problems)


def test_negative_stratum_margin_is_allowed():
    # one stratum may lean the other way as long as the overall margin is positive
    s1 = StratumSpec("s1", "cvr", 100, {"a": 70, "b": 20})
    s2 = StratumSpec("s2", "no_cvr", 100, {"a": 30, "b": 50})
    spec = ContestSpec((s1, s2), frozenset({"a"}), frozenset({"b"}), 0.1)
    assert validate_contest(spec) == []
    assert spec.strata[1].margin("a", "b") == -20
    assert spec.margin("a", "b") == 30


def test_margins_sum_across_strata():
    spec = two_stratum_contest()
    assert spec.margin("alice", "bob") == sum(
        s.margin("alice", "bob") for s in spec.strata
    )
    assert spec.min_margin() == 40
    assert spec.total_ballots() == 220


def test_pairs_sorted_and_exhaustive():
    spec = ContestSpec(
        (StratumSpec("s1", "cvr", 100, {"w1": 40, "w2": 35, "z": 25}),),
        frozenset({"w2", "w1"}),
        frozenset({"z"}),
        0.05,
    )
    assert spec.pairs() == [("w1", "z"), ("w2", "z")]


def test_other_ballots():
    s = StratumSpec("s1", "no_cvr", 100, {"a": 55, "b": 30})
    assert s.other_ballots("a", "b") == 15
    assert s.votes("nobody") == 0


def test_lambda_allocation_shares_sum_to_one():
    alloc = LambdaAllocation(0.3)
    assert alloc.share1 == 0.3
    assert alloc.share2 == 0.7
    assert LambdaAllocation(1.5).share2 == -0.5


def test_json_round_trip():
    spec = two_stratum_contest()
    again = contest_from_json(contest_to_json(spec))
    assert again == spec


def test_json_schema_shape():
    obj = json.loads(contest_to_json(two_stratum_contest()))
    assert set(obj) == {"risk_limit", "winners", "losers", "strata"}
    assert obj["strata"][0]["kind"] == "cvr"
    assert obj["strata"][0]["reported_votes"] == {"alice": 60, "bob": 40}


@pytest.mark.parametrize(
    "mutate",
    [
        lambda o: o.pop("risk_limit"),
        lambda o: o.__setitem__("winners", "alice"),
        lambda o: o.__setitem__("risk_limit", True),
        lambda o: o["strata"][0].pop("ballots"),
        lambda o: o["strata"][0].__setitem__("ballots", 1.5),
        lambda o: o["strata"][0]["reported_votes"].__setitem__("alice", "60"),
    ],
)
def test_malformed_json_rejected(mutate):
    is_valid = json.loads(contest_to_json(two_stratum_contest()))
    mutate(is_valid)
    with pytest.raises(ValueError):
        contest_from_obj(is_valid)


def test_validation_reports_all_problems_at_once():
    spec = ContestSpec(
        (StratumSpec("s1", "weird", -5, {"a": 3}),),
        frozenset(),
        frozenset({"a"}),
        1.5,
    )
    problems = validate_contest(spec)
    assert len(problems) >= 4
