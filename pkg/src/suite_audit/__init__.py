"""Risk-limiting election audits from stratified samples.

Combines a ballot-level comparison test in the stratum with cast vote
records and a ballot-polling test in the stratum without them, then
maximizes Fisher's combined P-value over all ways the outcome-changing
error could split between the strata.
"""

from .comparison import (
    DEFAULT_GAMMA,
    ComparisonSampleSummary,
    km_pvalue,
    minimal_clean_sample,
    read_discrepancy_csv,
    summarize_draws,
)
from .contest import (
    ContestSpec,
    LambdaAllocation,
    StratumSpec,
    contest_from_json,
    contest_to_json,
    strata_by_kind,
    validate_contest,
)
from .decision import (
    AuditDecision,
    PairDecision,
    audit_pvalue,
    comparison_pvalue_fn,
    pair_polling_tally,
    polling_pvalue_fn,
)
from .fisher import (
    FisherInterval,
    FisherMaximizationResult,
    MaximizerControls,
    MonotonicityViolation,
    chi2_quantile_even,
    chi2_sf_even,
    combine_pvalues,
    lambda_bounds,
    maximize_combined_pvalue,
)
from .polling import (
    PollingNull,
    PollingSampleTally,
    profile_max,
    read_interpretation_csv,
    sprt_pvalue,
)
from .session import (
    AuditSession,
    EscalationRound,
    apply_round,
    load_session,
    new_session,
    save_session,
    session_from_json,
    session_to_json,
)
from .simulation import (
    DiscrepancyRates,
    SamplePlan,
    SimulationReport,
    SimulationScenario,
    TruePopulation,
    build_population,
    plan_sample_sizes,
    scenario_from_json,
    scenario_to_json,
    simulate_once,
    stopping_probability,
)

__all__ = [
    "AuditDecision",
    "AuditSession",
    "ComparisonSampleSummary",
    "ContestSpec",
    "DEFAULT_GAMMA",
    "DiscrepancyRates",
    "EscalationRound",
    "FisherInterval",
    "FisherMaximizationResult",
    "LambdaAllocation",
    "MaximizerControls",
    "MonotonicityViolation",
    "PairDecision",
    "PollingNull",
    "PollingSampleTally",
    "SamplePlan",
    "SimulationReport",
    "SimulationScenario",
    "StratumSpec",
    "TruePopulation",
    "apply_round",
    "audit_pvalue",
    "build_population",
    "chi2_quantile_even",
    "chi2_sf_even",
    "combine_pvalues",
    "comparison_pvalue_fn",
    "contest_from_json",
    "contest_to_json",
    "km_pvalue",
    "lambda_bounds",
    "load_session",
    "maximize_combined_pvalue",
    "minimal_clean_sample",
    "new_session",
    "pair_polling_tally",
    "plan_sample_sizes",
    "polling_pvalue_fn",
    "profile_max",
    "read_discrepancy_csv",
    "read_interpretation_csv",
    "save_session",
    "scenario_from_json",
    "scenario_to_json",
    "session_from_json",
    "session_to_json",
    "simulate_once",
    "sprt_pvalue",
    "stopping_probability",
    "strata_by_kind",
    "summarize_draws",
    "validate_contest",
]
