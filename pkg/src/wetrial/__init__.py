"""Weighted-entropy trade-off design for adaptive phase I/II
regimen-finding trials: trade-off kernel, sequential allocation engine,
Monte Carlo operating characteristics, calibration sweeps, and a
conduct service for live trials."""

from .tradeoff import (
    BetaPosterior,
    BetaPrior,
    DirichletCounts,
    OutcomeTriple,
    TradeoffTargets,
    beta_tail,
    delta_from_rates,
    delta_from_triple,
    entropy_difference,
    posterior_mode,
)
from .engine import (
    ConfigError,
    Decision,
    DecisionTrace,
    FutilitySchedule,
    PartialOrdering,
    SafetySchedule,
    TrialConfig,
    TrialState,
    admissible_set,
    allocate_cohort,
    coherence_allowed,
    current_criteria,
    final_recommendation,
    no_skip_allowed,
    randomization_weights,
    record_cohort_toxicity,
    record_efficacy,
    select_next_cohort,
    select_next_cohort_randomized,
)
from .scenarios import (
    ILLUSTRATION_SCENARIO,
    SINGLE_AGENT_SCENARIOS,
    TOXICITY_ORDERINGS,
    Scenario,
    ScenarioEvaluation,
    evaluate_scenario,
    permute_scenario,
)
from .presets import illustration_config, motivating_config, single_agent_config
from .simulate import (
    EqualAllocationResult,
    OperatingCharacteristics,
    TrialResult,
    equal_allocation_comparator,
    replication_rng,
    run_replications,
    sample_patient_outcome,
    simulate_trial,
    write_oc_csv,
)
from .calibrate import (
    CalibrationGrid,
    calibrate_constraint,
    calibrate_priors,
    prior_family,
)

__version__ = "0.1.0"
