"""Engine tests: plug-in criteria, admissibility, coherence, no-skip,
allocation and termination semantics, outcome bookkeeping, and the full
single-trial walkthrough of the combination-schedule setting."""

import numpy as np
import pytest

from wetrial.engine import (
    ConfigError,
    DuplicateOutcomeError,
    FutilitySchedule,
    InvalidStateError,
    PartialOrdering,
    SafetySchedule,
    TrialConfig,
    TrialState,
    UnknownPatientsError,
    admissible_set,
    allocate_cohort,
    assess_regimens,
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
from wetrial.presets import illustration_config, motivating_config
from wetrial.tradeoff import BetaPrior, TradeoffTargets


def two_regimen_config(**overrides):
    base = dict(
        M=2,
        N=20,
        c=2,
        targets=TradeoffTargets(0.01, 0.99),
        tox_priors=(BetaPrior(0.10, 1.0), BetaPrior(0.20, 1.0)),
        eff_priors=(BetaPrior(0.50, 1.0), BetaPrior(0.60, 1.0)),
        orderings=(PartialOrdering((1, 2)),),
        q=1,
        safety=SafetySchedule(phi_star=0.40, zeta_N=0.30, r_t=0.05),
        futility=FutilitySchedule(psi_star=0.20, xi_N=0.50, r_e=0.01),
    )
    base.update(overrides)
    return TrialConfig(**base)


class TestConfigValidation:
    def test_indivisible_budget(self):
        with pytest.raises(ConfigError, match="not divisible"):
            two_regimen_config(N=21)

    def test_prior_means_must_increase_along_chain(self):
        with pytest.raises(ConfigError, match="not strictly increasing"):
            two_regimen_config(
                tox_priors=(BetaPrior(0.30, 1.0), BetaPrior(0.20, 1.0)))

    def test_all_violations_reported(self):
        try:
            two_regimen_config(N=21, q=0, rule="bogus")
        except ConfigError as err:
            text = str(err)
            assert "not divisible" in text and "q" in text and "rule" in text
        else:
            pytest.fail("expected ConfigError")

    def test_bad_prior_rejected_at_construction(self):
        with pytest.raises(ValueError):
            BetaPrior(1.0, 1.0)


class TestCurrentCriteria:
    def test_no_data_modes_equal_prior_vectors(self):
        state = TrialState(illustration_config())
        crit = current_criteria(state)
        tox = [c[0] for c in crit]
        eff = [c[1] for c in crit]
        assert tox == pytest.approx([.10, .175, .25, .325, .40, .475])
        assert eff == pytest.approx([.60, .65, .70, .75, .80, .85])

    def test_frozen_mixed_counts(self):
        state = TrialState(two_regimen_config(
            tox_priors=(BetaPrior(0.10, 1.0), BetaPrior(0.20, 1.0)),
            eff_priors=(BetaPrior(0.60, 1.0), BetaPrior(0.70, 1.0))))
        r = state.regimen(1)
        r.n_tox, r.x_tox, r.n_eff, r.x_eff = 2, 1, 1, 0
        tox, eff, _ = current_criteria(state)[0]
        assert tox == pytest.approx(1.1 / 3)
        assert eff == pytest.approx(0.6 / 2)

    def test_delta_zero_at_targets(self):
        cfg = two_regimen_config(
            targets=TradeoffTargets(0.10, 0.50),
            tox_priors=(BetaPrior(0.10, 1.0), BetaPrior(0.20, 1.0)),
            eff_priors=(BetaPrior(0.50, 1.0), BetaPrior(0.60, 1.0)))
        state = TrialState(cfg)
        # regimen 1 prior modes hit the targets exactly
        assert current_criteria(state)[0][2] == pytest.approx(0.0, abs=1e-12)


class TestAdmissibility:
    def test_untried_regimens_always_admissible(self):
        state = TrialState(motivating_config())
        assert admissible_set(state) == {1, 2, 3, 4, 5, 6}

    def test_all_toxic_regimen_excluded(self):
        # x_tox = n_tox = 6 with prior (0.1, 1): tail of Beta(7.1, 1.9)
        # above 0.4 far exceeds zeta(6) = max(1 - .02*6, .3) = 0.88
        cfg = two_regimen_config(safety=SafetySchedule(0.40, 0.30, 0.02))
        state = TrialState(cfg)
        r = state.regimen(1)
        r.n_tox = r.x_tox = 6
        assert 1 not in admissible_set(state)
        assert 2 in admissible_set(state)

    def test_inefficacious_regimen_excluded(self):
        # x_eff=0 over n_eff=10 with prior (0.6, 1): tail of Beta(1.6, 11.4)
        # above 0.35 is below xi(10) = min(.05*10, .5) = 0.5
        cfg = two_regimen_config(
            eff_priors=(BetaPrior(0.60, 1.0), BetaPrior(0.70, 1.0)),
            futility=FutilitySchedule(psi_star=0.35, xi_N=0.50, r_e=0.05))
        state = TrialState(cfg)
        r = state.regimen(1)
        r.n_tox = 10
        r.n_eff = 10
        assert 1 not in admissible_set(state)

    def test_monotone_safety_response(self):
        # adding a toxicity never turns an inadmissible regimen admissible
        rng = np.random.default_rng(17)
        cfg = two_regimen_config()
        for _ in range(300):
            state = TrialState(cfg)
            r = state.regimen(1)
            r.n_tox = int(rng.integers(1, 15))
            r.x_tox = int(rng.integers(0, r.n_tox + 1))
            survivors = r.n_tox - r.x_tox
            r.n_eff = int(rng.integers(0, survivors + 1))
            r.x_eff = int(rng.integers(0, r.n_eff + 1))
            before = 1 in admissible_set(state)
            r.n_tox += 1
            r.x_tox += 1
            after = 1 in admissible_set(state)
            if not before:
                assert not after


MOTIVATING_CHAIN_IDS = [(1, 2, 3, 6), (1, 2, 4, 6), (1, 2, 5, 6)]


class TestCoherence:
    def setup_method(self):
        self.state = TrialState(motivating_config())

    def test_blocked_escalation_after_toxicities(self):
        self.state.last_cohort = (3, 2)   # two toxicities at T3
        assert not coherence_allowed(self.state, 6)
        assert coherence_allowed(self.state, 4)
        assert coherence_allowed(self.state, 5)

    def test_blocked_deescalation_after_clean_cohort(self):
        self.state.last_cohort = (4, 0)
        assert not coherence_allowed(self.state, 2)
        assert not coherence_allowed(self.state, 1)
        assert coherence_allowed(self.state, 5)   # no chain relates T4 and T5
        assert coherence_allowed(self.state, 6)

    def test_staying_always_allowed(self):
        for q_count in (0, 1, 2):
            self.state.last_cohort = (3, q_count)
            assert coherence_allowed(self.state, 3)

    def test_first_cohort_bypasses(self):
        assert all(coherence_allowed(self.state, i) for i in range(1, 7))


class TestNoSkip:
    def test_fresh_trial_only_chain_minimum(self):
        state = TrialState(motivating_config())
        allowed = [i for i in range(1, 7) if no_skip_allowed(state, i)]
        assert allowed == [1]

    def test_middle_regimens_unlock_together(self):
        state = TrialState(motivating_config())
        state.regimen(1).ever_tried = True
        state.regimen(2).ever_tried = True
        allowed = [i for i in range(1, 7) if no_skip_allowed(state, i)]
        assert allowed == [1, 2, 3, 4, 5]   # T6 needs T3, T4 and T5 tried

    def test_top_needs_every_predecessor(self):
        state = TrialState(motivating_config())
        for i in (1, 2, 3, 4):
            state.regimen(i).ever_tried = True
        assert not no_skip_allowed(state, 6)
        state.regimen(5).ever_tried = True
        assert no_skip_allowed(state, 6)


class TestRecording:
    def test_toxicity_bookkeeping(self):
        state = TrialState(two_regimen_config())
        cohort = allocate_cohort(state, 1)
        record_cohort_toxicity(state, cohort, [True, False])
        r = state.regimen(1)
        assert (r.n_tox, r.x_tox, r.pending_eff) == (2, 1, 1)
        assert state.last_cohort == (1, 1)

    def test_all_clear_cohort(self):
        state = TrialState(two_regimen_config())
        record_cohort_toxicity(state, allocate_cohort(state, 1), [False, False])
        assert state.regimen(1).pending_eff == 2

    def test_all_toxic_cohort(self):
        state = TrialState(two_regimen_config())
        record_cohort_toxicity(state, allocate_cohort(state, 1), [True, True])
        assert state.regimen(1).pending_eff == 0
        assert state.last_cohort == (1, 2)

    def test_duplicate_toxicity_rejected(self):
        state = TrialState(two_regimen_config())
        cohort = allocate_cohort(state, 1)
        record_cohort_toxicity(state, cohort, [False, False])
        with pytest.raises(DuplicateOutcomeError):
            record_cohort_toxicity(state, cohort, [False, False])

    def test_efficacy_bookkeeping(self):
        state = TrialState(two_regimen_config())
        cohort = allocate_cohort(state, 1)
        record_cohort_toxicity(state, cohort, [False, False])
        record_efficacy(state, cohort, [True, False])
        r = state.regimen(1)
        assert (r.n_eff, r.x_eff, r.pending_eff) == (2, 1, 0)

    def test_unknown_patients_rejected(self):
        state = TrialState(two_regimen_config())
        cohort = allocate_cohort(state, 1)
        record_cohort_toxicity(state, cohort, [True, False])
        with pytest.raises(UnknownPatientsError):
            record_efficacy(state, cohort, [True, True])   # only one pending
        with pytest.raises(UnknownPatientsError):
            record_efficacy(state, 5, [True])

    def test_empty_efficacy_is_noop(self):
        state = TrialState(two_regimen_config())
        cohort = allocate_cohort(state, 1)
        record_cohort_toxicity(state, cohort, [False, False])
        before = state.counts_snapshot()
        clock = state.clock
        record_efficacy(state, cohort, [])
        assert state.counts_snapshot() == before and state.clock == clock

    def test_recording_order_invariance(self):
        # early efficacy before the next cohort's toxicity leaves the same
        # statistical state as late recording of the same data
        def run(order):
            state = TrialState(two_regimen_config())
            c1 = allocate_cohort(state, 1)
            record_cohort_toxicity(state, c1, [False, False])
            c2 = allocate_cohort(state, 1)
            if order == "early":
                record_efficacy(state, c1, [True, False])
                record_cohort_toxicity(state, c2, [False, True])
            else:
                record_cohort_toxicity(state, c2, [False, True])
                record_efficacy(state, c1, [True, False])
            return state.counts_snapshot()

        assert run("early") == run("late")


class TestRandomizationWeights:
    def test_two_candidates(self):
        w = randomization_weights([0.5, 1.0], {1, 2})
        assert w == pytest.approx([2 / 3, 1 / 3])

    def test_zero_delta_takes_all(self):
        w = randomization_weights([0.7, 0.0, 1.3], {1, 2, 3})
        assert w == [0.0, 1.0, 0.0]

    def test_only_top_two_get_weight(self):
        w = randomization_weights([0.5, 1.0, 0.25, 2.0], {1, 2, 3, 4})
        assert w[3] == 0.0 and w[1] == 0.0
        assert w[2] == pytest.approx((1 / 0.25) / (1 / 0.25 + 1 / 0.5))
        assert sum(w) == pytest.approx(1.0)

    def test_single_candidate(self):
        assert randomization_weights([0.5, 1.0], {2}) == [0.0, 1.0]

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            deltas = list(rng.uniform(0.01, 5.0, 6))
            admissible = set(rng.choice(range(1, 7), size=rng.integers(1, 7),
                                        replace=False).tolist())
            assert sum(randomization_weights(deltas, admissible)) == pytest.approx(1.0)


class TestSelection:
    def test_fresh_motivating_trial_starts_at_t1(self):
        state = TrialState(motivating_config())
        decision = select_next_cohort(state)
        assert decision.kind == "allocate" and decision.regimen == 1

    def test_fresh_illustration_trial_starts_at_t1(self):
        state = TrialState(illustration_config())
        decision = select_next_cohort(state)
        assert decision.regimen == 1

    def test_unsafe_minimum_is_passed_over(self):
        # regimen 2 has the smallest trade-off but fails the safety
        # constraint, so regimen 1 is selected
        cfg = two_regimen_config()
        state = TrialState(cfg)
        r1, r2 = state.regimen(1), state.regimen(2)
        r1.n_tox, r1.x_tox, r1.n_eff, r1.x_eff = 8, 0, 8, 0
        r2.n_tox, r2.x_tox, r2.n_eff, r2.x_eff = 8, 5, 3, 3
        r1.ever_tried = r2.ever_tried = True
        state.last_cohort = (2, 1)
        a1, a2 = assess_regimens(state)
        assert a2.delta < a1.delta and not a2.safe and a1.safe
        decision = select_next_cohort(state)
        assert decision.regimen == 1

    def test_chosen_regimen_has_all_flags(self):
        state = TrialState(motivating_config())
        decision = select_next_cohort(state)
        chosen = decision.trace.assessments[decision.regimen - 1]
        assert chosen.allowed

    def test_termination_reason_safety(self):
        # every structurally reachable regimen unsafe -> safety stop
        cfg = two_regimen_config()
        state = TrialState(cfg)
        r1 = state.regimen(1)
        r1.n_tox = r1.x_tox = 8
        r1.ever_tried = True
        state.last_cohort = (1, 2)   # escalation blocked, T2 unreachable
        decision = select_next_cohort(state)
        assert decision.kind == "terminate" and decision.reason == "safety"
        assert state.terminated == "safety"

    def test_termination_reason_futility(self):
        # both regimens safe but futile -> futility stop
        cfg = two_regimen_config(
            futility=FutilitySchedule(psi_star=0.35, xi_N=0.50, r_e=0.05))
        state = TrialState(cfg)
        for i in (1, 2):
            r = state.regimen(i)
            r.n_tox = 12
            r.n_eff = 12
            r.ever_tried = True
        state.last_cohort = (2, 0)
        decision = select_next_cohort(state)
        assert decision.kind == "terminate" and decision.reason == "futility"

    def test_select_after_termination_raises(self):
        state = TrialState(two_regimen_config())
        state.terminated = "safety"
        with pytest.raises(InvalidStateError):
            select_next_cohort(state)

    def test_select_after_exhaustion_raises(self):
        cfg = two_regimen_config(N=2)
        state = TrialState(cfg)
        record_cohort_toxicity(state, allocate_cohort(state, 1), [False, False])
        with pytest.raises(InvalidStateError):
            select_next_cohort(state)


class TestRandomizedSelection:
    def test_single_candidate_deterministic(self):
        cfg = two_regimen_config(
            rule="WE_R",
            futility=FutilitySchedule(psi_star=0.35, xi_N=0.50, r_e=0.05))
        state = TrialState(cfg)
        state.last_cohort = (2, 1)      # escalation blocked
        state.regimen(2).ever_tried = True
        r1 = state.regimen(1)
        r1.n_eff = r1.n_tox = 10        # regimen 1 futile: only 2 remains
        r1.ever_tried = True
        rng = np.random.default_rng(0)
        picks = {select_next_cohort_randomized(state, rng).regimen
                 for _ in range(200)}
        assert picks == {2}

    def test_two_candidate_frequencies(self):
        cfg = two_regimen_config(rule="WE_R")
        state = TrialState(cfg)
        # symmetric clean data; deltas differ through the priors
        for i in (1, 2):
            r = state.regimen(i)
            r.ever_tried = True
        a1, a2 = assess_regimens(state)
        w = randomization_weights([a1.delta, a2.delta], {1, 2})
        rng = np.random.default_rng(123)
        n = 100_000
        hits = sum(select_next_cohort_randomized(state, rng).regimen == 1
                   for _ in range(n))
        assert hits / n == pytest.approx(w[0], abs=0.01)

    def test_zero_delta_candidate_always_chosen(self):
        cfg = two_regimen_config(
            targets=TradeoffTargets(0.10, 0.50),
            tox_priors=(BetaPrior(0.10, 1.0), BetaPrior(0.20, 1.0)),
            eff_priors=(BetaPrior(0.50, 1.0), BetaPrior(0.60, 1.0)),
            rule="WE_R")
        state = TrialState(cfg)   # regimen 1 prior modes == targets
        rng = np.random.default_rng(5)
        assert all(select_next_cohort_randomized(state, rng).regimen == 1
                   for _ in range(100))

    def test_draw_consumes_exactly_one_value(self):
        cfg = two_regimen_config(rule="WE_R")
        state = TrialState(cfg)

        class CountingRng:
            def __init__(self):
                self.calls = 0

            def random(self):
                self.calls += 1
                return 0.42

        rng = CountingRng()
        select_next_cohort_randomized(state, rng)
        assert rng.calls == 1


class TestFinalRecommendation:
    def test_terminated_trial_recommends_nothing(self):
        state = TrialState(two_regimen_config())
        state.terminated = "safety"
        assert final_recommendation(state) is None

    def test_midflight_raises(self):
        state = TrialState(two_regimen_config())
        with pytest.raises(InvalidStateError):
            final_recommendation(state)

    def test_tie_breaks_to_lower_ordered_regimen(self):
        # unrelated regimens with identical priors and identical data give
        # an exact trade-off tie; the lower index wins
        cfg = two_regimen_config(
            N=8,
            orderings=(),
            tox_priors=(BetaPrior(0.10, 1.0), BetaPrior(0.10, 1.0)),
            eff_priors=(BetaPrior(0.50, 1.0), BetaPrior(0.50, 1.0)))
        state = TrialState(cfg)
        for cohort in range(4):
            idx = allocate_cohort(state, 1 + cohort % 2)
            record_cohort_toxicity(state, idx, [False, False])
        # identical per-regimen data
        for i in (1, 2):
            r = state.regimen(i)
            r.n_tox, r.x_tox, r.n_eff, r.x_eff, r.pending_eff = 4, 0, 4, 3, 0
        assert final_recommendation(state) == 1


# ---------------------------------------------------------------------------
# single-trial walkthrough of the combination-schedule setting
# ---------------------------------------------------------------------------

# Per-cohort outcomes of the illustrative trial: toxicity pairs plus the
# efficacy outcomes of each cohort's surviving patients (efficacy for
# cohort k is recorded just before cohort k+2 is allocated).
FIG2_TOXICITY = {
    1: (False, False), 2: (False, False), 3: (False, False), 4: (False, False),
    5: (True, True), 6: (False, False), 7: (False, False), 8: (False, False),
    9: (False, False), 10: (True, False), 11: (False, False), 12: (True, True),
    13: (False, False), 14: (False, False), 15: (False, False),
    16: (False, False), 17: (False, False), 18: (False, False),
}
FIG2_EFFICACY = {
    1: (False, False), 2: (False, False), 3: (False, False), 4: (False, False),
    5: (), 6: (True, False), 7: (False, False), 8: (True, False),
    9: (True, False), 10: (False,), 11: (False, False), 12: (),
    13: (True, True), 14: (True, False), 15: (True, True), 16: (True, False),
    17: (True, True), 18: (True, False),
}
FIG2_ALLOCATIONS = [1, 1, 2, 2, 3, 4, 4, 4, 5, 5, 5, 6, 4, 4, 4, 4, 4, 4]


def replay_walkthrough(config):
    """Drive the engine through the walkthrough outcome sequence and
    collect the allocation decisions."""
    state = TrialState(config)
    allocations = []
    for k in range(1, config.max_cohorts + 1):
        decision = select_next_cohort(state)
        assert decision.kind == "allocate"
        allocations.append(decision.regimen)
        cohort = allocate_cohort(state, decision.regimen)
        record_cohort_toxicity(state, cohort, FIG2_TOXICITY[k])
        if k - 1 >= 1:
            record_efficacy(state, k - 1, FIG2_EFFICACY[k - 1])
    record_efficacy(state, config.max_cohorts,
                    FIG2_EFFICACY[config.max_cohorts])
    return state, allocations


class TestWalkthrough:
    def test_allocation_sequence_and_recommendation(self):
        state, allocations = replay_walkthrough(motivating_config())
        assert allocations == FIG2_ALLOCATIONS
        assert final_recommendation(state) == 4

    def test_cohort6_goes_to_t4_after_toxic_t3(self):
        # the decisive transition: two toxicities at T3 block escalation to
        # T6 but leave T4 reachable, and T4 has the smallest trade-off
        state = TrialState(motivating_config())
        for k in range(1, 6):
            decision = select_next_cohort(state)
            cohort = allocate_cohort(state, decision.regimen)
            record_cohort_toxicity(state, cohort, FIG2_TOXICITY[k])
            if k - 1 >= 1:
                record_efficacy(state, k - 1, FIG2_EFFICACY[k - 1])
        assert state.last_cohort == (3, 2)
        decision = select_next_cohort(state)
        assert decision.regimen == 4
        trace = decision.trace.assessments
        assert not trace[5].coherent          # T6 blocked
        assert trace[3].coherent and trace[3].no_skip

    def test_budget_and_q_invariants(self):
        state, _ = replay_walkthrough(motivating_config())
        assert state.patients_enrolled == state.config.N
        for cohort in state.cohorts:
            assert sum(cohort.tox_outcomes) <= state.config.c
