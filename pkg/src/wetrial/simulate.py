"""Monte Carlo simulation of whole trials.

`simulate_trial` drives the engine through the delayed-response timeline
of the motivating setting: a cohort's toxicity outcomes are known before
the next cohort is allocated, but its efficacy outcomes (observable only
for patients without toxicity) arrive one cohort later -- except that an
eventual `no efficacy` outcome may, with per-patient probability
pi_early, already be visible at toxicity time.  Outstanding efficacy
outcomes are resolved before the final recommendation; trials that
terminate early leave them unresolved.

`run_replications` repeats this over independent seeded streams and
aggregates operating characteristics.  Replication r always uses the
stream derived from (base_seed, r), and aggregation is an integer-sum
reduction, so results are bit-identical for any number of worker lanes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import (
    TrialConfig,
    TrialState,
    allocate_cohort,
    final_recommendation,
    record_cohort_toxicity,
    record_efficacy,
    select_cohort,
)
from .scenarios import Scenario
from .tradeoff import _beta_tail_shapes, _delta3, normal_quantile

__all__ = [
    "OperatingCharacteristics",
    "TrialResult",
    "EqualAllocationResult",
    "sample_patient_outcome",
    "simulate_trial",
    "replication_rng",
    "run_replications",
    "equal_allocation_comparator",
    "oc_csv_rows",
    "write_oc_csv",
    "OC_CSV_HEADER",
]


# ---------------------------------------------------------------------------
# correlated outcome generation
# ---------------------------------------------------------------------------

def _threshold(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return normal_quantile(p)


class _OutcomeSampler:
    """Correlated binary outcomes by thresholding a bivariate normal pair:
    toxicity iff Z1 <= Phi^-1(alpha_t), latent efficacy iff
    Z2 <= Phi^-1(alpha_e), with corr(Z1, Z2) = rho.  Marginals are exact
    for every rho."""

    def __init__(self, scenario: Scenario):
        self.z_tox = [_threshold(p) for p in scenario.alpha_t]
        self.z_eff = [_threshold(p) for p in scenario.alpha_e]
        self.rho = scenario.rho
        self.mix = math.sqrt(1.0 - scenario.rho * scenario.rho)

    def draw(self, regimen: int, rng):
        z1 = rng.standard_normal()
        z2 = self.rho * z1 + self.mix * rng.standard_normal()
        return z1 <= self.z_tox[regimen - 1], z2 <= self.z_eff[regimen - 1]

    def draw_cohort(self, regimen: int, size: int, rng):
        z = rng.standard_normal(2 * size)
        zt, ze = self.z_tox[regimen - 1], self.z_eff[regimen - 1]
        out = []
        for j in range(size):
            z1 = z[2 * j]
            z2 = self.rho * z1 + self.mix * z[2 * j + 1]
            out.append((z1 <= zt, z2 <= ze))
        return out


def sample_patient_outcome(scenario: Scenario, regimen: int, rng):
    """One (toxicity, latent efficacy) pair for one patient.  The latent
    efficacy is meaningful only when toxicity is False; `simulate_trial`
    reveals it to the engine accordingly."""
    if not 1 <= regimen <= scenario.M:
        raise ValueError("regimen %r outside 1..%d" % (regimen, scenario.M))
    return _OutcomeSampler(scenario).draw(regimen, rng)


# ---------------------------------------------------------------------------
# one trial
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    recommendation: int | None
    terminated: str | None
    state: TrialState
    # eventual efficacy responses across every enrolled patient, whether
    # or not the trial lived to observe them (toxic patients' responses
    # stay latent; terminated trials leave pending ones unresolved)
    latent_efficacy: int = 0

    @property
    def enrolled(self) -> int:
        return self.state.patients_enrolled

    @property
    def toxicity_responses(self) -> int:
        return sum(r.x_tox for r in self.state.regimens)

    @property
    def observed_efficacy(self) -> int:
        return sum(r.x_eff for r in self.state.regimens)

    @property
    def unresolved_pending(self) -> int:
        return sum(r.pending_eff for r in self.state.regimens)

    @property
    def patients_per_regimen(self) -> list[int]:
        return [r.n_tox for r in self.state.regimens]


def simulate_trial(config: TrialConfig, scenario: Scenario, rng) -> TrialResult:
    """Run one complete trial against a scenario's true probabilities."""
    if scenario.M != config.M:
        raise ValueError(
            "scenario has %d regimens, config expects %d" % (scenario.M, config.M)
        )
    sampler = _OutcomeSampler(scenario)
    state = TrialState(config)
    late_eff: dict[int, list[bool]] = {}
    latent_total = 0
    for _ in range(config.max_cohorts):
        decision = select_cohort(state, rng)
        if decision.kind == "terminate":
            break
        cohort = allocate_cohort(state, decision.regimen)
        outcomes = sampler.draw_cohort(decision.regimen, config.c, rng)
        record_cohort_toxicity(state, cohort, [tox for tox, _ in outcomes])
        early: list[bool] = []
        late: list[bool] = []
        for tox, eff in outcomes:
            latent_total += int(eff)
            if tox:
                continue
            if not eff and scenario.pi_early > 0.0 and rng.random() < scenario.pi_early:
                early.append(eff)
            else:
                late.append(eff)
        if early:
            record_efficacy(state, cohort, early)
        late_eff[cohort] = late
        if cohort - 1 in late_eff:
            record_efficacy(state, cohort - 1, late_eff.pop(cohort - 1))
    if state.terminated is not None:
        return TrialResult(None, state.terminated, state, latent_total)
    for cohort in sorted(late_eff):
        record_efficacy(state, cohort, late_eff[cohort])
    return TrialResult(final_recommendation(state), None, state, latent_total)


# ---------------------------------------------------------------------------
# replications and aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatingCharacteristics:
    """Integer-exact aggregate over R replications.  Proportions and means
    are derived views; merging two aggregates is associative and
    commutative, so lane splits cannot change the result.

    `efficacy_total` counts every enrolled patient's eventual efficacy
    response (latent for toxic patients, unresolved in terminated trials
    included); `none_count` covers both early-terminated trials and
    completed trials whose final candidate set was empty."""

    M: int
    R: int
    base_seed: int
    rec_counts: tuple[int, ...]
    none_count: int
    patient_totals: tuple[int, ...]
    toxicity_total: int
    efficacy_total: int

    @property
    def recommendation_proportions(self) -> list[float]:
        return [c / self.R for c in self.rec_counts]

    @property
    def termination_proportion(self) -> float:
        return self.none_count / self.R

    @property
    def mean_patients(self) -> list[float]:
        return [t / self.R for t in self.patient_totals]

    @property
    def mean_toxicities(self) -> float:
        return self.toxicity_total / self.R

    @property
    def mean_efficacies(self) -> float:
        return self.efficacy_total / self.R

    def merge(self, other: "OperatingCharacteristics") -> "OperatingCharacteristics":
        if other.M != self.M or other.base_seed != self.base_seed:
            raise ValueError("cannot merge aggregates from different runs")
        return OperatingCharacteristics(
            M=self.M,
            R=self.R + other.R,
            base_seed=self.base_seed,
            rec_counts=tuple(a + b for a, b in zip(self.rec_counts, other.rec_counts)),
            none_count=self.none_count + other.none_count,
            patient_totals=tuple(
                a + b for a, b in zip(self.patient_totals, other.patient_totals)
            ),
            toxicity_total=self.toxicity_total + other.toxicity_total,
            efficacy_total=self.efficacy_total + other.efficacy_total,
        )


class _Accumulator:
    def __init__(self, M: int, base_seed: int):
        self.M = M
        self.base_seed = base_seed
        self.R = 0
        self.rec_counts = [0] * M
        self.none_count = 0
        self.patient_totals = [0] * M
        self.toxicity_total = 0
        self.efficacy_total = 0

    def add(self, recommendation, patients, tox, eff):
        self.R += 1
        if recommendation is None:
            self.none_count += 1
        else:
            self.rec_counts[recommendation - 1] += 1
        for i, n in enumerate(patients):
            self.patient_totals[i] += n
        self.toxicity_total += tox
        self.efficacy_total += eff

    def freeze(self) -> OperatingCharacteristics:
        return OperatingCharacteristics(
            M=self.M,
            R=self.R,
            base_seed=self.base_seed,
            rec_counts=tuple(self.rec_counts),
            none_count=self.none_count,
            patient_totals=tuple(self.patient_totals),
            toxicity_total=self.toxicity_total,
            efficacy_total=self.efficacy_total,
        )


def replication_rng(base_seed: int, rep: int):
    """Independent stream for replication `rep`, mixed from the pair
    (base_seed, rep) so the assignment of replications to worker lanes is
    irrelevant."""
    return np.random.default_rng(np.random.SeedSequence((base_seed, rep)))


def _replicate_range(args):
    config, scenario, base_seed, start, stop = args
    acc = _Accumulator(config.M, base_seed)
    for rep in range(start, stop):
        res = simulate_trial(config, scenario, replication_rng(base_seed, rep))
        acc.add(res.recommendation, res.patients_per_regimen,
                res.toxicity_responses, res.latent_efficacy)
    return acc.freeze()


def run_replications(config: TrialConfig, scenario: Scenario, R: int,
                     base_seed: int, lanes: int = 1) -> OperatingCharacteristics:
    """R independent trials aggregated into operating characteristics."""
    if R < 1:
        raise ValueError("need at least one replication")
    if lanes <= 1 or R < 4 * lanes:
        return _replicate_range((config, scenario, base_seed, 0, R))
    bounds = [R * k // lanes for k in range(lanes + 1)]
    jobs = [(config, scenario, base_seed, lo, hi)
            for lo, hi in zip(bounds, bounds[1:]) if lo < hi]
    with ProcessPoolExecutor(max_workers=lanes) as pool:
        parts = list(pool.map(_replicate_range, jobs))
    oc = parts[0]
    for part in parts[1:]:
        oc = oc.merge(part)
    return oc


# ---------------------------------------------------------------------------
# equal-allocation comparator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EqualAllocationResult:
    """Non-adaptive benchmark: N/M patients per regimen, recommendation by
    the smallest end-of-trial trade-off evaluated at the raw empirical
    rates (a regimen whose empirical rates fall on the simplex boundary
    has an infinite trade-off and is never picked).  `filtered`
    additionally applies the terminal safety/futility levels via the
    configured Beta posteriors; either variant may recommend nothing."""

    unfiltered: OperatingCharacteristics
    filtered: OperatingCharacteristics


def _equal_allocation_range(args):
    config, scenario, base_seed, start, stop = args
    n_per = config.N // config.M
    sampler = _OutcomeSampler(scenario)
    plain = _Accumulator(config.M, base_seed)
    constrained = _Accumulator(config.M, base_seed)
    g = config.targets
    g1 = (1.0 - g.gamma_t) * g.gamma_e
    g2 = (1.0 - g.gamma_t) * (1.0 - g.gamma_e)
    for rep in range(start, stop):
        rng = replication_rng(base_seed, rep)
        tox_total = 0
        eff_total = 0
        best_plain, key_plain = None, None
        best_con, key_con = None, None
        for i in range(1, config.M + 1):
            x_t = 0
            n_e = 0
            x_e = 0
            for tox, eff in sampler.draw_cohort(i, n_per, rng):
                eff_total += int(eff)
                if tox:
                    x_t += 1
                else:
                    n_e += 1
                    x_e += int(eff)
            tox_total += x_t
            tox_rate = x_t / n_per
            eff_rate = x_e / n_e if n_e else 0.0
            if not (0.0 < tox_rate < 1.0 and 0.0 < eff_rate < 1.0):
                continue
            no_tox = 1.0 - tox_rate
            delta = _delta3(no_tox * eff_rate, no_tox * (1.0 - eff_rate), tox_rate,
                            g1, g2, g.gamma_t)
            key = (delta, config.tie_key(i))
            if key_plain is None or key < key_plain:
                best_plain, key_plain = i, key
            tp, ep = config.tox_priors[i - 1], config.eff_priors[i - 1]
            tox_tail = _beta_tail_shapes(
                x_t + tp.nu + 1.0, n_per - x_t + tp.beta - tp.nu + 1.0,
                config.safety.phi_star)
            eff_tail = _beta_tail_shapes(
                x_e + ep.nu + 1.0, n_e - x_e + ep.beta - ep.nu + 1.0,
                config.futility.psi_star)
            if tox_tail <= config.safety.zeta_N and eff_tail >= config.futility.xi_N:
                if key_con is None or key < key_con:
                    best_con, key_con = i, key
        patients = [n_per] * config.M
        plain.add(best_plain, patients, tox_total, eff_total)
        constrained.add(best_con, patients, tox_total, eff_total)
    return plain.freeze(), constrained.freeze()


def equal_allocation_comparator(config: TrialConfig, scenario: Scenario, R: int,
                                base_seed: int, lanes: int = 1) -> EqualAllocationResult:
    if config.N % config.M != 0:
        raise ValueError("N=%d not divisible by M=%d" % (config.N, config.M))
    if scenario.M != config.M:
        raise ValueError("scenario/config regimen count mismatch")
    if R < 1:
        raise ValueError("need at least one replication")
    if lanes <= 1 or R < 4 * lanes:
        plain, constrained = _equal_allocation_range((config, scenario, base_seed, 0, R))
        return EqualAllocationResult(plain, constrained)
    bounds = [R * k // lanes for k in range(lanes + 1)]
    jobs = [(config, scenario, base_seed, lo, hi)
            for lo, hi in zip(bounds, bounds[1:]) if lo < hi]
    with ProcessPoolExecutor(max_workers=lanes) as pool:
        parts = list(pool.map(_equal_allocation_range, jobs))
    plain, constrained = parts[0]
    for p, c in parts[1:]:
        plain = plain.merge(p)
        constrained = constrained.merge(c)
    return EqualAllocationResult(plain, constrained)


# ---------------------------------------------------------------------------
# CSV report
# ---------------------------------------------------------------------------

OC_CSV_HEADER = (
    "row_type", "regimen", "recommendation_pct", "mean_patients",
    "termination_pct", "mean_toxicities", "mean_efficacies",
    "replications", "seed",
)


def oc_csv_rows(oc: OperatingCharacteristics):
    """Fixed-order report rows: one `regimen` row per regimen followed by
    one `summary` row."""
    rows = []
    for i in range(1, oc.M + 1):
        rows.append((
            "regimen", i,
            "%.4f" % (100.0 * oc.rec_counts[i - 1] / oc.R),
            "%.4f" % (oc.patient_totals[i - 1] / oc.R),
            "", "", "", "", "",
        ))
    rows.append((
        "summary", "", "", "",
        "%.4f" % (100.0 * oc.none_count / oc.R),
        "%.4f" % (oc.toxicity_total / oc.R),
        "%.4f" % (oc.efficacy_total / oc.R),
        oc.R, oc.base_seed,
    ))
    return rows


def write_oc_csv(oc: OperatingCharacteristics, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OC_CSV_HEADER)
        writer.writerows(oc_csv_rows(oc))
