"""Sequential regimen-finding engine.

Allocation proceeds cohort by cohort.  Before each cohort the engine
evaluates, per regimen, the plug-in trade-off value at the Beta posterior
modes (toxicity and efficacy counts keep separate denominators so delayed
efficacy data never block a decision), the time-varying safety and
futility constraints, coherence with respect to the declared partial
toxicity orderings, and a no-skip rule.  The next cohort goes to the
candidate with the smallest trade-off value (rule WE) or is randomized
between the two best candidates with inverse trade-off weights (rule
WE_R).  An empty candidate set terminates the trial for safety or
futility.

Regimens are identified by 1-based indices throughout; per-regimen lists
are in regimen order (position 0 holds regimen 1).

A TrialState is a single-writer value: mutations happen only through the
record/allocate operations below, so independent trials can run on any
number of workers without shared state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .tradeoff import BetaPrior, TradeoffTargets, _beta_tail_shapes, _delta3

__all__ = [
    "TrialError",
    "ConfigError",
    "InvalidStateError",
    "DuplicateOutcomeError",
    "UnknownPatientsError",
    "PartialOrdering",
    "SafetySchedule",
    "FutilitySchedule",
    "TrialConfig",
    "RegimenState",
    "CohortRecord",
    "TrialState",
    "RegimenAssessment",
    "DecisionTrace",
    "Decision",
    "current_criteria",
    "admissible_set",
    "coherence_allowed",
    "no_skip_allowed",
    "allocate_cohort",
    "record_cohort_toxicity",
    "record_efficacy",
    "randomization_weights",
    "select_next_cohort",
    "select_next_cohort_randomized",
    "final_recommendation",
]


class TrialError(Exception):
    """Base class for engine errors."""


class ConfigError(TrialError):
    """Raised when a trial configuration violates its invariants; carries
    the full list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid trial configuration: " + "; ".join(self.violations))


class InvalidStateError(TrialError):
    """Operation called on a state that does not admit it."""


class DuplicateOutcomeError(TrialError):
    """Toxicity outcomes posted twice for the same cohort."""


class UnknownPatientsError(TrialError):
    """Efficacy outcomes posted for patients that are not pending."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartialOrdering:
    """A known chain of regimens with nondecreasing toxicity."""

    chain: tuple[int, ...]

    def position(self, regimen: int):
        try:
            return self.chain.index(regimen)
        except ValueError:
            return None


@dataclass(frozen=True)
class SafetySchedule:
    """Time-varying overdose control: a regimen with n observed toxicity
    outcomes is safe while P(rate > phi_star) <= zeta(n), with
    zeta(n) = max(1 - r_t*n, zeta_N).  zeta(0) = 1, so untried regimens
    are never excluded on safety grounds."""

    phi_star: float
    zeta_N: float
    r_t: float

    def level(self, n: int) -> float:
        return max(1.0 - self.r_t * n, self.zeta_N)


@dataclass(frozen=True)
class FutilitySchedule:
    """Time-varying futility control: a regimen with n observed efficacy
    outcomes is efficacious while P(rate > psi_star) >= xi(n), with
    xi(n) = min(r_e*n, xi_N).  xi(0) = 0, so untried regimens are never
    excluded as futile."""

    psi_star: float
    xi_N: float
    r_e: float

    def level(self, n: int) -> float:
        return min(self.r_e * n, self.xi_N)


RULE_WE = "WE"
RULE_WE_R = "WE_R"


@dataclass(frozen=True)
class TrialConfig:
    """Full specification of a trial design.

    Prior means must increase strictly along every declared ordering chain
    (in both endpoints) so that the trial starts at the chain-lowest
    regimen and escalates gradually.
    """

    M: int
    N: int
    c: int
    targets: TradeoffTargets
    tox_priors: tuple[BetaPrior, ...]
    eff_priors: tuple[BetaPrior, ...]
    orderings: tuple[PartialOrdering, ...]
    q: int
    safety: SafetySchedule
    futility: FutilitySchedule
    rule: str = RULE_WE
    rng_seed: int = 0

    def __post_init__(self):
        violations = self.validate()
        if violations:
            raise ConfigError(violations)

    def validate(self) -> list[str]:
        v = []
        if self.M < 2:
            v.append("M must be at least 2 (got %r)" % (self.M,))
        if self.c < 1:
            v.append("cohort size must be positive (got %r)" % (self.c,))
        if self.N < self.c:
            v.append("N=%r smaller than one cohort of %r" % (self.N, self.c))
        if self.c >= 1 and self.N % self.c != 0:
            v.append("N=%r not divisible by cohort size c=%r" % (self.N, self.c))
        if len(self.tox_priors) != self.M:
            v.append("need %d toxicity priors, got %d" % (self.M, len(self.tox_priors)))
        if len(self.eff_priors) != self.M:
            v.append("need %d efficacy priors, got %d" % (self.M, len(self.eff_priors)))
        if self.q < 1:
            v.append("coherence threshold q must be a positive integer (got %r)" % (self.q,))
        for ordering in self.orderings:
            chain = ordering.chain
            if len(set(chain)) != len(chain):
                v.append("ordering %r repeats a regimen" % (chain,))
            if any(i < 1 or i > self.M for i in chain):
                v.append("ordering %r has indices outside 1..%d" % (chain, self.M))
        if len(self.tox_priors) == self.M and len(self.eff_priors) == self.M:
            for ordering in self.orderings:
                chain = ordering.chain
                if any(i < 1 or i > self.M for i in chain):
                    continue
                for lo, hi in zip(chain, chain[1:]):
                    if self.tox_priors[lo - 1].mean >= self.tox_priors[hi - 1].mean:
                        v.append(
                            "prior toxicity means not strictly increasing along %r "
                            "at %d -> %d" % (chain, lo, hi)
                        )
                    if self.eff_priors[lo - 1].mean >= self.eff_priors[hi - 1].mean:
                        v.append(
                            "prior efficacy means not strictly increasing along %r "
                            "at %d -> %d" % (chain, lo, hi)
                        )
        for name, val in (("phi_star", self.safety.phi_star),
                          ("zeta_N", self.safety.zeta_N),
                          ("psi_star", self.futility.psi_star),
                          ("xi_N", self.futility.xi_N)):
            if not 0.0 < val < 1.0:
                v.append("%s must lie in (0, 1), got %r" % (name, val))
        if self.safety.r_t < 0.0:
            v.append("safety rate r_t must be nonnegative, got %r" % (self.safety.r_t,))
        if self.futility.r_e < 0.0:
            v.append("futility rate r_e must be nonnegative, got %r" % (self.futility.r_e,))
        if self.rule not in (RULE_WE, RULE_WE_R):
            v.append("rule must be WE or WE_R, got %r" % (self.rule,))
        return v

    @property
    def max_cohorts(self) -> int:
        return self.N // self.c

    def tie_key(self, regimen: int):
        """Deterministic tie-break: position in the first declared
        ordering, regimens outside it after, then the index itself."""
        if self.orderings:
            pos = self.orderings[0].position(regimen)
            if pos is not None:
                return (0, pos, regimen)
        return (1, 0, regimen)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class RegimenState:
    """Per-regimen outcome bookkeeping.  Toxicity and efficacy counters
    have different denominators: efficacy is observable only for patients
    without toxicity, and may lag behind (pending_eff)."""

    n_tox: int = 0
    x_tox: int = 0
    n_eff: int = 0
    x_eff: int = 0
    pending_eff: int = 0
    ever_tried: bool = False

    def check(self):
        if not (0 <= self.x_tox <= self.n_tox and 0 <= self.x_eff <= self.n_eff):
            raise InvalidStateError("regimen counters out of range: %r" % (self,))
        if self.n_eff + self.pending_eff > self.n_tox - self.x_tox:
            raise InvalidStateError(
                "efficacy accounting exceeds non-toxic patients: %r" % (self,)
            )


@dataclass
class CohortRecord:
    """One allocated cohort with its outcomes and logical record times."""

    index: int
    regimen: int
    size: int
    alloc_time: int
    tox_outcomes: list[bool] | None = None
    tox_time: int | None = None
    eff_events: list[tuple[int, list[bool]]] = field(default_factory=list)
    pending: int = 0

    @property
    def eff_outcomes(self) -> list[bool]:
        out = []
        for _, chunk in self.eff_events:
            out.extend(chunk)
        return out


@dataclass
class TrialState:
    """Mutable state of one running trial."""

    config: TrialConfig
    regimens: list[RegimenState] = field(default_factory=list)
    cohorts: list[CohortRecord] = field(default_factory=list)
    last_cohort: tuple[int, int] | None = None   # (regimen, toxicity count Q)
    terminated: str | None = None                # "safety" | "futility"
    clock: int = 0

    def __post_init__(self):
        if not self.regimens:
            self.regimens = [RegimenState() for _ in range(self.config.M)]

    @property
    def patients_enrolled(self) -> int:
        return sum(c.size for c in self.cohorts)

    def regimen(self, i: int) -> RegimenState:
        return self.regimens[i - 1]

    def clone(self) -> "TrialState":
        return copy.deepcopy(self)

    def counts_snapshot(self):
        """Statistical content of the state (ignores logical times); two
        states that agree here produce identical future decisions."""
        return (
            tuple((r.n_tox, r.x_tox, r.n_eff, r.x_eff, r.pending_eff, r.ever_tried)
                  for r in self.regimens),
            self.last_cohort,
            self.terminated,
            tuple((c.regimen, tuple(c.tox_outcomes or ())) for c in self.cohorts),
        )


# ---------------------------------------------------------------------------
# assessment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimenAssessment:
    """Everything the allocation rule knows about one regimen: plug-in
    estimates, trade-off value and the four admission flags."""

    regimen: int
    tox_mode: float
    eff_mode: float
    delta: float
    safe: bool
    efficacious: bool
    coherent: bool
    no_skip: bool

    @property
    def allowed(self) -> bool:
        return self.safe and self.efficacious and self.coherent and self.no_skip


@dataclass(frozen=True)
class DecisionTrace:
    assessments: tuple[RegimenAssessment, ...]
    chosen: int | None
    weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Decision:
    """Outcome of an allocation step: the next regimen, or a termination."""

    kind: str                      # "allocate" | "terminate"
    regimen: int | None
    reason: str | None
    trace: DecisionTrace


def _modes_and_delta(state: TrialState, i: int):
    cfg = state.config
    r = state.regimens[i - 1]
    tp, ep = cfg.tox_priors[i - 1], cfg.eff_priors[i - 1]
    tox_mode = (r.x_tox + tp.nu) / (r.n_tox + tp.beta)
    eff_mode = (r.x_eff + ep.nu) / (r.n_eff + ep.beta)
    g = cfg.targets
    g1 = (1.0 - g.gamma_t) * g.gamma_e
    g2 = (1.0 - g.gamma_t) * (1.0 - g.gamma_e)
    no_tox = 1.0 - tox_mode
    delta = _delta3(no_tox * eff_mode, no_tox * (1.0 - eff_mode), tox_mode,
                    g1, g2, g.gamma_t)
    return tox_mode, eff_mode, delta


def current_criteria(state: TrialState) -> list[tuple[float, float, float]]:
    """Per-regimen (toxicity mode, efficacy mode, trade-off value), in
    regimen order.  The two modes use each endpoint's own denominator."""
    return [_modes_and_delta(state, i) for i in range(1, state.config.M + 1)]


def _safe_flag(state: TrialState, i: int) -> bool:
    cfg = state.config
    r = state.regimens[i - 1]
    p = cfg.tox_priors[i - 1]
    a = r.x_tox + p.nu + 1.0
    b = r.n_tox - r.x_tox + p.beta - p.nu + 1.0
    return _beta_tail_shapes(a, b, cfg.safety.phi_star) <= cfg.safety.level(r.n_tox)


def _efficacious_flag(state: TrialState, i: int) -> bool:
    cfg = state.config
    r = state.regimens[i - 1]
    p = cfg.eff_priors[i - 1]
    a = r.x_eff + p.nu + 1.0
    b = r.n_eff - r.x_eff + p.beta - p.nu + 1.0
    return _beta_tail_shapes(a, b, cfg.futility.psi_star) >= cfg.futility.level(r.n_eff)


def admissible_set(state: TrialState) -> set[int]:
    """Regimens passing both the safety and the futility constraint at
    their own observation counts.  May be empty."""
    return {
        i for i in range(1, state.config.M + 1)
        if _safe_flag(state, i) and _efficacious_flag(state, i)
    }


def coherence_allowed(state: TrialState, candidate: int) -> bool:
    """Coherent escalation/de-escalation relative to the last cohort.

    After a cohort with Q >= q toxicities the candidate must not sit
    strictly above the last regimen in any declared chain containing
    both; after Q < q it must not sit strictly below.  Regimens sharing
    no chain with the last one are unconstrained, as is the first cohort.
    """
    if state.last_cohort is None:
        return True
    last, tox_count = state.last_cohort
    if candidate == last:
        return True
    escalation_blocked = tox_count >= state.config.q
    for ordering in state.config.orderings:
        pos_c = ordering.position(candidate)
        pos_l = ordering.position(last)
        if pos_c is None or pos_l is None:
            continue
        if escalation_blocked and pos_c > pos_l:
            return False
        if not escalation_blocked and pos_c < pos_l:
            return False
    return True


def no_skip_allowed(state: TrialState, candidate: int) -> bool:
    """A never-tried regimen may be allocated only once its immediate
    predecessor in every declared chain has been tried."""
    if state.regimens[candidate - 1].ever_tried:
        return True
    for ordering in state.config.orderings:
        pos = ordering.position(candidate)
        if pos is None or pos == 0:
            continue
        pred = ordering.chain[pos - 1]
        if not state.regimens[pred - 1].ever_tried:
            return False
    return True


def assess_regimens(state: TrialState) -> tuple[RegimenAssessment, ...]:
    out = []
    for i in range(1, state.config.M + 1):
        tox_mode, eff_mode, delta = _modes_and_delta(state, i)
        out.append(RegimenAssessment(
            regimen=i,
            tox_mode=tox_mode,
            eff_mode=eff_mode,
            delta=delta,
            safe=_safe_flag(state, i),
            efficacious=_efficacious_flag(state, i),
            coherent=coherence_allowed(state, i),
            no_skip=no_skip_allowed(state, i),
        ))
    return tuple(out)


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------

def allocate_cohort(state: TrialState, regimen: int) -> int:
    """Open the next cohort at the given regimen; returns its 1-based index."""
    if state.terminated is not None:
        raise InvalidStateError("trial already terminated (%s)" % state.terminated)
    if state.patients_enrolled + state.config.c > state.config.N:
        raise InvalidStateError("patient budget exhausted")
    if not 1 <= regimen <= state.config.M:
        raise InvalidStateError("regimen %r outside 1..%d" % (regimen, state.config.M))
    if state.cohorts and state.cohorts[-1].tox_outcomes is None:
        raise InvalidStateError(
            "cohort %d has no toxicity outcomes yet" % state.cohorts[-1].index
        )
    state.clock += 1
    cohort = CohortRecord(
        index=len(state.cohorts) + 1,
        regimen=regimen,
        size=state.config.c,
        alloc_time=state.clock,
    )
    state.cohorts.append(cohort)
    state.regimens[regimen - 1].ever_tried = True
    return cohort.index


def record_cohort_toxicity(state: TrialState, cohort: int, outcomes) -> TrialState:
    """Record per-patient toxicity for an allocated cohort.

    Non-toxic patients join the regimen's pending-efficacy pool; toxic
    patients leave the protocol and never produce an efficacy outcome.
    """
    rec = _cohort_record(state, cohort)
    if rec.tox_outcomes is not None:
        raise DuplicateOutcomeError("cohort %d already has toxicity outcomes" % cohort)
    outcomes = [bool(o) for o in outcomes]
    if len(outcomes) != rec.size:
        raise InvalidStateError(
            "cohort %d has %d patients, got %d outcomes"
            % (cohort, rec.size, len(outcomes))
        )
    state.clock += 1
    rec.tox_outcomes = outcomes
    rec.tox_time = state.clock
    toxic = sum(outcomes)
    rec.pending = rec.size - toxic
    reg = state.regimens[rec.regimen - 1]
    reg.n_tox += rec.size
    reg.x_tox += toxic
    reg.pending_eff += rec.pending
    state.last_cohort = (rec.regimen, toxic)
    reg.check()
    return state


def record_efficacy(state: TrialState, cohort: int, outcomes) -> TrialState:
    """Resolve pending efficacy outcomes for (some of) a cohort's
    surviving patients.  Recording order across cohorts is unconstrained,
    so early efficacy information can be fed as soon as it exists."""
    outcomes = [bool(o) for o in outcomes]
    if not outcomes:
        return state
    rec = _cohort_record(state, cohort)
    if rec.tox_outcomes is None or len(outcomes) > rec.pending:
        raise UnknownPatientsError(
            "cohort %d has %d pending efficacy patients, got %d outcomes"
            % (cohort, rec.pending if rec.tox_outcomes is not None else 0, len(outcomes))
        )
    state.clock += 1
    rec.eff_events.append((state.clock, outcomes))
    rec.pending -= len(outcomes)
    reg = state.regimens[rec.regimen - 1]
    reg.n_eff += len(outcomes)
    reg.x_eff += sum(outcomes)
    reg.pending_eff -= len(outcomes)
    reg.check()
    return state


def _cohort_record(state: TrialState, cohort: int) -> CohortRecord:
    if not 1 <= cohort <= len(state.cohorts):
        raise UnknownPatientsError("no cohort %r allocated" % (cohort,))
    return state.cohorts[cohort - 1]


# ---------------------------------------------------------------------------
# allocation decisions
# ---------------------------------------------------------------------------

def randomization_weights(delta_hats, admissible) -> list[float]:
    """Inverse trade-off randomization over the two best candidates.

    delta_hats is a per-regimen list in regimen order; admissible the set
    of candidate 1-based indices.  The best candidate m and runner-up j
    share weight proportional to 1/delta; a zero trade-off takes weight 1
    outright; everything else gets 0.
    """
    candidates = sorted(admissible, key=lambda i: (delta_hats[i - 1], i))
    if not candidates:
        raise ValueError("no admissible regimen to randomize over")
    weights = [0.0] * len(delta_hats)
    best = candidates[0]
    if delta_hats[best - 1] == 0.0 or len(candidates) == 1:
        weights[best - 1] = 1.0
        return weights
    second = candidates[1]
    inv_m = 1.0 / delta_hats[best - 1]
    inv_j = 1.0 / delta_hats[second - 1]
    weights[best - 1] = inv_m / (inv_m + inv_j)
    weights[second - 1] = inv_j / (inv_m + inv_j)
    return weights


def _check_can_select(state: TrialState):
    if state.terminated is not None:
        raise InvalidStateError("trial already terminated (%s)" % state.terminated)
    if state.patients_enrolled >= state.config.N:
        raise InvalidStateError("patient budget exhausted")
    if state.cohorts and state.cohorts[-1].tox_outcomes is None:
        raise InvalidStateError(
            "cohort %d awaits toxicity outcomes" % state.cohorts[-1].index
        )


def _termination(state: TrialState, assessments) -> Decision:
    reachable_safe = [a for a in assessments if a.safe and a.coherent and a.no_skip]
    reason = "safety" if not reachable_safe else "futility"
    state.terminated = reason
    return Decision("terminate", None, reason,
                    DecisionTrace(assessments, chosen=None))


def select_next_cohort(state: TrialState) -> Decision:
    """Pick the next regimen under the non-randomized WE rule.

    Candidates must be admissible (safe and efficacious), coherent with
    the last cohort and allowed by the no-skip rule; ties in the
    trade-off break toward the lower position in the first declared
    ordering.  An empty candidate set terminates the trial: for safety
    when no structurally reachable regimen is safe, else for futility.
    """
    _check_can_select(state)
    assessments = assess_regimens(state)
    candidates = [a for a in assessments if a.allowed]
    if not candidates:
        return _termination(state, assessments)
    chosen = min(candidates, key=lambda a: (a.delta, state.config.tie_key(a.regimen)))
    return Decision("allocate", chosen.regimen, None,
                    DecisionTrace(assessments, chosen=chosen.regimen))


def select_next_cohort_randomized(state: TrialState, rng) -> Decision:
    """WE_R variant: draw the next regimen from the inverse trade-off
    weights over the filtered candidate set, consuming exactly one value
    from the random stream."""
    _check_can_select(state)
    assessments = assess_regimens(state)
    candidates = [a for a in assessments if a.allowed]
    if not candidates:
        return _termination(state, assessments)
    deltas = [a.delta for a in assessments]
    weights = randomization_weights(deltas, {a.regimen for a in candidates})
    u = rng.random()
    acc = 0.0
    chosen = candidates[0].regimen
    for i, w in enumerate(weights, start=1):
        if w <= 0.0:
            continue
        acc += w
        chosen = i
        if u < acc:
            break
    return Decision("allocate", chosen, None,
                    DecisionTrace(assessments, chosen=chosen, weights=tuple(weights)))


def select_cohort(state: TrialState, rng=None) -> Decision:
    """Dispatch on the configured allocation rule."""
    if state.config.rule == RULE_WE_R:
        if rng is None:
            raise InvalidStateError("rule WE_R needs a random stream")
        return select_next_cohort_randomized(state, rng)
    return select_next_cohort(state)


def final_recommendation(state: TrialState) -> int | None:
    """Recommendation after the budget is spent: the trade-off argmin over
    the regimens that were actually tried and still pass their safety and
    futility constraints at the final data.  By trial end the constraint
    schedules of the well-sampled regimens have tightened to their
    terminal levels zeta_N and xi_N.  Coherence does not apply here (it
    restrains the treatment of a next cohort, and there is none), nor are
    untried regimens recommendable.  Terminated trials, and trials whose
    final candidate set is empty, yield no recommendation.  The randomized
    rule also recommends the argmin, never a draw."""
    if state.terminated is not None:
        return None
    if state.patients_enrolled < state.config.N:
        raise InvalidStateError("trial still mid-flight")
    candidates = [
        a for a in assess_regimens(state)
        if a.safe and a.efficacious and state.regimens[a.regimen - 1].ever_tried
    ]
    if not candidates:
        return None
    chosen = min(candidates, key=lambda a: (a.delta, state.config.tie_key(a.regimen)))
    return chosen.regimen


def is_exhausted(state: TrialState) -> bool:
    return state.patients_enrolled >= state.config.N
