"""Ready-made trial configurations for the two benchmark settings.

The combination-schedule ("motivating") setting has six regimens built
from two treatment cycles, 36 patients in cohorts of two, and three known
partial toxicity orderings (the middle regimens cannot be ranked).  The
single-agent setting has six monotonically ordered doses, 60 patients in
cohorts of three.  Prior event weights and constraint schedules carry the
calibrated values used throughout the benchmark studies.
"""

from __future__ import annotations

from .engine import (
    FutilitySchedule,
    PartialOrdering,
    SafetySchedule,
    TrialConfig,
)
from .tradeoff import BetaPrior, TradeoffTargets

__all__ = [
    "MOTIVATING_CHAINS",
    "SINGLE_AGENT_CHAIN",
    "motivating_config",
    "illustration_config",
    "single_agent_config",
]

# T1 <= T2 <= {T3 | T4 | T5} <= T6 in toxicity; the middle three regimens
# are not comparable with each other.
MOTIVATING_CHAINS = (
    PartialOrdering((1, 2, 3, 6)),
    PartialOrdering((1, 2, 4, 6)),
    PartialOrdering((1, 2, 5, 6)),
)

SINGLE_AGENT_CHAIN = (PartialOrdering((1, 2, 3, 4, 5, 6)),)


def _priors(means, beta=1.0):
    return tuple(BetaPrior(nu=m * beta, beta=beta) for m in means)


def motivating_config(rule="WE", rng_seed=0) -> TrialConfig:
    """Calibrated configuration of the combination-schedule trial."""
    return TrialConfig(
        M=6,
        N=36,
        c=2,
        targets=TradeoffTargets(gamma_t=0.01, gamma_e=0.99),
        tox_priors=_priors([0.10, 0.14, 0.18, 0.22, 0.26, 0.30]),
        eff_priors=_priors([0.60, 0.62, 0.64, 0.66, 0.68, 0.70]),
        orderings=MOTIVATING_CHAINS,
        q=1,
        safety=SafetySchedule(phi_star=0.40, zeta_N=0.30, r_t=0.02),
        futility=FutilitySchedule(psi_star=0.35, xi_N=0.50, r_e=0.05),
        rule=rule,
        rng_seed=rng_seed,
    )


def illustration_config(rule="WE", rng_seed=0) -> TrialConfig:
    """Motivating trial with the steeper walkthrough priors instead of the
    calibrated ones; constraints as in `motivating_config`."""
    cfg = motivating_config(rule=rule, rng_seed=rng_seed)
    return TrialConfig(
        M=cfg.M,
        N=cfg.N,
        c=cfg.c,
        targets=cfg.targets,
        tox_priors=_priors([0.10, 0.175, 0.25, 0.325, 0.40, 0.475]),
        eff_priors=_priors([0.60, 0.65, 0.70, 0.75, 0.80, 0.85]),
        orderings=cfg.orderings,
        q=cfg.q,
        safety=cfg.safety,
        futility=cfg.futility,
        rule=rule,
        rng_seed=rng_seed,
    )


def single_agent_config(rule="WE", rng_seed=0) -> TrialConfig:
    """Calibrated configuration of the single-agent dose-finding trial.

    The prior point estimates differ by allocation rule: the randomized
    variant tolerates (and benefits from) a steeper prior.
    """
    if rule == "WE_R":
        tox_means = [0.25, 0.35, 0.45, 0.55, 0.65, 0.75]
        eff_means = [0.65, 0.69, 0.73, 0.77, 0.81, 0.85]
    else:
        tox_means = [0.05, 0.14, 0.23, 0.32, 0.41, 0.50]
        eff_means = [0.55, 0.58, 0.61, 0.64, 0.67, 0.70]
    return TrialConfig(
        M=6,
        N=60,
        c=3,
        targets=TradeoffTargets(gamma_t=0.01, gamma_e=0.99),
        tox_priors=_priors(tox_means),
        eff_priors=_priors(eff_means),
        orderings=SINGLE_AGENT_CHAIN,
        q=1,
        safety=SafetySchedule(phi_star=0.40, zeta_N=0.30, r_t=0.0125),
        futility=FutilitySchedule(psi_star=0.30, xi_N=0.50, r_e=0.05),
        rule=rule,
        rng_seed=rng_seed,
    )
