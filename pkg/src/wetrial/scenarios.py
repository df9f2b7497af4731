"""Simulation scenarios: true outcome probabilities, evaluation of which
regimens count as optimal/correct, toxicity-ordering permutations, and the
bundled scenario fixtures used by the calibration and benchmark studies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

__all__ = [
    "Scenario",
    "ScenarioEvaluation",
    "evaluate_scenario",
    "permute_scenario",
    "TOXICITY_ORDERINGS",
    "SINGLE_AGENT_SCENARIOS",
    "ILLUSTRATION_SCENARIO",
    "scenario_to_json",
    "scenario_from_json",
]


@dataclass(frozen=True)
class Scenario:
    """True per-regimen toxicity/efficacy probabilities plus the outcome
    correlation and the bounds that define optimal/correct regimens.

    pi_early is the probability that an eventual `no efficacy` outcome is
    already observable when the patient's toxicity is evaluated.
    """

    name: str
    alpha_t: tuple[float, ...]
    alpha_e: tuple[float, ...]
    rho: float = 0.0
    phi_bound: float = 0.35
    psi_bound: float = 0.20
    pi_early: float = 0.0

    def __post_init__(self):
        if len(self.alpha_t) != len(self.alpha_e):
            raise ValueError("alpha_t and alpha_e must have equal length")
        for p in (*self.alpha_t, *self.alpha_e, self.phi_bound, self.psi_bound,
                  self.pi_early):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probability %r outside [0, 1]" % (p,))
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("correlation %r outside [-1, 1]" % (self.rho,))

    @property
    def M(self) -> int:
        return len(self.alpha_t)

    def with_rho(self, rho: float) -> "Scenario":
        return Scenario(self.name, self.alpha_t, self.alpha_e, rho,
                        self.phi_bound, self.psi_bound, self.pi_early)

    def with_pi_early(self, pi_early: float) -> "Scenario":
        return Scenario(self.name, self.alpha_t, self.alpha_e, self.rho,
                        self.phi_bound, self.psi_bound, pi_early)


@dataclass(frozen=True)
class ScenarioEvaluation:
    """The regimens a simulated design should find: `correct` regimens are
    safe and attain the maximum efficacy among safe regimens (provided it
    clears the efficacy bound); the `optimal` regimen additionally has the
    lowest toxicity among the correct ones."""

    optimal: int | None
    correct: frozenset[int] = field(default_factory=frozenset)


def evaluate_scenario(scenario: Scenario) -> ScenarioEvaluation:
    """Exhaustive evaluation of the correct set and the optimal regimen."""
    safe = [i for i in range(1, scenario.M + 1)
            if scenario.alpha_t[i - 1] <= scenario.phi_bound]
    if not safe:
        return ScenarioEvaluation(optimal=None)
    top_eff = max(scenario.alpha_e[i - 1] for i in safe)
    if top_eff <= scenario.psi_bound:
        return ScenarioEvaluation(optimal=None)
    correct = [i for i in safe if scenario.alpha_e[i - 1] == top_eff]
    optimal = min(correct, key=lambda i: (scenario.alpha_t[i - 1], i))
    return ScenarioEvaluation(optimal=optimal, correct=frozenset(correct))


# The six ways six regimens can be ordered by increasing toxicity when the
# middle three cannot be ranked beforehand: positions 1, 2 and 6 are fixed
# and regimens 3, 4, 5 permute.
TOXICITY_ORDERINGS = (
    (1, 2, 3, 4, 5, 6),
    (1, 2, 3, 5, 4, 6),
    (1, 2, 4, 3, 5, 6),
    (1, 2, 4, 5, 3, 6),
    (1, 2, 5, 3, 4, 6),
    (1, 2, 5, 4, 3, 6),
)


def permute_scenario(scenario: Scenario, toxicity_ordering) -> Scenario:
    """Reassign the scenario's (toxicity, efficacy) pairs according to a
    toxicity ordering that fixes positions 1, 2 and 6 and permutes
    {3, 4, 5}.  Entry k of the ordering names the regimen receiving the
    k-th smallest toxicity pair."""
    ordering = tuple(toxicity_ordering)
    if (len(ordering) != scenario.M or sorted(ordering) != list(range(1, scenario.M + 1))
            or ordering[0] != 1 or ordering[1] != 2 or ordering[-1] != scenario.M
            or set(ordering[2:5]) != {3, 4, 5}):
        raise ValueError(
            "ordering %r must fix positions 1, 2 and %d and permute {3, 4, 5}"
            % (ordering, scenario.M)
        )
    alpha_t = [0.0] * scenario.M
    alpha_e = [0.0] * scenario.M
    for rank, regimen in enumerate(ordering):
        alpha_t[regimen - 1] = scenario.alpha_t[rank]
        alpha_e[regimen - 1] = scenario.alpha_e[rank]
    return Scenario(
        name="%s/ordering=%s" % (scenario.name, "".join(map(str, ordering))),
        alpha_t=tuple(alpha_t),
        alpha_e=tuple(alpha_e),
        rho=scenario.rho,
        phi_bound=scenario.phi_bound,
        psi_bound=scenario.psi_bound,
        pi_early=scenario.pi_early,
    )


def _sc(name, pairs):
    return Scenario(
        name=name,
        alpha_t=tuple(t for t, _ in pairs),
        alpha_e=tuple(e for _, e in pairs),
    )


# Benchmark fixtures: eight plateau dose-efficacy shapes (1-8), four
# umbrella shapes (9-12), one scenario with no efficacious safe dose (13)
# and one with no safe dose at all (14).
SINGLE_AGENT_SCENARIOS = {
    1: _sc("scenario-1", [(.005, .01), (.01, .10), (.02, .30), (.05, .50), (.10, .80), (.15, .80)]),
    2: _sc("scenario-2", [(.01, .40), (.04, .40), (.10, .40), (.25, .40), (.50, .40), (.70, .40)]),
    3: _sc("scenario-3", [(.01, .25), (.02, .45), (.05, .65), (.10, .65), (.20, .65), (.30, .65)]),
    4: _sc("scenario-4", [(.01, .05), (.02, .25), (.05, .45), (.10, .70), (.25, .70), (.50, .70)]),
    5: _sc("scenario-5", [(.01, .10), (.05, .35), (.15, .60), (.20, .60), (.45, .60), (.60, .60)]),
    6: _sc("scenario-6", [(.01, .05), (.05, .10), (.10, .20), (.20, .35), (.30, .55), (.50, .55)]),
    7: _sc("scenario-7", [(.02, .30), (.07, .50), (.13, .70), (.17, .73), (.25, .76), (.30, .77)]),
    8: _sc("scenario-8", [(.03, .30), (.06, .50), (.10, .52), (.20, .54), (.40, .55), (.50, .55)]),
    9: _sc("scenario-9", [(.01, .30), (.05, .50), (.10, .60), (.15, .40), (.20, .25), (.25, .15)]),
    10: _sc("scenario-10", [(.02, .38), (.06, .50), (.12, .40), (.30, .30), (.40, .25), (.50, .20)]),
    11: _sc("scenario-11", [(.03, .25), (.09, .35), (.16, .48), (.28, .65), (.42, .52), (.56, .39)]),
    12: _sc("scenario-12", [(.02, .68), (.05, .56), (.07, .49), (.09, .40), (.11, .33), (.13, .26)]),
    13: _sc("scenario-13", [(.05, .01), (.10, .02), (.25, .05), (.55, .35), (.70, .55), (.90, .70)]),
    14: _sc("scenario-14", [(.50, .40), (.60, .55), (.69, .65), (.76, .65), (.82, .65), (.89, .65)]),
}


# Motivating combination-schedule trial: plateau efficacy from T3 on, with
# T3 actually more toxic than T4 and T5.
ILLUSTRATION_SCENARIO = Scenario(
    name="illustration",
    alpha_t=(.05, .10, .45, .15, .30, .55),
    alpha_e=(.10, .40, .70, .70, .70, .70),
)


# ---------------------------------------------------------------------------
# JSON scenario files
# ---------------------------------------------------------------------------

def scenario_to_json(scenario: Scenario) -> str:
    doc = asdict(scenario)
    doc["alpha_t"] = list(scenario.alpha_t)
    doc["alpha_e"] = list(scenario.alpha_e)
    return json.dumps(doc, indent=2)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    return Scenario(
        name=doc["name"],
        alpha_t=tuple(doc["alpha_t"]),
        alpha_e=tuple(doc["alpha_e"]),
        rho=doc.get("rho", 0.0),
        phi_bound=doc.get("phi_bound", 0.35),
        psi_bound=doc.get("psi_bound", 0.20),
        pi_early=doc.get("pi_early", 0.0),
    )
