"""Grid-search calibration of design parameters.

Prior calibration sweeps linear prior families
nu_{t,i} = start_t + w_t*(i-1), nu_{e,i} = start_e + w_e*(i-1) and
maximizes the geometric mean, over a set of scenarios, of the proportion
of trials recommending each scenario's optimal regimen.  Constraint
calibration sweeps (threshold, rate) pairs of the safety or futility
schedule over two opposing scenarios and reports the resulting surfaces
for a human trade-off choice; it deliberately returns no argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import product

from .engine import ConfigError, FutilitySchedule, SafetySchedule, TrialConfig
from .scenarios import Scenario, evaluate_scenario
from .simulate import run_replications
from .tradeoff import BetaPrior

__all__ = [
    "CalibrationGrid",
    "PriorCalibrationResult",
    "prior_family",
    "calibrate_priors",
    "calibrate_constraint",
    "calibration_csv_rows",
    "CALIBRATION_CSV_HEADER",
]


@dataclass(frozen=True)
class CalibrationGrid:
    """Named parameter axes with their candidate values, plus a tag naming
    the objective the sweep is for."""

    axes: dict[str, tuple[float, ...]]
    objective: str = ""

    def __post_init__(self):
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("calibration grid needs nonempty axes")

    def points(self):
        names = list(self.axes)
        for combo in product(*(self.axes[n] for n in names)):
            yield dict(zip(names, combo))


def prior_family(start: float, w: float, M: int, beta: float = 1.0):
    """Linear prior family: event weight start + w*(i-1) for regimen i."""
    return tuple(BetaPrior(nu=start + w * (i - 1), beta=beta) for i in range(1, M + 1))


def _with_priors(config: TrialConfig, point) -> TrialConfig:
    return replace(
        config,
        tox_priors=prior_family(point["start_t"], point["w_t"], config.M),
        eff_priors=prior_family(point["start_e"], point["w_e"], config.M),
    )


@dataclass(frozen=True)
class PriorCalibrationResult:
    best: dict
    best_objective: float
    surface: tuple[dict, ...]


def calibrate_priors(grid: CalibrationGrid, scenarios, config_template: TrialConfig,
                     R: int, base_seed: int = 0, lanes: int = 1) -> PriorCalibrationResult:
    """Sweep the prior grid and maximize the geometric mean of optimal
    recommendation proportions across scenarios.

    Grid points whose priors violate the engine preconditions (event
    weight outside (0, beta), or prior means not increasing along the
    declared chains) are kept in the surface as infeasible.  A zero
    proportion in any scenario annihilates the geometric mean.
    """
    scenarios = list(scenarios)
    optima = []
    for sc in scenarios:
        ev = evaluate_scenario(sc)
        if ev.optimal is None:
            raise ValueError("scenario %r has no optimal regimen" % (sc.name,))
        optima.append(ev.optimal)
    surface = []
    best = None
    best_objective = -1.0
    for point in grid.points():
        try:
            config = _with_priors(config_template, point)
        except (ConfigError, ValueError) as err:
            surface.append({**point, "feasible": False, "objective": None,
                            "detail": str(err)})
            continue
        props = []
        for sc, opt in zip(scenarios, optima):
            oc = run_replications(config, sc, R, base_seed, lanes=lanes)
            props.append(oc.rec_counts[opt - 1] / oc.R)
        if any(p == 0.0 for p in props):
            objective = 0.0
        else:
            objective = math.exp(sum(math.log(p) for p in props) / len(props))
        surface.append({**point, "feasible": True, "objective": objective,
                        "proportions": tuple(props)})
        if objective > best_objective:
            best, best_objective = point, objective
    if best is None:
        raise ValueError("every grid point was infeasible")
    return PriorCalibrationResult(best=best, best_objective=best_objective,
                                  surface=tuple(surface))


def _with_constraint(config: TrialConfig, kind: str, threshold: float,
                     rate: float) -> TrialConfig:
    if kind == "safety":
        return replace(config, safety=SafetySchedule(
            phi_star=threshold, zeta_N=config.safety.zeta_N, r_t=rate))
    if kind == "futility":
        return replace(config, futility=FutilitySchedule(
            psi_star=threshold, xi_N=config.futility.xi_N, r_e=rate))
    raise ValueError("constraint kind must be 'safety' or 'futility', got %r" % (kind,))


def calibrate_constraint(grid: CalibrationGrid, kind: str, scenario_pair,
                         config: TrialConfig, R: int, base_seed: int = 0,
                         lanes: int = 1):
    """Sweep (threshold, rate) for one constraint over two opposing
    scenarios; per grid point and scenario, report the correct
    recommendation proportion, the termination proportion and the mean
    number of patients.  The trade-off pick is left to the caller."""
    if set(grid.axes) != {"threshold", "rate"}:
        raise ValueError("constraint grid needs exactly the axes 'threshold' and 'rate'")
    scenario_pair = tuple(scenario_pair)
    if len(scenario_pair) != 2:
        raise ValueError("need exactly two opposing scenarios")
    correct_sets = [evaluate_scenario(sc).correct for sc in scenario_pair]
    rows = []
    for point in grid.points():
        cfg = _with_constraint(config, kind, point["threshold"], point["rate"])
        entry = {"threshold": point["threshold"], "rate": point["rate"]}
        for sc, correct in zip(scenario_pair, correct_sets):
            oc = run_replications(cfg, sc, R, base_seed, lanes=lanes)
            prop_correct = sum(oc.rec_counts[i - 1] for i in correct) / oc.R
            entry[sc.name] = {
                "correct": prop_correct,
                "termination": oc.none_count / oc.R,
                "mean_patients": sum(oc.patient_totals) / oc.R,
            }
        rows.append(entry)
    return rows


CALIBRATION_CSV_HEADER = ("scenario", "threshold", "rate", "metric", "value")


def calibration_csv_rows(rows, scenario_names):
    """Long-format rows (scenario, threshold, rate, metric, value) ready
    for external plotting."""
    out = []
    for entry in rows:
        for name in scenario_names:
            metrics = entry[name]
            for metric in ("correct", "termination", "mean_patients"):
                out.append((name, entry["threshold"], entry["rate"],
                            metric, "%.6f" % metrics[metric]))
    return out
