"""Command-line interface: batch simulation, calibration sweeps, an
interactive conduct loop over a session file, and the HTTP service.

Failures exit nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .calibrate import (
    CALIBRATION_CSV_HEADER,
    CalibrationGrid,
    calibrate_constraint,
    calibrate_priors,
    calibration_csv_rows,
)
from .scenarios import scenario_from_json
from .service import (
    STORE_ENV_VAR,
    ServiceError,
    SessionStore,
    TrialSession,
    config_from_dict,
    serve,
)
from .simulate import (
    OC_CSV_HEADER,
    equal_allocation_comparator,
    oc_csv_rows,
    run_replications,
    write_oc_csv,
)


class CliError(Exception):
    def __init__(self, code, message, details=None):
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("missing_file", "%s file %r not found" % (what, path))
    except json.JSONDecodeError as err:
        raise CliError("invalid_json", "%s file %r is not valid JSON" % (what, path),
                       {"error": str(err)})


def _load_config(path):
    try:
        return config_from_dict(_load_json(path, "config"))
    except ServiceError as err:
        raise CliError(err.code, err.message, err.details)


def _load_scenario(path):
    try:
        with open(path) as fh:
            return scenario_from_json(fh.read())
    except FileNotFoundError:
        raise CliError("missing_file", "scenario file %r not found" % path)
    except (json.JSONDecodeError, KeyError, ValueError) as err:
        raise CliError("invalid_scenario", "scenario file %r rejected" % path,
                       {"error": str(err)})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    config = _load_config(args.config)
    scenario = _load_scenario(args.scenario)
    if args.equal_allocation:
        result = equal_allocation_comparator(config, scenario, args.reps,
                                             args.seed, lanes=args.lanes)
        oc = result.filtered if args.terminal_filter else result.unfiltered
    else:
        oc = run_replications(config, scenario, args.reps, args.seed,
                              lanes=args.lanes)
    write_oc_csv(oc, args.out)
    print("wrote %s (R=%d, seed=%d)" % (args.out, oc.R, oc.base_seed))


def cmd_calibrate(args):
    config = _load_config(args.config)
    grid_doc = _load_json(args.grid, "grid")
    if args.kind == "priors":
        grid = CalibrationGrid(
            axes={k: tuple(grid_doc[k]) for k in ("start_t", "w_t", "start_e", "w_e")},
            objective="geometric-mean-optimal")
        scenarios = [_load_scenario(p) for p in args.scenarios]
        result = calibrate_priors(grid, scenarios, config, args.reps,
                                  base_seed=args.seed, lanes=args.lanes)
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("start_t", "w_t", "start_e", "w_e",
                             "feasible", "objective"))
            for row in result.surface:
                writer.writerow((row["start_t"], row["w_t"], row["start_e"],
                                 row["w_e"], row["feasible"],
                                 "" if row["objective"] is None
                                 else "%.6f" % row["objective"]))
        print("best point: %s (objective %.4f); surface in %s"
              % (json.dumps(result.best), result.best_objective, args.out))
    else:
        if len(args.scenarios) != 2:
            raise CliError("invalid_arguments",
                           "constraint calibration needs exactly two scenarios")
        grid = CalibrationGrid(
            axes={"threshold": tuple(grid_doc["threshold"]),
                  "rate": tuple(grid_doc["rate"])},
            objective=args.kind)
        pair = [_load_scenario(p) for p in args.scenarios]
        rows = calibrate_constraint(grid, args.kind, pair, config, args.reps,
                                    base_seed=args.seed, lanes=args.lanes)
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CALIBRATION_CSV_HEADER)
            writer.writerows(calibration_csv_rows(rows, [s.name for s in pair]))
        print("wrote %d grid points to %s" % (len(rows), args.out))


def cmd_conduct(args):
    store = SessionStore(args.store)
    if args.new:
        session = TrialSession.create(_load_config(args.new))
        session.recommendation()
        store.save(session)
        print("created session %s" % session.id)
    elif args.session:
        session = store.load(args.session)
    else:
        raise CliError("invalid_arguments", "need --session ID or --new CONFIG")
    _conduct_loop(store, session)


def _conduct_loop(store, session):
    print("conducting trial %s (enter 'q' to quit)" % session.id)
    while True:
        rec = session.recommendation()
        store.save(session)
        _print_trace(rec)
        if rec["kind"] == "terminate":
            print("trial terminated: %s" % rec["reason"])
            return
        if rec["kind"] == "final":
            print("final recommendation: %s"
                  % ("regimen %d" % rec["regimen"] if rec["regimen"] else "none"))
            return
        print("next cohort -> regimen %d" % rec["regimen"])
        line = input("outcomes as '<cohort> <t|e> <0/1 per patient>' "
                     "(e.g. '1 t 01'), or q: ").strip()
        if line.lower() in ("q", "quit", "exit"):
            return
        try:
            cohort_str, endpoint, bits = line.split()
            outcomes = [ch == "1" for ch in bits]
            endpoint = {"t": "toxicity", "e": "efficacy"}[endpoint]
            session.post_outcomes(int(cohort_str), endpoint, outcomes,
                                  expected_revision=session.revision)
            store.save(session)
        except (ValueError, KeyError):
            print("could not parse %r" % line)
        except ServiceError as err:
            print("rejected: %s" % err.message)


def _print_trace(rec):
    print(" reg   tox_mode  eff_mode     delta  safe eff coh skip")
    for a in rec["trace"]["assessments"]:
        print(" %3d   %8.4f  %8.4f  %8.4f  %4s %3s %3s %4s"
              % (a["regimen"], a["tox_mode"], a["eff_mode"], a["delta"],
                 "y" if a["safe"] else "N", "y" if a["efficacious"] else "N",
                 "y" if a["coherent"] else "N", "y" if a["no_skip"] else "N"))


def cmd_serve(args):
    serve(args.addr, args.store)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="wetrial",
        description="weighted-entropy regimen-finding trials: simulate, "
                    "calibrate, conduct, serve")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo operating characteristics")
    sim.add_argument("--config", required=True)
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--reps", type=int, default=10_000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--lanes", type=int, default=1)
    sim.add_argument("--equal-allocation", action="store_true",
                     help="non-adaptive comparator instead of the design")
    sim.add_argument("--terminal-filter", action="store_true",
                     help="with --equal-allocation, apply terminal constraints")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="grid-search design parameters")
    cal.add_argument("--kind", choices=("priors", "safety", "futility"),
                     required=True)
    cal.add_argument("--grid", required=True)
    cal.add_argument("--config", required=True)
    cal.add_argument("--scenarios", nargs="+", required=True)
    cal.add_argument("--reps", type=int, default=1000)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", required=True)
    cal.add_argument("--lanes", type=int, default=1)
    cal.set_defaults(func=cmd_calibrate)

    con = sub.add_parser("conduct", help="interactive conduct loop")
    con.add_argument("--store", default=os.environ.get(STORE_ENV_VAR))
    con.add_argument("--session")
    con.add_argument("--new", metavar="CONFIG",
                     help="create a session from a config file")
    con.set_defaults(func=cmd_conduct)

    srv = sub.add_parser("serve", help="run the HTTP JSON API")
    srv.add_argument("--addr", default="127.0.0.1:8710")
    srv.add_argument("--store", default=os.environ.get(STORE_ENV_VAR))
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as err:
        json.dump({"code": err.code, "message": err.message,
                   "details": err.details}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except ServiceError as err:
        json.dump(err.body(), sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
