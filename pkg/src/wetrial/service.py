"""Persistence and HTTP API for live trial conduct.

A session is event-sourced: the stored document holds the trial
configuration, an append-only audit log of allocations and outcome
recordings, and a state snapshot that must equal the replay of the log
(verified on every load).  Termination and recommendations are derived
views, never events; the one persisted decision artifact is the
randomized rule's draw for a pending cohort, stored at first read so a
coordinator's recommendation cannot silently change between reading it
and acting on it.

Writes are serialized per session through an optimistic revision counter:
a stale revision is rejected loudly (a trial has exactly one legitimate
writer, so a conflict means operator error).

The HTTP surface is JSON over five routes:

    POST /trials                        create a session from a config
    GET  /trials/{id}                   full session view
    GET  /trials/{id}/recommendation    next-cohort recommendation + trace
    POST /trials/{id}/outcomes          record toxicity/efficacy outcomes
    POST /trials/{id}/whatif            preview a hypothetical recommendation

Errors are {"code", "message", "details"} with 400 (validation), 404
(unknown session), 409 (revision conflict) or 422 (engine rejection).
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .engine import (
    ConfigError,
    Decision,
    DecisionTrace,
    FutilitySchedule,
    PartialOrdering,
    RULE_WE_R,
    SafetySchedule,
    TrialConfig,
    TrialError,
    TrialState,
    allocate_cohort,
    final_recommendation,
    randomization_weights,
    record_cohort_toxicity,
    record_efficacy,
    assess_regimens,
    select_next_cohort,
)
from .tradeoff import BetaPrior, TradeoffTargets

__all__ = [
    "ServiceError",
    "SessionStore",
    "TrialSession",
    "config_to_dict",
    "config_from_dict",
    "trace_to_dict",
    "wsgi_app",
    "serve",
    "STORE_ENV_VAR",
]

STORE_ENV_VAR = "WETRIAL_STORE"


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, details=None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)

    def body(self) -> dict:
        return {"code": self.code, "message": self.message, "details": self.details}


# ---------------------------------------------------------------------------
# config codec (field-for-field mirror of TrialConfig)
# ---------------------------------------------------------------------------

def config_to_dict(config: TrialConfig) -> dict:
    return {
        "M": config.M,
        "N": config.N,
        "c": config.c,
        "targets": {"gamma_t": config.targets.gamma_t,
                    "gamma_e": config.targets.gamma_e},
        "tox_priors": [{"nu": p.nu, "beta": p.beta} for p in config.tox_priors],
        "eff_priors": [{"nu": p.nu, "beta": p.beta} for p in config.eff_priors],
        "orderings": [list(o.chain) for o in config.orderings],
        "q": config.q,
        "safety": {"phi_star": config.safety.phi_star,
                   "zeta_N": config.safety.zeta_N, "r_t": config.safety.r_t},
        "futility": {"psi_star": config.futility.psi_star,
                     "xi_N": config.futility.xi_N, "r_e": config.futility.r_e},
        "rule": config.rule,
        "rng_seed": config.rng_seed,
    }


def config_from_dict(doc: dict) -> TrialConfig:
    """Build a TrialConfig from its JSON form, reporting every violated
    invariant at once."""
    problems = []

    def grab(key, kind, default=None):
        if key not in doc:
            if default is not None:
                return default
            problems.append("missing field %r" % key)
            return None
        return doc[key]

    try:
        targets_doc = doc.get("targets", {})
        targets = TradeoffTargets(targets_doc.get("gamma_t", -1.0),
                                  targets_doc.get("gamma_e", -1.0))
    except (ValueError, TypeError, AttributeError) as err:
        problems.append("targets: %s" % err)
        targets = TradeoffTargets(0.5, 0.5)

    def priors(key):
        out = []
        for i, p in enumerate(doc.get(key, []) or []):
            try:
                out.append(BetaPrior(p["nu"], p["beta"]))
            except (ValueError, TypeError, KeyError) as err:
                problems.append("%s[%d]: %s" % (key, i, err))
                out.append(BetaPrior(0.25, 1.0))
        return tuple(out)

    tox_priors = priors("tox_priors")
    eff_priors = priors("eff_priors")
    orderings = tuple(
        PartialOrdering(tuple(int(i) for i in chain))
        for chain in doc.get("orderings", [])
    )
    try:
        safety_doc = doc.get("safety", {})
        safety = SafetySchedule(safety_doc["phi_star"], safety_doc["zeta_N"],
                                safety_doc["r_t"])
        futility_doc = doc.get("futility", {})
        futility = FutilitySchedule(futility_doc["psi_star"], futility_doc["xi_N"],
                                    futility_doc["r_e"])
    except (KeyError, TypeError) as err:
        problems.append("constraint schedules: missing %s" % err)
        safety = SafetySchedule(0.4, 0.3, 0.0)
        futility = FutilitySchedule(0.2, 0.5, 0.0)
    if problems:
        raise ServiceError(400, "invalid_config", "configuration rejected",
                           {"violations": problems})
    try:
        return TrialConfig(
            M=int(grab("M", int) or 0),
            N=int(grab("N", int) or 0),
            c=int(grab("c", int) or 0),
            targets=targets,
            tox_priors=tox_priors,
            eff_priors=eff_priors,
            orderings=orderings,
            q=int(doc.get("q", 1)),
            safety=safety,
            futility=futility,
            rule=doc.get("rule", "WE"),
            rng_seed=int(doc.get("rng_seed", 0)),
        )
    except ConfigError as err:
        raise ServiceError(400, "invalid_config", "configuration rejected",
                           {"violations": err.violations})
    except (TypeError, ValueError) as err:
        raise ServiceError(400, "invalid_config", "configuration rejected",
                           {"violations": [str(err)]})


def trace_to_dict(trace: DecisionTrace) -> dict:
    return {
        "assessments": [asdict(a) for a in trace.assessments],
        "chosen": trace.chosen,
        "weights": list(trace.weights) if trace.weights is not None else None,
    }


# ---------------------------------------------------------------------------
# session
# ---------------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _draw_value(rng_seed: int, cohort: int) -> float:
    """Deterministic uniform for the randomized rule's draw for a cohort;
    reproducible from the config seed alone."""
    return float(np.random.default_rng(np.random.SeedSequence((rng_seed, cohort))).random())


@dataclass
class TrialSession:
    """One live trial: configuration, event log, folded state, revision."""

    id: str
    config: TrialConfig
    state: TrialState
    events: list = field(default_factory=list)
    revision: int = 0

    # -- construction and replay ------------------------------------------

    @classmethod
    def create(cls, config: TrialConfig) -> "TrialSession":
        return cls(id=uuid.uuid4().hex, config=config, state=TrialState(config))

    @staticmethod
    def fold(config: TrialConfig, events) -> TrialState:
        """Replay the audit log into a fresh state."""
        state = TrialState(config)
        for event in events:
            kind = event["type"]
            if kind == "allocate":
                allocated = allocate_cohort(state, event["regimen"])
                if allocated != event["cohort"]:
                    raise ServiceError(500, "corrupt_session",
                                       "allocation replay out of order")
            elif kind == "toxicity":
                record_cohort_toxicity(state, event["cohort"], event["outcomes"])
            elif kind == "efficacy":
                record_efficacy(state, event["cohort"], event["outcomes"])
            elif kind == "draw":
                pass   # draws affect future decisions, not the data fold
            else:
                raise ServiceError(500, "corrupt_session",
                                   "unknown audit event %r" % (kind,))
        return state

    def _append(self, event: dict):
        event["at"] = _now()
        self.events.append(event)

    # -- derived views -----------------------------------------------------

    @property
    def next_cohort(self) -> int:
        return len(self.state.cohorts) + 1

    def _pending_draw(self):
        for event in reversed(self.events):
            if event["type"] == "draw" and event["cohort"] == self.next_cohort:
                return event
        return None

    def _decide(self, state: TrialState) -> Decision:
        """Allocation decision for the pending cohort on a scratch state;
        for the randomized rule the single uniform consumed is the
        deterministic per-cohort draw value."""
        if self.config.rule == RULE_WE_R:
            cohort = len(state.cohorts) + 1
            u = _draw_value(self.config.rng_seed, cohort)

            class _FixedDraw:
                def random(self_inner):
                    return u

            from .engine import select_next_cohort_randomized
            return select_next_cohort_randomized(state, _FixedDraw())
        return select_next_cohort(state)

    def recommendation(self, persist_draw=True) -> dict:
        """Current recommendation with its full decision trace.  Repeated
        reads return identical answers; the randomized rule's draw is
        persisted on first read."""
        state = self.state
        if state.terminated is not None:
            return {"kind": "terminate", "reason": state.terminated,
                    "regimen": None, "weights": None,
                    "trace": trace_to_dict(DecisionTrace(assess_regimens(state), None))}
        if state.patients_enrolled >= self.config.N:
            regimen = final_recommendation(state)
            return {"kind": "final", "regimen": regimen, "weights": None,
                    "reason": None,
                    "trace": trace_to_dict(DecisionTrace(assess_regimens(state), regimen))}
        decision = self._decide(state.clone())
        if decision.kind == "terminate":
            return {"kind": "terminate", "reason": decision.reason, "regimen": None,
                    "weights": None, "trace": trace_to_dict(decision.trace)}
        if self.config.rule == RULE_WE_R and persist_draw and self._pending_draw() is None:
            self._append({"type": "draw", "cohort": self.next_cohort,
                          "regimen": decision.regimen})
            self.revision += 1
        return {"kind": "allocate", "regimen": decision.regimen, "reason": None,
                "weights": (list(decision.trace.weights)
                            if decision.trace.weights is not None else None),
                "trace": trace_to_dict(decision.trace)}

    # -- writes --------------------------------------------------------------

    def post_outcomes(self, cohort: int, endpoint: str, outcomes,
                      expected_revision: int) -> dict:
        if expected_revision != self.revision:
            raise ServiceError(409, "revision_conflict",
                               "expected revision %r but session is at %r"
                               % (expected_revision, self.revision))
        if endpoint not in ("toxicity", "efficacy"):
            raise ServiceError(422, "invalid_endpoint",
                               "endpoint must be toxicity or efficacy, got %r"
                               % (endpoint,))
        if not isinstance(outcomes, (list, tuple)) or not all(
                isinstance(o, bool) for o in outcomes):
            raise ServiceError(422, "invalid_outcomes",
                               "outcomes must be a list of booleans")
        outcomes = list(outcomes)
        try:
            if endpoint == "toxicity":
                self._post_toxicity(cohort, outcomes)
            else:
                record_efficacy(self.state, cohort, outcomes)
                if outcomes:
                    self._append({"type": "efficacy", "cohort": cohort,
                                  "outcomes": outcomes})
        except TrialError as err:
            raise ServiceError(422, "engine_rejected", str(err))
        self.revision += 1
        return self.recommendation()

    def _post_toxicity(self, cohort: int, outcomes):
        if cohort != self.next_cohort:
            # toxicity for an existing cohort duplicates; beyond-next is malformed
            if 1 <= cohort <= len(self.state.cohorts):
                record_cohort_toxicity(self.state, cohort, outcomes)  # raises
            raise ServiceError(422, "unknown_cohort",
                               "cohort %r is not the pending cohort %d"
                               % (cohort, self.next_cohort))
        decision = self._decide(self.state.clone())
        if decision.kind == "terminate":
            raise ServiceError(422, "trial_terminated",
                               "the design terminates for %s; no further cohort"
                               % decision.reason)
        if self.config.rule == RULE_WE_R:
            pending = self._pending_draw()
            regimen = pending["regimen"] if pending else decision.regimen
            if pending is None:
                self._append({"type": "draw", "cohort": cohort, "regimen": regimen})
        else:
            regimen = decision.regimen
        allocate_cohort(self.state, regimen)
        self._append({"type": "allocate", "cohort": cohort, "regimen": regimen})
        record_cohort_toxicity(self.state, cohort, outcomes)
        self._append({"type": "toxicity", "cohort": cohort, "outcomes": outcomes})

    def whatif(self, hypotheses) -> dict:
        """Recommendation that WOULD follow the hypothetical outcomes,
        without touching the session."""
        if not isinstance(hypotheses, (list, tuple)):
            raise ServiceError(422, "malformed_hypothesis",
                               "whatif expects a list of outcome postings")
        scratch = TrialSession(id=self.id, config=self.config,
                               state=self.state.clone(),
                               events=list(self.events), revision=self.revision)
        for h in hypotheses:
            if not isinstance(h, dict) or not {"cohort", "endpoint", "outcomes"} <= set(h):
                raise ServiceError(422, "malformed_hypothesis",
                                   "each hypothesis needs cohort, endpoint, outcomes")
            try:
                scratch.post_outcomes(h["cohort"], h["endpoint"], h["outcomes"],
                                      expected_revision=scratch.revision)
            except ServiceError as err:
                raise ServiceError(422, "malformed_hypothesis", err.message,
                                   err.details)
        return scratch.recommendation(persist_draw=False)

    # -- views ----------------------------------------------------------------

    def view(self) -> dict:
        state = self.state
        return {
            "id": self.id,
            "revision": self.revision,
            "config": config_to_dict(self.config),
            "patients_enrolled": state.patients_enrolled,
            "terminated": state.terminated,
            "regimens": [
                {"regimen": i + 1, "n_tox": r.n_tox, "x_tox": r.x_tox,
                 "n_eff": r.n_eff, "x_eff": r.x_eff,
                 "pending_eff": r.pending_eff, "ever_tried": r.ever_tried}
                for i, r in enumerate(state.regimens)
            ],
            "cohorts": [
                {"cohort": c.index, "regimen": c.regimen, "size": c.size,
                 "toxicity": c.tox_outcomes, "efficacy": c.eff_outcomes,
                 "pending": c.pending}
                for c in state.cohorts
            ],
            "recommendation": self.recommendation(persist_draw=False),
        }

    # -- (de)serialization ------------------------------------------------

    def to_document(self) -> dict:
        return {
            "id": self.id,
            "config": config_to_dict(self.config),
            "revision": self.revision,
            "events": self.events,
            "state": _state_fingerprint(self.state),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "TrialSession":
        config = config_from_dict(doc["config"])
        state = cls.fold(config, doc["events"])
        if _state_fingerprint(state) != doc["state"]:
            raise ServiceError(
                500, "corrupt_session",
                "audit log replay does not reproduce the stored state",
                {"id": doc.get("id")})
        return cls(id=doc["id"], config=config, state=state,
                   events=list(doc["events"]), revision=doc["revision"])


def _state_fingerprint(state: TrialState) -> dict:
    return {
        "regimens": [[r.n_tox, r.x_tox, r.n_eff, r.x_eff, r.pending_eff,
                      r.ever_tried] for r in state.regimens],
        "cohorts": [[c.index, c.regimen, c.tox_outcomes, c.eff_outcomes, c.pending]
                    for c in state.cohorts],
        "last_cohort": list(state.last_cohort) if state.last_cohort else None,
        "patients_enrolled": state.patients_enrolled,
    }


# ---------------------------------------------------------------------------
# store
# ---------------------------------------------------------------------------

class SessionStore:
    """One JSON document per session in a directory; loads re-verify the
    event-sourcing invariant."""

    def __init__(self, directory=None):
        self.directory = directory or os.environ.get(STORE_ENV_VAR, ".wetrial-store")
        os.makedirs(self.directory, exist_ok=True)

    def _path(self, session_id: str) -> str:
        if not session_id.replace("-", "").isalnum():
            raise ServiceError(404, "not_found", "no session %r" % (session_id,))
        return os.path.join(self.directory, session_id + ".json")

    def save(self, session: TrialSession):
        path = self._path(session.id)
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(session.to_document(), fh, indent=1)
        os.replace(tmp, path)

    def load(self, session_id: str) -> TrialSession:
        path = self._path(session_id)
        if not os.path.exists(path):
            raise ServiceError(404, "not_found", "no session %r" % (session_id,))
        with open(path) as fh:
            return TrialSession.from_document(json.load(fh))

    def list_ids(self):
        return sorted(
            name[:-5] for name in os.listdir(self.directory)
            if name.endswith(".json"))


# ---------------------------------------------------------------------------
# HTTP app (WSGI)
# ---------------------------------------------------------------------------

def wsgi_app(store: SessionStore):
    """Framework-free WSGI application over the session store."""

    def respond(start_response, status: int, body: dict):
        payload = json.dumps(body).encode()
        start_response("%d %s" % (status, _REASONS.get(status, "OK")), [
            ("Content-Type", "application/json"),
            ("Content-Length", str(len(payload))),
            ("Access-Control-Allow-Origin", "*"),
            ("Access-Control-Allow-Headers", "Content-Type"),
            ("Access-Control-Allow-Methods", "GET, POST, OPTIONS"),
        ])
        return [payload]

    def read_json(environ) -> dict:
        try:
            length = int(environ.get("CONTENT_LENGTH") or 0)
        except ValueError:
            length = 0
        raw = environ["wsgi.input"].read(length) if length else b"{}"
        try:
            doc = json.loads(raw.decode() or "{}")
        except json.JSONDecodeError as err:
            raise ServiceError(400, "invalid_json", "request body is not JSON",
                               {"error": str(err)})
        if not isinstance(doc, dict):
            raise ServiceError(400, "invalid_json", "request body must be an object")
        return doc

    def handle(environ):
        method = environ["REQUEST_METHOD"]
        path = [p for p in environ.get("PATH_INFO", "/").split("/") if p]
        if method == "OPTIONS":
            return 204, {}
        if not path or path[0] != "trials":
            raise ServiceError(404, "not_found", "unknown route")
        if len(path) == 1:
            if method == "POST":
                config = config_from_dict(read_json(environ))
                session = TrialSession.create(config)
                session.recommendation()   # materialize a WE_R draw up front
                store.save(session)
                return 201, session.view()
            if method == "GET":
                return 200, {"sessions": store.list_ids()}
            raise ServiceError(404, "not_found", "unknown route")
        session_id = path[1]
        if len(path) == 2 and method == "GET":
            return 200, store.load(session_id).view()
        if len(path) == 3 and path[2] == "recommendation" and method == "GET":
            session = store.load(session_id)
            rec = session.recommendation()
            store.save(session)   # WE_R draws persist at first read
            return 200, rec
        if len(path) == 3 and path[2] == "outcomes" and method == "POST":
            doc = read_json(environ)
            for key in ("cohort", "endpoint", "outcomes", "expected_revision"):
                if key not in doc:
                    raise ServiceError(422, "invalid_outcomes",
                                       "missing field %r" % key)
            session = store.load(session_id)
            rec = session.post_outcomes(doc["cohort"], doc["endpoint"],
                                        doc["outcomes"], doc["expected_revision"])
            store.save(session)
            view = session.view()
            view["recommendation"] = rec
            return 200, view
        if len(path) == 3 and path[2] == "whatif" and method == "POST":
            doc = read_json(environ)
            session = store.load(session_id)
            return 200, session.whatif(doc.get("outcomes", []))
        raise ServiceError(404, "not_found", "unknown route")

    def app(environ, start_response):
        try:
            status, body = handle(environ)
        except ServiceError as err:
            return respond(start_response, err.status, err.body())
        return respond(start_response, status, body)

    return app


_REASONS = {200: "OK", 201: "Created", 204: "No Content", 400: "Bad Request",
            404: "Not Found", 409: "Conflict", 422: "Unprocessable Entity",
            500: "Internal Server Error"}


def serve(addr: str, store_dir=None):
    """Run the API with the stdlib WSGI server (development scale)."""
    from wsgiref.simple_server import make_server

    host, _, port = addr.rpartition(":")
    server = make_server(host or "127.0.0.1", int(port),
                         wsgi_app(SessionStore(store_dir)))
    print("serving on http://%s:%d (store: %s)"
          % (server.server_name, server.server_port,
             store_dir or os.environ.get(STORE_ENV_VAR, ".wetrial-store")))
    server.serve_forever()
