"""HTTP facade for sequential suggestions and running metrics.

Endpoints: POST /optimize (property targets in, next suggested trial out),
POST /observe (record an evaluated trial), GET /metrics (quality report for
the observations so far), GET /healthz. Response key names are wire
contracts and are emitted byte-identically, including component names with
legacy trailing spaces.

One server process hosts one problem. The default session is anonymous;
an ``X-Session`` header selects an isolated named session. A replay
snapshot (externally computed metrics document) can be mounted so the
metrics endpoint reproduces a persisted report verbatim.
"""

from __future__ import annotations

import json
import threading
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionContext, baseline_suggest, optimize_qehvi
from .gp_surrogate import FitConfig, fit_gp
from .pareto_metrics import metrics_report, pareto_filter
from .problem_suite import ProblemSpec, get_problem

DEFAULT_PORT = 5000
EXPECTED_IMPROVEMENT_TEXT = "Next best trial to try"

REPLAY_FORMAT = "metrics-snapshot"


@dataclass
class Session:
    """Observation log plus a fitted-model cache keyed by observation count."""

    problem: ProblemSpec
    strategy: str = "baseline"
    seed: int = 0
    n_mc: int = 512
    observations: list = field(default_factory=list)  # (x, y_raw, feasible)
    replay_metrics: dict | None = None
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    _model_cache: dict = field(default_factory=dict, repr=False)

    def bootstrap(self, n_init: int) -> None:
        """Seed the log by evaluating quasi-random feasible points."""
        xs = self.problem.constraints.sample_feasible(n_init, seed=self.seed)
        with self._lock:
            for x in xs:
                y, feasible = self.problem.evaluate(x)
                self.observations.append((x, np.asarray(y, dtype=float), feasible))

    def observe(self, x, y, feasible: bool) -> int:
        with self._lock:
            self.observations.append(
                (np.asarray(x, dtype=float), np.asarray(y, dtype=float), feasible)
            )
            self._model_cache.clear()
            self.replay_metrics = None  # new data invalidates a replayed report
            return len(self.observations)

    def _snapshot(self):
        with self._lock:
            return list(self.observations)

    def _models(self, snapshot):
        key = len(snapshot)
        with self._lock:
            if key in self._model_cache:
                return self._model_cache[key]
        problem = self.problem
        X = np.vstack([x for x, _, _ in snapshot])
        Ymin = np.vstack([problem.to_min(y) for _, y, _ in snapshot])
        models = tuple(
            fit_gp(
                X,
                Ymin[:, m],
                FitConfig(bounds=problem.constraints.box, seed=self.seed + m),
            )
            for m in range(problem.n_objectives)
        )
        with self._lock:
            self._model_cache[key] = models
        return models

    def suggest(self, target_raw: np.ndarray) -> tuple[dict, float]:
        """Next trial for a property-target request; deterministic per state."""
        snapshot = self._snapshot()
        if len(snapshot) < 2:
            raise ServiceError(409, "insufficient observations; POST /observe at least 2")
        problem = self.problem
        models = self._models(snapshot)
        feasible_min = [problem.to_min(y) for _, y, ok in snapshot if ok]
        front = (
            pareto_filter(np.vstack(feasible_min)).objectives
            if feasible_min
            else np.empty((0, problem.n_objectives))
        )
        ctx = AcquisitionContext(
            objective_models=models,
            bounds=problem.constraints.box,
            ref_point=problem.reference_point,
            front=front,
            constraints=problem.constraints,
            n_mc=self.n_mc,
        )
        seed = self.seed + 7919 * len(snapshot)
        if self.strategy == "qehvi":
            batch = optimize_qehvi(ctx, q=1, seed=seed)
        else:
            target_min = problem.to_min(target_raw)
            batch = baseline_suggest(ctx, target_min, seed=seed)
        x = batch.points[0]
        params = {
            name: float(v) for name, v in zip(problem.constraints.names, x)
        }
        return params, float(batch.acquisition_value)

    def metrics_document(self) -> dict:
        with self._lock:
            if self.replay_metrics is not None:
                return self.replay_metrics
            snapshot = list(self.observations)
        problem = self.problem
        feasible_min = [problem.to_min(y) for _, y, ok in snapshot if ok]
        if not feasible_min:
            return {
                "metrics": {
                    "generational_distance_gd": None,
                    "hypervolume_hv": None,
                    "inverted_generational_distance_igd": None,
                    "maximum_spread_ms": None,
                    "spacing_sp": None,
                },
                "pareto_size": 0,
                "status": "success",
                "warning": "no feasible observations",
            }
        front = pareto_filter(np.vstack(feasible_min))
        report = metrics_report(
            front.objectives,
            problem.reference_front,
            problem.reference_point,
            clip_hv=True,
        )
        return report.to_wire()


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def load_replay_snapshot(path) -> dict:
    """Read a persisted metrics document for replay serving."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") == REPLAY_FORMAT:
        body = {"metrics": doc["metrics"], "pareto_size": doc["pareto_size"], "status": "success"}
        return body
    if "metrics" in doc:  # run-summary documents carry the same wire shape
        inner = doc["metrics"]
        if isinstance(inner, dict) and "metrics" in inner:
            return inner
        return {"metrics": inner, "pareto_size": doc.get("pareto_size", 0), "status": "success"}
    raise ValueError("unrecognized replay document")


class SuggestionService:
    """Session registry plus request handling, independent of the socket."""

    def __init__(
        self,
        problem: ProblemSpec | str,
        strategy: str = "baseline",
        seed: int = 0,
        n_init: int = 16,
        n_mc: int = 512,
        replay: dict | None = None,
        log_dir=None,
    ):
        if isinstance(problem, str):
            problem = get_problem(problem, seed=seed)
        if strategy not in ("baseline", "qehvi"):
            raise ValueError("service strategy must be 'baseline' or 'qehvi'")
        self.problem = problem
        self.strategy = strategy
        self.seed = seed
        self.n_init = n_init
        self.n_mc = n_mc
        self.replay = replay
        self.log_dir = Path(log_dir) if log_dir else None
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.RLock()
        self.session("")  # default session

    def session(self, name: str) -> Session:
        with self._registry_lock:
            if name not in self._sessions:
                s = Session(
                    problem=self.problem,
                    strategy=self.strategy,
                    seed=self.seed + (zlib.crc32(name.encode()) % 100_003 if name else 0),
                    n_mc=self.n_mc,
                    replay_metrics=dict(self.replay) if self.replay else None,
                )
                if self.replay is None and self.n_init > 0:
                    s.bootstrap(self.n_init)
                self._sessions[name] = s
            return self._sessions[name]

    # -- request handlers ---------------------------------------------------

    def handle_optimize(self, session: Session, body: dict) -> dict:
        names = list(self.problem.objective_names)
        unknown = [k for k in body if k not in names]
        if unknown:
            raise ServiceError(400, f"unknown property key: {unknown[0]!r}")
        missing = [k for k in names if k not in body]
        if missing:
            raise ServiceError(400, f"missing property key: {missing[0]!r}")
        try:
            target = np.array([float(body[k]) for k in names])
        except (TypeError, ValueError) as exc:
            raise ServiceError(400, f"property values must be numbers: {exc}") from exc
        if not np.isfinite(target).all():
            raise ServiceError(400, "property values must be finite")
        params, ei = session.suggest(target)
        self._append_log("optimize", {"target": body, "parameters": params})
        return {
            "next_suggestion": {
                "expected_improvement": EXPECTED_IMPROVEMENT_TEXT,
                "parameters": params,
                "ei_value": ei,
            }
        }

    def handle_observe(self, session: Session, body: dict) -> dict:
        problem = self.problem
        params = body.get("parameters")
        props = body.get("properties")
        if not isinstance(params, dict) or not isinstance(props, dict):
            raise ServiceError(400, "body must carry 'parameters' and 'properties' objects")
        for k in params:
            if k not in problem.constraints.names:
                raise ServiceError(400, f"unknown parameter: {k!r}")
        for k in problem.constraints.names:
            if k not in params:
                raise ServiceError(400, f"missing parameter: {k!r}")
        for k in props:
            if k not in problem.objective_names:
                raise ServiceError(400, f"unknown property: {k!r}")
        for k in problem.objective_names:
            if k not in props:
                raise ServiceError(400, f"missing property: {k!r}")
        x = np.array([float(params[k]) for k in problem.constraints.names])
        y = np.array([float(props[k]) for k in problem.objective_names])
        box = problem.constraints.box
        if np.any(x < box[:, 0] - 1e-9) or np.any(x > box[:, 1] + 1e-9):
            raise ServiceError(400, "parameter value out of bounds")
        feasible = bool(body.get("feasible", True))
        count = session.observe(x, y, feasible)
        self._append_log("observe", {"parameters": params, "properties": props, "feasible": feasible})
        return {"status": "success", "observations": count}

    def handle_metrics(self, session: Session) -> dict:
        return session.metrics_document()

    def _append_log(self, kind: str, payload: dict) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        with open(self.log_dir / "service.jsonl", "a") as fh:
            fh.write(json.dumps({"event": kind, **payload}) + "\n")


class _Handler(BaseHTTPRequestHandler):
    service: SuggestionService = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    def _respond(self, status: int, doc: dict) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _session(self) -> Session:
        return self.service.session(self.headers.get("X-Session", ""))

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            doc = json.loads(raw.decode() or "{}")
        except json.JSONDecodeError as exc:
            raise ServiceError(400, f"invalid JSON body: {exc}") from exc
        if not isinstance(doc, dict):
            raise ServiceError(400, "JSON body must be an object")
        return doc

    def do_GET(self):
        try:
            if self.path == "/healthz":
                self._respond(200, {"status": "ok"})
            elif self.path == "/metrics":
                self._respond(200, self.service.handle_metrics(self._session()))
            else:
                self._respond(404, {"status": "error", "message": f"no route: {self.path}"})
        except ServiceError as exc:
            self._respond(exc.status, {"status": "error", "message": exc.message})
        except Exception as exc:  # pragma: no cover - last-resort guard
            self._respond(500, {"status": "error", "message": str(exc)})

    def do_POST(self):
        try:
            body = self._read_body()
            if self.path == "/optimize":
                self._respond(200, self.service.handle_optimize(self._session(), body))
            elif self.path == "/observe":
                self._respond(200, self.service.handle_observe(self._session(), body))
            else:
                self._respond(404, {"status": "error", "message": f"no route: {self.path}"})
        except ServiceError as exc:
            self._respond(exc.status, {"status": "error", "message": exc.message})
        except Exception as exc:  # pragma: no cover - last-resort guard
            self._respond(500, {"status": "error", "message": str(exc)})


def make_server(service: SuggestionService, port: int = DEFAULT_PORT) -> ThreadingHTTPServer:
    """Bind a threading HTTP server; call serve_forever() or use in a thread."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(
    problem: str,
    port: int = DEFAULT_PORT,
    strategy: str = "baseline",
    seed: int = 0,
    n_init: int = 16,
    replay_path=None,
    log_dir=None,
) -> None:
    replay = load_replay_snapshot(replay_path) if replay_path else None
    service = SuggestionService(
        problem, strategy=strategy, seed=seed, n_init=n_init, replay=replay, log_dir=log_dir
    )
    server = make_server(service, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
