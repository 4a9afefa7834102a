"""Service tests against a live socket: wire shapes, sessions, concurrency."""

import json
import threading
from pathlib import Path

import numpy as np
import pytest
import requests

from inversebench.http_service import (
    SuggestionService,
    load_replay_snapshot,
    make_server,
)

FIXTURE = Path(__file__).parent / "fixtures" / "golden_session.json"

LISTING_TARGET = {"Potlife": 18, "Viscosity": 11, "Adhesion": 0.25, "Hardness": 70}
COMPONENTS = [
    "Vinyl ",
    "Polyols ",
    "Epichlorohydrin ",
    "Bisphenol ",
    "Polyesters ",
    "TEPA ",
    "Amine ",
    "Isocyanates ",
]
METRIC_KEYS = [
    "generational_distance_gd",
    "hypervolume_hv",
    "inverted_generational_distance_igd",
    "maximum_spread_ms",
    "spacing_sp",
]


@pytest.fixture(scope="module")
def resin_server():
    service = SuggestionService("resin-demo", strategy="baseline", seed=3, n_init=12)
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, service
    server.shutdown()
    server.server_close()


@pytest.fixture(scope="module")
def replay_server():
    replay = load_replay_snapshot(FIXTURE)
    service = SuggestionService("resin-demo", strategy="baseline", seed=0, replay=replay)
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base
    server.shutdown()
    server.server_close()


def test_healthz(resin_server):
    base, _ = resin_server
    r = requests.get(f"{base}/healthz")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_optimize_returns_listing_shape(resin_server):
    base, _ = resin_server
    r = requests.post(f"{base}/optimize", json=LISTING_TARGET)
    assert r.status_code == 200
    assert r.headers["Content-Type"] == "application/json"
    doc = r.json()
    assert list(doc) == ["next_suggestion"]
    suggestion = doc["next_suggestion"]
    assert suggestion["expected_improvement"] == "Next best trial to try"
    assert isinstance(suggestion["ei_value"], float)
    params = suggestion["parameters"]
    assert list(params) == COMPONENTS  # exact names, trailing spaces included
    bounds = {
        "Vinyl ": (0, 5), "Polyols ": (0, 2), "Epichlorohydrin ": (0, 60),
        "Bisphenol ": (0, 70), "Polyesters ": (0, 30), "TEPA ": (0, 4),
        "Amine ": (0, 50), "Isocyanates ": (0, 8),
    }
    for name, value in params.items():
        lo, hi = bounds[name]
        assert lo - 1e-9 <= value <= hi + 1e-9, name
    # raw bytes carry the exact key spellings
    assert b'"Vinyl "' in r.content
    assert b'"next_suggestion"' in r.content
    assert b'"expected_improvement"' in r.content


def test_optimize_is_deterministic_between_observations(resin_server):
    base, _ = resin_server
    a = requests.post(f"{base}/optimize", json=LISTING_TARGET).json()
    b = requests.post(f"{base}/optimize", json=LISTING_TARGET).json()
    assert a["next_suggestion"]["parameters"] == b["next_suggestion"]["parameters"]


def test_optimize_rejects_bad_keys(resin_server):
    base, _ = resin_server
    bad = dict(LISTING_TARGET)
    bad["Viscosityy"] = bad.pop("Viscosity")
    r = requests.post(f"{base}/optimize", json=bad)
    assert r.status_code == 400
    doc = r.json()
    assert doc["status"] == "error"
    assert "Viscosityy" in doc["message"]

    r2 = requests.post(f"{base}/optimize", json={"Potlife": 18})
    assert r2.status_code == 400
    assert "missing property" in r2.json()["message"]

    r3 = requests.post(f"{base}/optimize", data=b"{not json",
                       headers={"Content-Type": "application/json"})
    assert r3.status_code == 400


def test_observe_appends_without_dedup(resin_server):
    base, service = resin_server
    session = service.session("observe-test")
    before = len(session.observations)
    body = {
        "parameters": {name: 1.0 for name in COMPONENTS},
        "properties": {"Potlife": 20.0, "Viscosity": 9.0, "Adhesion": 0.3, "Hardness": 66.0},
        "feasible": True,
    }
    headers = {"X-Session": "observe-test"}
    r1 = requests.post(f"{base}/observe", json=body, headers=headers)
    assert r1.status_code == 200
    assert r1.json() == {"status": "success", "observations": before + 1}
    r2 = requests.post(f"{base}/observe", json=body, headers=headers)
    assert r2.json()["observations"] == before + 2


def test_observe_validates_schema_and_bounds(resin_server):
    base, _ = resin_server
    good_props = {"Potlife": 20.0, "Viscosity": 9.0, "Adhesion": 0.3, "Hardness": 66.0}
    r = requests.post(
        f"{base}/observe",
        json={"parameters": {"Vinyl ": 1.0}, "properties": good_props},
    )
    assert r.status_code == 400
    assert "missing parameter" in r.json()["message"]

    params = {name: 1.0 for name in COMPONENTS}
    params["Vinyl "] = 99.0  # above its bound
    r2 = requests.post(f"{base}/observe", json={"parameters": params, "properties": good_props})
    assert r2.status_code == 400
    assert "out of bounds" in r2.json()["message"]


def test_metrics_shape_and_read_only(resin_server):
    base, _ = resin_server
    r = requests.get(f"{base}/metrics")
    assert r.status_code == 200
    doc = r.json()
    assert list(doc) == ["metrics", "pareto_size", "status"]
    assert list(doc["metrics"]) == METRIC_KEYS
    assert doc["status"] == "success"
    again = requests.get(f"{base}/metrics").json()
    assert again == doc


def test_metrics_fresh_session_warns(resin_server):
    base, service = resin_server
    service_session = service.session  # create an empty session directly
    s = SuggestionService("biobj-quadratic", seed=0, n_init=0)
    server = make_server(s, port=0)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/metrics"
        doc = requests.get(url).json()
        assert doc["pareto_size"] == 0
        assert doc["status"] == "success"
        assert doc["warning"]
        assert doc["metrics"]["generational_distance_gd"] is None
    finally:
        server.shutdown()
        server.server_close()


def test_golden_replay_reproduces_stored_document(replay_server):
    expected = {
        "metrics": {
            "generational_distance_gd": 15.025390934257677,
            "hypervolume_hv": 33355.86080004841,
            "inverted_generational_distance_igd": 27.208453955832674,
            "maximum_spread_ms": 0.5083142748168851,
            "spacing_sp": 3.908343020190014,
        },
        "pareto_size": 11,
        "status": "success",
    }
    r = requests.get(f"{replay_server}/metrics")
    doc = r.json()
    assert list(doc) == list(expected)
    assert list(doc["metrics"]) == METRIC_KEYS
    for key in METRIC_KEYS:
        assert doc["metrics"][key] == pytest.approx(expected["metrics"][key], abs=1e-9)
    assert doc["pareto_size"] == 11
    # the numbers round-trip to the exact stored literals
    for literal in (
        b'"generational_distance_gd": 15.025390934257677',
        b'"hypervolume_hv": 33355.86080004841',
        b'"inverted_generational_distance_igd": 27.208453955832674',
        b'"maximum_spread_ms": 0.5083142748168851',
        b'"spacing_sp": 3.908343020190014',
    ):
        assert literal in r.content


def test_sessions_are_isolated(resin_server):
    base, _ = resin_server
    a = requests.get(f"{base}/metrics", headers={"X-Session": "alpha"}).json()
    body = {
        "parameters": {name: 0.5 for name in COMPONENTS},
        "properties": {"Potlife": 21.0, "Viscosity": 8.0, "Adhesion": 0.4, "Hardness": 60.0},
        "feasible": True,
    }
    requests.post(f"{base}/observe", json=body, headers={"X-Session": "beta"})
    a_after = requests.get(f"{base}/metrics", headers={"X-Session": "alpha"}).json()
    assert a == a_after


def test_concurrent_observes_are_serialized(resin_server):
    base, service = resin_server
    session = service.session("concurrent")
    before = len(session.observations)
    body = {
        "parameters": {name: 0.25 for name in COMPONENTS},
        "properties": {"Potlife": 19.0, "Viscosity": 10.0, "Adhesion": 0.2, "Hardness": 70.0},
        "feasible": True,
    }
    headers = {"X-Session": "concurrent"}
    n_threads, per_thread = 8, 5
    errors = []

    def worker():
        try:
            for _ in range(per_thread):
                r = requests.post(f"{base}/observe", json=body, headers=headers)
                assert r.status_code == 200
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(session.observations) == before + n_threads * per_thread


def test_unknown_route_and_strategy_validation():
    with pytest.raises(ValueError, match="strategy"):
        SuggestionService("biobj-quadratic", strategy="nope")
