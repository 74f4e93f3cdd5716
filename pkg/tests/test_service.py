import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from afd import __version__, harness, ocsvm, synth
from afd.service import app
from afd.trace import parse_trace, write_trace

client = TestClient(app)


def post(path, body):
    return client.post(path, json=body)


@pytest.fixture(scope="module")
def bench():
    sc = synth.benchmark_pack()[2]
    trace, truth = synth.generate_trace(sc)
    return sc, write_trace(trace).decode(), truth


@pytest.fixture(scope="module")
def artefacts(trained):
    cfg, th, model = trained
    return th.to_dict(), ocsvm.model_to_dict(model)


def test_health():
    r = client.get("/health")
    assert r.status_code == 200 and r.json() == {"status": "ok", "version": __version__}


def test_simulate_matches_library(bench):
    sc, text, truth = bench
    r = post("/simulate", {"scenario": sc.to_dict()})
    assert r.status_code == 200
    assert r.json()["trace"] == text
    assert r.json()["truth"] == truth.to_dict()


def test_calibrate(still_trace):
    r = post("/calibrate", {"trace": write_trace(still_trace).decode()})
    assert r.status_code == 200
    d = r.json()
    assert d["delta"] == pytest.approx(d["mu_stable"] + 6 * d["sigma_stable"])


def test_segment_train_detect_eval(bench, artefacts, trained):
    _, text, truth = bench
    th, model = artefacts
    seg = post("/segment", {"trace": text, "threshold": th}).json()
    assert len(seg["endpoints"]) == len(seg["segments"]) > 0
    labels = harness.label_endpoints(seg["endpoints"], truth)
    ys = [labels.get(i) == "fall" for i in range(len(seg["endpoints"]))]
    r = post("/train", {"segments": seg["segments"], "labels": ys})
    assert r.status_code == 200 and r.json()["n_falls"] == sum(ys)

    batch = post("/detect", {"trace": text, "threshold": th, "model": model}).json()["detections"]
    stream = post("/detect", {"trace": text, "threshold": th, "model": model, "stream": True, "chunk": 33}).json()["detections"]
    assert batch == stream
    cfg, th_obj, m = trained
    lib = harness.run_detector(parse_trace(text), cfg, th_obj, m)
    assert batch == [d.to_dict() for d in lib]

    rep = post("/eval", {"detections": batch, "truth": truth.to_dict()}).json()
    assert rep == harness.evaluate(lib, truth).to_dict()


def test_sessions_match_batch(bench, artefacts):
    _, text, _ = bench
    th, model = artefacts
    lines = text.split("\n")[:-1]
    sid = post("/sessions", {"threshold": th, "model": model}).json()["session_id"]
    got = []
    for k in range(1, len(lines), 250):
        part = "\n".join([lines[0]] + lines[k : k + 250]) + "\n"
        r = post(f"/sessions/{sid}/packets", {"trace": part})
        assert r.status_code == 200
        got += r.json()["detections"]
    got += client.delete(f"/sessions/{sid}").json()["detections"]
    batch = post("/detect", {"trace": text, "threshold": th, "model": model}).json()["detections"]
    assert got == batch
    assert client.delete(f"/sessions/{sid}").status_code == 404


def test_session_rejects_time_going_back(bench, artefacts):
    _, text, _ = bench
    th, model = artefacts
    lines = text.split("\n")
    sid = post("/sessions", {"threshold": th, "model": model}).json()["session_id"]
    assert post(f"/sessions/{sid}/packets", {"trace": "\n".join(lines[:20])}).status_code == 200
    r = post(f"/sessions/{sid}/packets", {"trace": "\n".join([lines[0]] + lines[5:8])})
    assert r.status_code == 400 and r.json()["kind"] == "input"


def test_unknown_session():
    assert post("/sessions/nope/packets", {"trace": ""}).status_code == 404


def test_update_model(artefacts):
    _, model = artefacts
    rng = np.random.default_rng(0)
    store = {"vectors": rng.normal(size=(10, 112)).tolist()}
    r = post("/update-model", {"model": model, "store": store, "relabeled": [{"vector": store["vectors"][0], "is_fall": False}]})
    assert r.status_code == 200
    assert len(r.json()["store"]["vectors"]) == 9


def test_search_window_insufficient(bench, artefacts):
    _, text, truth = bench
    th, _ = artefacts
    r = post("/search-window", {"corpus": [{"trace": text, "truth": truth.to_dict()}], "threshold": th, "k": 50})
    assert r.status_code == 400 and r.json()["kind"] == "insufficient_data"


@pytest.mark.parametrize(
    "path, body, kind, type_",
    [
        ("/calibrate", {"trace": "garbage"}, "input", "MissingHeader"),
        ("/calibrate", {"trace": ""}, "input", "MissingHeader"),
        ("/calibrate", {"trace": "", "config": {"svm": {"nu": 2}}}, "config", "ConfigError"),
        ("/simulate", {"scenario": {"seed": 1}}, "input", "MalformedScenario"),
        ("/update-model", {"model": {"version": 7}, "store": {"vectors": []}}, "input", "VersionMismatch"),
    ],
)
def test_library_errors(path, body, kind, type_):
    r = post(path, body)
    assert r.status_code == 400
    assert r.json()["kind"] == kind and r.json()["type"] == type_


def test_malformed_packet_line(bench):
    _, text, _ = bench
    header = text.split("\n")[0]
    r = post("/calibrate", {"trace": header + "\n{not json\n"})
    assert r.status_code == 400
    assert r.json()["kind"] == "input" and "line 2" in r.json()["message"]


def test_schema_errors():
    assert post("/detect", {"trace": "x"}).status_code == 422
