"""HTTP API over the detection pipeline.

Every endpoint is a thin wrapper around a library call.  Library errors
come back as status 400 with ``{"kind", "type", "message"}`` where ``kind``
is one of ``input``, ``config`` or ``insufficient_data``.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__, harness, ocsvm
from ..config import Config, config_from_dict
from ..errors import AfdError, EmptyTrainingSet, InvalidScenario, NonMonotonicTimestamp, TraceError
from ..features import extract_features
from ..segmentation import ActivitySegment, StableThreshold, calibrate_threshold
from ..synth import GroundTruth, generate_trace, scenario_from_dict
from ..trace import parse_trace, write_trace
from . import schemas as S

app = FastAPI(title="afd", version=__version__)


@app.exception_handler(AfdError)
async def _afd_error(request: Request, exc: AfdError):
    body = S.ErrorBody(kind=exc.kind, type=type(exc).__name__, message=str(exc))
    return JSONResponse(status_code=400, content=body.model_dump())


def _config(d) -> Config:
    return Config() if d is None else config_from_dict(d)


def _threshold(d) -> StableThreshold:
    try:
        return StableThreshold.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad threshold object: {exc!r}") from None


def _truth(d) -> GroundTruth:
    try:
        return GroundTruth.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"bad ground truth object: {exc!r}") from None


def _segment(d) -> ActivitySegment:
    try:
        return ActivitySegment.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad segment object: {exc!r}") from None


def _detections(dets) -> list[S.DetectionOut]:
    return [S.DetectionOut(t_end_us=d.t_end_us, score=d.score) for d in dets]


@app.get("/health", response_model=S.Health)
def health():
    return S.Health(version=__version__)


@app.post("/simulate", response_model=S.SimulateResponse)
def simulate(req: S.SimulateRequest):
    trace, truth = generate_trace(scenario_from_dict(req.scenario))
    return S.SimulateResponse(trace=write_trace(trace).decode(), truth=truth.to_dict())


@app.post("/calibrate")
def calibrate(req: S.CalibrateRequest) -> dict:
    cfg = _config(req.config)
    return calibrate_threshold(parse_trace(req.trace), cfg.segment_params).to_dict()


@app.post("/segment", response_model=S.SegmentResponse)
def segment(req: S.SegmentRequest):
    cfg = _config(req.config)
    _, ends, segs = harness.segment_trace(parse_trace(req.trace), cfg, _threshold(req.threshold))
    return S.SegmentResponse(endpoints=ends, segments=[s.to_dict() for s in segs])


@app.post("/train", response_model=S.TrainResponse)
def train(req: S.TrainRequest):
    cfg = _config(req.config)
    if len(req.labels) != len(req.segments):
        raise TraceError(f"{len(req.labels)} labels for {len(req.segments)} segments")
    X = [extract_features(_segment(s), cfg.features.channels) for s in req.segments]
    falls = np.array([x for x, y in zip(X, req.labels) if y])
    others = np.array([x for x, y in zip(X, req.labels) if not y])
    if len(falls) == 0:
        raise EmptyTrainingSet("no segment is labeled as a fall")
    model = harness.train_model(falls, cfg, others)
    return S.TrainResponse(
        model=ocsvm.model_to_dict(model),
        store=ocsvm.TrainingStore(falls).to_dict(),
        n_falls=len(falls),
        n_others=len(others),
    )


@app.post("/detect", response_model=S.DetectResponse)
def detect(req: S.DetectRequest):
    cfg = _config(req.config)
    model = ocsvm.model_from_dict(req.model)
    dets = harness.run_detector(
        parse_trace(req.trace), cfg, _threshold(req.threshold), model, "stream" if req.stream else "batch", req.chunk
    )
    return S.DetectResponse(detections=_detections(dets))


@app.post("/eval")
def evaluate(req: S.EvalRequest) -> dict:
    dets = [harness.Detection(d.t_end_us, d.score) for d in req.detections]
    return harness.evaluate(dets, _truth(req.truth), req.match_tol_ms).to_dict()


@app.post("/search-window")
def search_window(req: S.SearchWindowRequest) -> dict:
    cfg = _config(req.config)
    th = _threshold(req.threshold)
    corpus = []
    for item in req.corpus:
        corpus += harness.corpus_from_trace(parse_trace(item.trace), _truth(item.truth), cfg, th)
    result = harness.search_window_size(corpus, cfg, req.lo, req.hi, req.step, req.fine_step, k=req.k, seed=req.seed)
    return result.to_dict()


@app.post("/update-model", response_model=S.UpdateModelResponse)
def update_model(req: S.UpdateModelRequest):
    model = ocsvm.model_from_dict(req.model)
    try:
        store = ocsvm.TrainingStore.from_dict(req.store)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad training store: {exc!r}") from None
    new, store = ocsvm.update_model(model, [(r.vector, r.is_fall) for r in req.relabeled], store)
    return S.UpdateModelResponse(model=ocsvm.model_to_dict(new), store=store.to_dict())


# Streaming sessions: one detector per session, fed trace fragments in order.

_sessions: dict[str, tuple[harness.Detector, threading.Lock]] = {}
_sessions_lock = threading.Lock()


def _session(session_id: str):
    with _sessions_lock:
        entry = _sessions.get(session_id)
    if entry is None:
        raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
    return entry


@app.post("/sessions", response_model=S.SessionCreated)
def open_session(req: S.SessionRequest):
    det = harness.Detector(_config(req.config), _threshold(req.threshold), ocsvm.model_from_dict(req.model))
    sid = uuid.uuid4().hex
    with _sessions_lock:
        _sessions[sid] = (det, threading.Lock())
    return S.SessionCreated(session_id=sid)


@app.post("/sessions/{session_id}/packets", response_model=S.DetectResponse)
def push_packets(session_id: str, req: S.PacketsRequest):
    det, lock = _session(session_id)
    part = parse_trace(req.trace)
    with lock:
        try:
            dets = det.push(part.t_us, part.csi)
        except ValueError as exc:
            if isinstance(exc, AfdError):
                raise
            raise NonMonotonicTimestamp(str(exc)) from None
    return S.DetectResponse(detections=_detections(dets))


@app.delete("/sessions/{session_id}", response_model=S.DetectResponse)
def close_session(session_id: str):
    det, lock = _session(session_id)
    with _sessions_lock:
        _sessions.pop(session_id, None)
    with lock:
        dets = det.finish()
    return S.DetectResponse(detections=_detections(dets))
