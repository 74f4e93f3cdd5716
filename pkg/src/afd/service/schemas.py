"""Request and response bodies of the HTTP API.

Traces travel as their canonical JSONL text, models/thresholds/segments as
the same JSON objects the library writes to files.  ``config`` is a raw
object validated by the library so bad keys are reported as configuration
errors rather than request errors.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    kind: str
    type: str
    message: str


class Health(BaseModel):
    status: str = "ok"
    version: str


class SimulateRequest(BaseModel):
    scenario: dict[str, Any]


class SimulateResponse(BaseModel):
    trace: str
    truth: dict[str, Any]


class CalibrateRequest(BaseModel):
    trace: str
    config: Optional[dict[str, Any]] = None


class SegmentRequest(BaseModel):
    trace: str
    threshold: dict[str, Any]
    config: Optional[dict[str, Any]] = None


class SegmentResponse(BaseModel):
    endpoints: list[int]
    segments: list[dict[str, Any]]


class TrainRequest(BaseModel):
    segments: list[dict[str, Any]]
    labels: list[bool] = Field(description="True for falls, one per segment")
    config: Optional[dict[str, Any]] = None


class TrainResponse(BaseModel):
    model: dict[str, Any]
    store: dict[str, Any]
    n_falls: int
    n_others: int


class DetectionOut(BaseModel):
    t_end_us: int
    score: float


class DetectRequest(BaseModel):
    trace: str
    threshold: dict[str, Any]
    model: dict[str, Any]
    config: Optional[dict[str, Any]] = None
    stream: bool = False
    chunk: int = 64


class DetectResponse(BaseModel):
    detections: list[DetectionOut]


class EvalRequest(BaseModel):
    detections: list[DetectionOut]
    truth: dict[str, Any]
    match_tol_ms: float = 500.0


class CorpusItem(BaseModel):
    trace: str
    truth: dict[str, Any]


class SearchWindowRequest(BaseModel):
    corpus: list[CorpusItem]
    threshold: dict[str, Any]
    config: Optional[dict[str, Any]] = None
    lo: int = 1000
    hi: int = 5000
    step: int = 500
    fine_step: int = 100
    k: int = 5
    seed: int = 0


class RelabeledVector(BaseModel):
    vector: list[float]
    is_fall: bool


class UpdateModelRequest(BaseModel):
    model: dict[str, Any]
    store: dict[str, Any]
    relabeled: list[RelabeledVector] = []


class UpdateModelResponse(BaseModel):
    model: dict[str, Any]
    store: dict[str, Any]


class SessionRequest(BaseModel):
    threshold: dict[str, Any]
    model: dict[str, Any]
    config: Optional[dict[str, Any]] = None


class SessionCreated(BaseModel):
    session_id: str


class PacketsRequest(BaseModel):
    # a trace-file fragment: the header line followed by the next packets
    trace: str
