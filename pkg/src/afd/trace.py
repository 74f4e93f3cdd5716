"""CSI value types and the JSON Lines trace format.

A trace file has one header object followed by one object per packet::

    {"type":"header","trace_id":"t","n_links":2,"n_subcarriers":30,"rate_hz":100.0}
    {"t_us":0,"csi":[[[re,im],...],...]}

Floats are written with ``repr`` so every value round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedLine,
    MissingHeader,
    NonMonotonicTimestamp,
)


class CsiSample(NamedTuple):
    """One complex channel coefficient for a link/subcarrier pair."""

    re: float
    im: float


class Polar(NamedTuple):
    amplitude: float
    phase: float


def to_polar(s: CsiSample) -> Polar:
    """Amplitude and phase (radians in (-pi, pi]) of a CSI sample."""
    re, im = float(s[0]), float(s[1])
    return Polar(math.hypot(re, im), math.atan2(im, re))


@dataclass(frozen=True)
class TraceMeta:
    n_links: int = 2
    n_subcarriers: int = 30
    nominal_rate_hz: float = 100.0
    trace_id: str = ""

    def __post_init__(self):
        if not isinstance(self.n_links, int) or self.n_links < 2:
            raise ValueError("n_links must be an integer >= 2")
        if not isinstance(self.n_subcarriers, int) or self.n_subcarriers < 2:
            raise ValueError("n_subcarriers must be an integer >= 2")
        rate = self.nominal_rate_hz
        if not (isinstance(rate, (int, float)) and math.isfinite(rate) and rate > 0):
            raise ValueError("nominal_rate_hz must be a positive finite number")
        object.__setattr__(self, "nominal_rate_hz", float(rate))


@dataclass(frozen=True)
class CsiPacket:
    t_us: int
    samples: np.ndarray  # complex, shape (n_links, n_subcarriers)


@dataclass(frozen=True, eq=False)
class CsiTrace:
    """Time-ordered CSI packets stored column-wise.

    ``t_us`` is an int64 vector of packet timestamps and ``csi`` a complex128
    array shaped ``(n_packets, n_links, n_subcarriers)``.
    """

    meta: TraceMeta
    t_us: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    csi: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t_us)
        if t.size and not np.issubdtype(t.dtype, np.integer):
            raise ValueError("timestamps must be integers")
        t = t.astype(np.int64, copy=True).reshape(-1)
        shape = (t.size, self.meta.n_links, self.meta.n_subcarriers)
        csi = np.zeros(shape, dtype=np.complex128) if self.csi is None else self.csi
        csi = np.array(csi, dtype=np.complex128, copy=True)
        if csi.shape != shape:
            raise DimensionMismatch(f"csi shape {csi.shape} does not match {shape}")
        if t.size and t[0] < 0:
            raise ValueError("timestamps must be non-negative")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise NonMonotonicTimestamp("packet timestamps must be strictly increasing")
        if not np.all(np.isfinite(csi.view(np.float64))):
            raise ValueError("CSI values must be finite")
        t.setflags(write=False)
        csi.setflags(write=False)
        object.__setattr__(self, "t_us", t)
        object.__setattr__(self, "csi", csi)

    @classmethod
    def from_packets(cls, meta: TraceMeta, packets: Iterable[CsiPacket]) -> "CsiTrace":
        packets = list(packets)
        t = np.array([p.t_us for p in packets], dtype=np.int64)
        if packets:
            csi = np.stack([np.asarray(p.samples, dtype=np.complex128) for p in packets])
        else:
            csi = None
        return cls(meta, t, csi)

    @property
    def packets(self) -> list[CsiPacket]:
        return [CsiPacket(int(t), s) for t, s in zip(self.t_us, self.csi)]

    def __len__(self) -> int:
        return int(self.t_us.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CsiTrace):
            return NotImplemented
        # bit-level comparison so that -0.0 and 0.0 are distinguished
        return (
            self.meta == other.meta
            and self.t_us.tobytes() == other.t_us.tobytes()
            and self.csi.shape == other.csi.shape
            and np.ascontiguousarray(self.csi).tobytes()
            == np.ascontiguousarray(other.csi).tobytes()
        )

    __hash__ = None

    @property
    def duration_us(self) -> int:
        return int(self.t_us[-1] - self.t_us[0]) if len(self) else 0

    def slice(self, start: int, stop: int) -> "CsiTrace":
        return CsiTrace(self.meta, self.t_us[start:stop], self.csi[start:stop])

    def with_csi(self, csi: np.ndarray) -> "CsiTrace":
        return CsiTrace(self.meta, self.t_us, csi)


def _header_line(meta: TraceMeta) -> str:
    return json.dumps(
        {
            "type": "header",
            "trace_id": meta.trace_id,
            "n_links": meta.n_links,
            "n_subcarriers": meta.n_subcarriers,
            "rate_hz": meta.nominal_rate_hz,
        },
        separators=(",", ":"),
    )


def _packet_line(t_us: int, samples: np.ndarray) -> str:
    rows = ",".join(
        "[" + ",".join(f"[{re!r},{im!r}]" for re, im in zip(row.real.tolist(), row.imag.tolist())) + "]"
        for row in samples
    )
    return f'{{"t_us":{int(t_us)},"csi":[{rows}]}}'


def write_trace(trace: CsiTrace) -> bytes:
    lines = [_header_line(trace.meta)]
    lines.extend(_packet_line(t, s) for t, s in zip(trace.t_us.tolist(), trace.csi))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_header(line: str) -> TraceMeta:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MissingHeader(f"first line is not JSON: {exc}", line=1) from None
    if not isinstance(obj, dict) or obj.get("type") != "header":
        raise MissingHeader("first line must be a header object", line=1)
    try:
        n_links = obj["n_links"]
        n_sub = obj["n_subcarriers"]
        rate = obj["rate_hz"]
        trace_id = obj.get("trace_id", "")
    except KeyError as exc:
        raise MalformedLine(f"header missing key {exc}", line=1) from None
    if isinstance(n_links, bool) or isinstance(n_sub, bool) or isinstance(rate, bool):
        raise MalformedLine("header fields must be numbers", line=1)
    if not isinstance(trace_id, str):
        raise MalformedLine("trace_id must be a string", line=1)
    try:
        return TraceMeta(n_links, n_sub, rate, trace_id)
    except ValueError as exc:
        raise MalformedLine(str(exc), line=1) from None


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_trace(data: bytes | str) -> CsiTrace:
    """Parse and validate a JSON Lines trace."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(f"not UTF-8: {exc}") from None
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip():
        raise MissingHeader("empty trace file", line=1)
    meta = _parse_header(lines[0])
    n_l, n_s = meta.n_links, meta.n_subcarriers

    times: list[int] = []
    values = np.empty((len(lines) - 1, n_l, n_s, 2), dtype=np.float64)
    prev = None
    for k, line in enumerate(lines[1:]):
        lineno = k + 2
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(f"bad JSON: {exc}", line=lineno) from None
        if not isinstance(obj, dict) or "t_us" not in obj or "csi" not in obj:
            raise MalformedLine("packet needs 't_us' and 'csi'", line=lineno)
        t = obj["t_us"]
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise MalformedLine("t_us must be a non-negative integer", line=lineno)
        csi = obj["csi"]
        if not isinstance(csi, list) or not all(isinstance(r, list) for r in csi):
            raise MalformedLine("csi must be a list of per-link lists", line=lineno)
        if len(csi) != n_l or any(len(r) != n_s for r in csi):
            raise DimensionMismatch(
                f"expected {n_l} links x {n_s} subcarriers", line=lineno
            )
        for li, row in enumerate(csi):
            for si, pair in enumerate(row):
                if not (isinstance(pair, list) and len(pair) == 2 and _is_num(pair[0]) and _is_num(pair[1])):
                    raise MalformedLine(
                        f"sample [{li}][{si}] must be a finite [re, im] pair", line=lineno
                    )
                values[k, li, si, 0] = pair[0]
                values[k, li, si, 1] = pair[1]
        if prev is not None and t <= prev:
            raise NonMonotonicTimestamp(f"t_us {t} follows {prev}", line=lineno)
        prev = t
        times.append(t)

    # assembled through views so that signed zeros survive
    csi_arr = np.empty(values.shape[:3], dtype=np.complex128)
    csi_arr.real = values[..., 0]
    csi_arr.imag = values[..., 1]
    return CsiTrace(meta, np.array(times, dtype=np.int64), csi_arr)
