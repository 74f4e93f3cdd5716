import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from afd import synth
from afd.errors import DimensionMismatch, MalformedLine, MissingHeader, NonMonotonicTimestamp, TraceError
from afd.trace import CsiSample, CsiTrace, TraceMeta, parse_trace, to_polar, write_trace

from conftest import random_trace

HEADER = '{"type":"header","trace_id":"x","n_links":2,"n_subcarriers":30,"rate_hz":100}'


def packet(t, n_sub=30, n_links=2, v=0.5):
    return json.dumps({"t_us": t, "csi": [[[v, -v]] * n_sub] * n_links})


def test_minimal_trace():
    tr = parse_trace(HEADER + "\n" + packet(0) + "\n")
    assert len(tr) == 1
    assert tr.meta == TraceMeta(2, 30, 100.0, "x")
    assert tr.csi[0, 1, 29] == 0.5 - 0.5j


def test_equal_timestamps_rejected():
    with pytest.raises(NonMonotonicTimestamp):
        parse_trace("\n".join([HEADER, packet(100), packet(100)]))


def test_short_subcarrier_row_rejected():
    with pytest.raises(DimensionMismatch):
        parse_trace(HEADER + "\n" + packet(0, n_sub=29))


def test_missing_header():
    with pytest.raises(MissingHeader):
        parse_trace("")
    with pytest.raises(MissingHeader):
        parse_trace(packet(0))


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        '{"t_us": 0}',
        '{"t_us": -5, "csi": []}',
        '{"t_us": 1.5, "csi": []}',
        '{"t_us": true, "csi": []}',
    ],
)
def test_malformed_lines(line):
    with pytest.raises(MalformedLine):
        parse_trace(HEADER + "\n" + line)


def test_non_finite_sample_rejected():
    bad = json.dumps({"t_us": 0, "csi": [[[0.0, 0.0]] * 30] * 2}).replace("[0.0, 0.0]", "[NaN, 0.0]", 1)
    with pytest.raises(MalformedLine):
        parse_trace(HEADER + "\n" + bad)


def test_error_carries_line_number():
    with pytest.raises(TraceError) as info:
        parse_trace("\n".join([HEADER, packet(0), packet(10), "{"]))
    assert info.value.line == 4


def test_empty_trace_round_trip():
    tr = CsiTrace(TraceMeta(trace_id="empty"))
    data = write_trace(tr)
    assert data.count(b"\n") == 1
    back = parse_trace(data)
    assert back == tr and len(back) == 0


def test_synthetic_round_trip_digest():
    sc = synth.still_scenario(seed=42, duration_ms=10000)
    tr, _ = synth.generate_trace(sc)
    tr = tr.slice(0, 1000)
    assert len(tr) == 1000
    data = write_trace(tr)
    assert write_trace(parse_trace(data)) == data
    assert parse_trace(data) == tr


def test_signed_zero_survives():
    csi = np.zeros((1, 2, 2), dtype=complex)
    csi.real[0, 0, 0] = -0.0
    tr = CsiTrace(TraceMeta(2, 2), np.array([0]), csi)
    back = parse_trace(write_trace(tr))
    assert math.copysign(1.0, back.csi[0, 0, 0].real) == -1.0


@given(st.integers(0, 10_000), st.integers(0, 30), st.integers(2, 4), st.integers(2, 8))
def test_round_trip_property(seed, n, n_links, n_sub):
    tr = random_trace(seed, n=n, n_links=n_links, n_sub=n_sub, jitter_us=300)
    assert parse_trace(write_trace(tr)) == tr


@given(st.integers(0, 10_000), st.integers(0, 3))
def test_mutations_are_rejected(seed, which):
    # start from a valid file and break one invariant
    tr = random_trace(seed, n=5, n_sub=3)
    lines = write_trace(tr).decode().split("\n")[:-1]
    k = 1 + seed % 5
    obj = json.loads(lines[k])
    if which == 0:
        obj["csi"][0].pop()
        expected = DimensionMismatch
    elif which == 1:
        obj["csi"].append(obj["csi"][0])
        expected = DimensionMismatch
    elif which == 2:
        obj["t_us"] = json.loads(lines[k - 1])["t_us"] if k > 1 else -1
        expected = NonMonotonicTimestamp if k > 1 else MalformedLine
    else:
        obj["csi"][0][0] = [1.0]
        expected = MalformedLine
    lines[k] = json.dumps(obj)
    with pytest.raises(expected):
        parse_trace("\n".join(lines))


@pytest.mark.parametrize(
    "sample, expected",
    [((1, 0), (1, 0)), ((0, 2), (2, math.pi / 2)), ((-1, -1), (math.sqrt(2), -3 * math.pi / 4))],
)
def test_to_polar_examples(sample, expected):
    amp, ph = to_polar(CsiSample(*sample))
    assert amp == pytest.approx(expected[0], abs=1e-15)
    assert ph == pytest.approx(expected[1], abs=1e-15)


def test_to_polar_phase_range():
    assert to_polar(CsiSample(-1.0, 0.0)).phase == pytest.approx(math.pi)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(finite, finite)
def test_to_polar_reconstructs(re, im):
    amp, ph = to_polar(CsiSample(re, im))
    scale = max(amp, 1e-300)
    assert abs(amp * math.cos(ph) - re) <= 1e-12 * scale + 1e-300
    assert abs(amp * math.sin(ph) - im) <= 1e-12 * scale + 1e-300
    assert -math.pi <= ph <= math.pi


def test_meta_invariants():
    with pytest.raises(ValueError):
        TraceMeta(n_links=1)
    with pytest.raises(ValueError):
        TraceMeta(n_subcarriers=1)
    with pytest.raises(ValueError):
        TraceMeta(nominal_rate_hz=0)
