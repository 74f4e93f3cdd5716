import bisect
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from afd.errors import BadCounts, EmptyChannel, LengthMismatch
from afd.features import (
    Scaler,
    condition_phase,
    extract_features,
    feature_dim,
    select_subcarriers,
    series_features,
    standardize,
    unstandardize,
)
from afd.segmentation import ActivitySegment


def quantile(sorted_x, p):
    pos = (len(sorted_x) - 1) * p
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_x) - 1)
    return sorted_x[lo] + (sorted_x[hi] - sorted_x[lo]) * (pos - lo)


def median(x):
    return quantile(sorted(x), 0.5)


def reference_features(x, rate):
    """Straight-line reimplementation of the seven frozen formulas."""
    n = len(x)
    if max(x) == min(x):
        return [0.0] * 7
    m = max(1, n // 10)
    mu = sum(x) / n
    sd = math.sqrt(sum((v - mu) ** 2 for v in x) / n)
    f1 = sd / (abs(mu) + 1e-9)
    med = median(x)
    f2 = median([abs(v - med) for v in x])
    first = x[:m]
    mu_f = sum(first) / m
    sd_first = math.sqrt(sum((v - mu_f) ** 2 for v in first) / m)
    hits = [i for i, v in enumerate(x) if abs(v - mu) > 2 * sd_first]
    f3 = (hits[-1] - hits[0] + 1) * 1000.0 / rate if hits else 0.0
    f4 = sum(x[-m:]) / m - mu_f
    s = sorted(x)
    f5 = quantile(s, 0.75) - quantile(s, 0.25)
    edges = list(np.linspace(min(x), max(x), 17))
    counts = [0] * 16
    for v in x:
        counts[min(bisect.bisect_right(edges, v) - 1, 15)] += 1
    f6 = -sum(c / n * math.log2(c / n) for c in counts if c)
    f7 = max(abs(b - a) for a, b in zip(x, x[1:])) * rate if n > 1 else 0.0
    return [f1, f2, f3, f4, f5, f6, f7]


series = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=80)


# subcarrier selection


def test_select_subcarriers_examples():
    assert select_subcarriers(30, 4) == [0, 10, 19, 29]
    assert select_subcarriers(30, 2) == [0, 29]


@pytest.mark.parametrize("n, k", [(30, 1), (3, 4), (1, 1), (30, 31)])
def test_select_subcarriers_bad_counts(n, k):
    with pytest.raises(BadCounts):
        select_subcarriers(n, k)


@given(st.integers(2, 200).flatmap(lambda n: st.tuples(st.just(n), st.integers(2, n))))
def test_select_subcarriers_formula(nk):
    n, k = nk
    idx = select_subcarriers(n, k)
    expected = [math.floor(Fraction(i * (n - 1), k - 1) + Fraction(1, 2)) for i in range(k)]
    assert idx == expected
    assert idx[0] == 0 and idx[-1] == n - 1
    assert all(b > a for a, b in zip(idx, idx[1:]))


# per-series statistics


def test_constant_series_is_all_zero():
    assert np.all(series_features(np.full(50, 3.3), 100.0) == 0.0)


def test_hand_series():
    f = series_features(np.array([1.0, 2.0, 4.0, 8.0]), 100.0)
    assert f[1] == 1.5
    assert f[4] == pytest.approx(5.0 - 1.75)
    assert f[6] == 400.0


def test_empty_series():
    with pytest.raises(EmptyChannel):
        series_features(np.array([]), 100.0)


@given(series, st.sampled_from([50.0, 100.0]))
def test_series_features_match_reference(x, rate):
    got = series_features(np.array(x), rate)
    np.testing.assert_allclose(got, reference_features(x, rate), rtol=1e-9, atol=1e-9)


@given(series, st.floats(-100, 100))
def test_shift_invariant_features(x, c):
    x = np.array(x)
    a = series_features(x, 100.0)
    b = series_features(x + c, 100.0)
    scale = 1 + np.abs(x).max() + abs(c)
    assert abs(a[1] - b[1]) <= 1e-9 * scale
    assert abs(a[4] - b[4]) <= 1e-9 * scale


@given(series, st.floats(0.01, 100))
def test_scaling_features(x, c):
    x = np.array(x)
    a = series_features(x, 100.0)
    b = series_features(x * c, 100.0)
    for i in (1, 4, 6):
        assert b[i] == pytest.approx(c * a[i], rel=1e-9, abs=1e-12)


@given(series)
def test_entropy_range(x):
    assert 0.0 <= series_features(np.array(x), 100.0)[5] <= 4.0 + 1e-12


def test_phase_conditioning_removes_ramp():
    ramp = np.angle(np.exp(1j * (0.4 * np.arange(300) + 2.0)))
    np.testing.assert_allclose(condition_phase(ramp), 0.0, atol=1e-9)


# feature vectors


def _segment(seed=0, n_links=2, n_sub=4, n=300):
    rng = np.random.default_rng(seed)
    return ActivitySegment(
        0,
        n * 10_000,
        n * 10.0,
        100.0,
        tuple(range(n_sub)),
        rng.uniform(0.5, 1.5, (n_links, n_sub, n)),
        rng.uniform(-np.pi, np.pi, (n_links, n_sub, n)),
    )


def test_vector_length():
    assert extract_features(_segment()).shape == (112,) == (feature_dim(2, 4),)
    assert extract_features(_segment(), "amplitude_only").shape == (56,)
    assert feature_dim(3, 5, "amplitude_only") == 105


def test_layout():
    seg = _segment(4)
    full = extract_features(seg).reshape(2, 4, 2, 7)
    amp = extract_features(seg, "amplitude_only").reshape(2, 4, 7)
    assert full[:, :, 0].tobytes() == amp.tobytes()
    np.testing.assert_array_equal(full[1, 2, 0], series_features(seg.amplitude[1, 2], 100.0))
    np.testing.assert_array_equal(full[0, 3, 1], series_features(condition_phase(seg.phase[0, 3]), 100.0))


def test_deterministic():
    assert extract_features(_segment(8)).tobytes() == extract_features(_segment(8)).tobytes()


def test_permuted_values_are_detected():
    seg = _segment(3)
    shuffled = ActivitySegment(
        seg.start_us, seg.end_us, seg.window_ms, seg.rate_hz, seg.subcarriers,
        seg.amplitude[..., ::-1].copy(), seg.phase, seg.truncated,
    )
    assert extract_features(shuffled).tobytes() != extract_features(seg).tobytes()


def test_all_finite():
    assert np.all(np.isfinite(extract_features(_segment(2))))


def test_empty_segment():
    with pytest.raises(EmptyChannel):
        extract_features(_segment(n=0))


# scaler


def test_standardize_fitting_set():
    X = np.random.default_rng(1).normal(3, 2, (40, 6))
    Z, sc = standardize(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(Z.std(axis=0), 1, atol=1e-9)


def test_zero_variance_dimension():
    X = np.random.default_rng(1).normal(size=(10, 3))
    X[:, 1] = 7.0
    Z, sc = standardize(X)
    assert sc.zero_std.tolist() == [False, True, False]
    assert np.all(Z[:, 1] == 0.0)


@given(st.integers(0, 10_000))
def test_unstandardize_round_trip(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 5)) * rng.uniform(0.1, 10, 5) + rng.normal(size=5)
    Z, sc = standardize(X)
    np.testing.assert_allclose(unstandardize(Z, sc), X, atol=1e-9)


def test_length_mismatch():
    _, sc = standardize(np.ones((3, 4)))
    with pytest.raises(LengthMismatch):
        sc.transform(np.ones((2, 5)))
    with pytest.raises(LengthMismatch):
        sc.inverse(np.ones(3))


def test_scaler_dict_round_trip():
    sc = Scaler.fit(np.random.default_rng(0).normal(size=(5, 3)))
    back = Scaler.from_dict(sc.to_dict())
    assert back.mean.tobytes() == sc.mean.tobytes() and back.std.tobytes() == sc.std.tobytes()
