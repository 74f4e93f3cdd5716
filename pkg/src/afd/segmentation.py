"""Activity segmentation from the antenna-pair phase-difference variance.

The pipeline is::

    phase difference per subcarrier  ->  sliding log10-variance stream
        ->  windowed-mean stability test against a calibrated threshold
        ->  fluctuation-to-stable transitions (activity end points)
        ->  fixed-length activity windows ending at each transition

All sliding computations are written as explicit sums over window offsets
so that each output value depends only on the samples in its window, in a
fixed order.  The streaming detector relies on this for bit-identical
results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BadLinkIndex,
    BadSubcarrierIndex,
    EndOutOfRange,
    TraceTooShort,
    WindowTooShort,
)
from .preprocess import FilterSpec, UniformSeries, grid_offsets, preprocess_trace
from .trace import CsiTrace

VAR_FLOOR = 1e-12
TWO_PI = 2.0 * np.pi


def wrap_phase(x):
    """Wrap angles into (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def ms_to_samples(ms: float, rate_hz: float) -> int:
    return int(round(ms * rate_hz / 1000.0))


@dataclass(frozen=True)
class PhaseDiffVarianceStream:
    rate_hz: float
    log_var: np.ndarray
    t0_us: int = 0

    def __len__(self):
        return len(self.log_var)

    def timestamps(self) -> np.ndarray:
        return grid_offsets(len(self.log_var), self.rate_hz) + self.t0_us


@dataclass(frozen=True)
class StableThreshold:
    delta: float
    mu_stable: float
    sigma_stable: float
    var_window_ms: float = 200.0
    stable_window_ms: float = 1000.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "StableThreshold":
        return cls(
            delta=float(d["delta"]),
            mu_stable=float(d["mu_stable"]),
            sigma_stable=float(d["sigma_stable"]),
            var_window_ms=float(d.get("var_window_ms", 200.0)),
            stable_window_ms=float(d.get("stable_window_ms", 1000.0)),
        )

    def with_delta(self, delta: float) -> "StableThreshold":
        return StableThreshold(
            delta, self.mu_stable, self.sigma_stable, self.var_window_ms, self.stable_window_ms
        )


def _check_links(n_links: int, link_a: int, link_b: int):
    for li in (link_a, link_b):
        if not (0 <= li < n_links):
            raise BadLinkIndex(f"link index {li} out of range [0, {n_links})")
    if link_a == link_b:
        raise BadLinkIndex("link_a and link_b must differ")


def _check_subcarriers(n_sub: int, subcarriers) -> np.ndarray:
    if subcarriers is None:
        return np.arange(n_sub)
    idx = np.asarray(list(subcarriers), dtype=np.int64)
    if idx.size == 0 or np.any(idx < 0) or np.any(idx >= n_sub):
        raise BadSubcarrierIndex(f"subcarrier indices must lie in [0, {n_sub})")
    return idx


def phase_difference(csi: np.ndarray, link_a: int, link_b: int, subcarriers: np.ndarray) -> np.ndarray:
    """wrap(angle(h_a) - angle(h_b)) for a (n, L, S) complex block."""
    theta_a = np.angle(csi[:, link_a, subcarriers])
    theta_b = np.angle(csi[:, link_b, subcarriers])
    return wrap_phase(theta_a - theta_b)


def phase_difference_stream(
    trace: CsiTrace, link_a: int = 0, link_b: int = 1, subcarriers=None
) -> UniformSeries:
    """Phase difference between two links, one column per listed subcarrier."""
    _check_links(trace.meta.n_links, link_a, link_b)
    idx = _check_subcarriers(trace.meta.n_subcarriers, subcarriers)
    t0 = int(trace.t_us[0]) if len(trace) else 0
    return UniformSeries(
        trace.meta.nominal_rate_hz, phase_difference(trace.csi, link_a, link_b, idx), t0
    )


def unwrap_time(d: np.ndarray, prev_wrapped=None, prev_unwrapped=None) -> np.ndarray:
    """Accumulate wrapped increments along axis 0.

    With ``prev_*`` given, continues an earlier block exactly.
    """
    if len(d) == 0:
        return d.copy()
    if prev_wrapped is None:
        steps = wrap_phase(np.diff(d, axis=0))
        return np.cumsum(np.concatenate([d[:1], steps]), axis=0)
    steps = wrap_phase(np.diff(np.concatenate([prev_wrapped[None], d]), axis=0))
    return np.cumsum(np.concatenate([prev_unwrapped[None], steps]), axis=0)[1:]


def sliding_variance(x: np.ndarray, w: int) -> np.ndarray:
    """Population variance of every length-``w`` window along axis 0."""
    m = len(x) - w + 1
    if m <= 0:
        return np.zeros((0,) + x.shape[1:])
    acc = x[0:m].copy()
    for k in range(1, w):
        acc = acc + x[k : k + m]
    mean = acc / w
    dev = x[0:m] - mean
    sq = dev * dev
    for k in range(1, w):
        dev = x[k : k + m] - mean
        sq = sq + dev * dev
    return sq / w


def sliding_mean(x: np.ndarray, w: int) -> np.ndarray:
    m = len(x) - w + 1
    if m <= 0:
        return np.zeros((0,) + x.shape[1:])
    acc = x[0:m].copy()
    for k in range(1, w):
        acc = acc + x[k : k + m]
    return acc / w


def _log_of_mean_variance(var: np.ndarray) -> np.ndarray:
    """Average per-subcarrier variances (columns) and take log10 with a floor."""
    acc = var[:, 0].copy()
    for c in range(1, var.shape[1]):
        acc = acc + var[:, c]
    v = acc / var.shape[1]
    return np.log10(np.maximum(v, VAR_FLOOR))


def log_variance_stream(diff: UniformSeries, var_window_ms: float = 200.0) -> PhaseDiffVarianceStream:
    """log10 of the trailing-window variance of the phase difference.

    Each subcarrier's difference is first unwrapped along time so that
    crossings of +-pi do not read as jumps.  Output sample ``i`` covers the
    window ending at input sample ``i + w - 1``.
    """
    w = ms_to_samples(var_window_ms, diff.rate_hz)
    if w < 2:
        raise WindowTooShort(f"variance window of {var_window_ms} ms spans {w} sample(s)")
    d = np.asarray(diff.values, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    u = unwrap_time(d)
    var = sliding_variance(u, w)
    t0 = int(diff.t0_us + grid_offsets(1, diff.rate_hz, w - 1)[0])
    return PhaseDiffVarianceStream(diff.rate_hz, _log_of_mean_variance(var), t0)


def threshold_from_stream(
    stream: PhaseDiffVarianceStream, var_window_ms: float = 200.0, stable_window_ms: float = 1000.0
) -> StableThreshold:
    lv = np.asarray(stream.log_var, dtype=np.float64)
    if lv.size == 0:
        raise TraceTooShort("empty variance stream")
    mu = float(np.mean(lv))
    sigma = float(np.std(lv))
    return StableThreshold(mu + 6.0 * sigma, mu, sigma, var_window_ms, stable_window_ms)


@dataclass(frozen=True)
class SegmentParams:
    """The subset of configuration the segmenter needs."""

    target_rate_hz: float = 100.0
    cutoff_hz: float = 10.0
    filter_order: int = 2
    var_window_ms: float = 200.0
    stable_window_ms: float = 1000.0
    min_fluct_ms: float = 500.0
    window_ms: float = 3000.0
    link_a: int = 0
    link_b: int = 1
    subcarriers: tuple | None = None

    @property
    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.cutoff_hz, self.filter_order)


def variance_stream_for(trace: CsiTrace, params: SegmentParams, preprocessed: bool = False):
    pre = trace if preprocessed else preprocess_trace(trace, params.target_rate_hz, params.filter_spec)
    diff = phase_difference_stream(pre, params.link_a, params.link_b, params.subcarriers)
    return log_variance_stream(diff, params.var_window_ms)


def calibrate_threshold(stable_trace: CsiTrace, params: SegmentParams = SegmentParams()) -> StableThreshold:
    """Fit mu/sigma of the log-variance stream of a known-still recording.

    The threshold is ``mu + 6 * sigma``.
    """
    if len(stable_trace) < 2 or stable_trace.duration_us < 10 * params.var_window_ms * 1000:
        raise TraceTooShort(
            f"calibration trace spans {stable_trace.duration_us / 1000:.0f} ms; "
            f"need at least {10 * params.var_window_ms:.0f} ms"
        )
    stream = variance_stream_for(stable_trace, params)
    return threshold_from_stream(stream, params.var_window_ms, params.stable_window_ms)


@dataclass
class TransitionState:
    """Carry-over between chunks of the stability sequence."""

    offset: int = 0
    nonstable_run: int = 0
    last_transition: int | None = None


def scan_transitions(
    stable: np.ndarray, min_fluct: int, refractory: int, state: TransitionState
) -> list[int]:
    """Indices (global) of stable samples preceded by >= ``min_fluct`` unstable ones.

    A candidate closer than ``refractory`` samples to the previous emitted
    transition is dropped.  ``state`` is updated in place.
    """
    stable = np.asarray(stable, dtype=bool)
    n = len(stable)
    s_idx = np.flatnonzero(stable)
    out = []
    if s_idx.size:
        prev = np.concatenate([[-1], s_idx[:-1]])
        run = s_idx - prev - 1
        run[0] = s_idx[0] + state.nonstable_run
        for p in s_idx[run >= max(min_fluct, 1)]:
            g = int(p) + state.offset
            if state.last_transition is not None and g - state.last_transition < refractory:
                continue
            out.append(g)
            state.last_transition = g
        state.nonstable_run = n - int(s_idx[-1]) - 1
    else:
        state.nonstable_run += n
    state.offset += n
    return out


def stable_mask(stream: PhaseDiffVarianceStream, th: StableThreshold) -> np.ndarray:
    """``True`` where the mean log-variance over the next stable window is <= delta."""
    s = ms_to_samples(th.stable_window_ms, stream.rate_hz)
    return sliding_mean(np.asarray(stream.log_var, dtype=np.float64), max(s, 1)) <= th.delta


def detect_endpoints(
    stream: PhaseDiffVarianceStream, th: StableThreshold, min_fluct_ms: float = 500.0
) -> list[int]:
    """Timestamps (us) where the stream enters a stable run after a fluctuation.

    A sample is stable when the mean of ``log_var`` over the stable window
    starting at it is at most ``th.delta``.  A transition needs at least
    ``min_fluct_ms`` of unstable samples right before it, and transitions
    closer than one stable window to the previous one are suppressed.
    """
    mask = stable_mask(stream, th)
    s = max(ms_to_samples(th.stable_window_ms, stream.rate_hz), 1)
    m = ms_to_samples(min_fluct_ms, stream.rate_hz)
    idx = scan_transitions(mask, m, s, TransitionState())
    return [int(stream.t0_us + grid_offsets(1, stream.rate_hz, i)[0]) for i in idx]


@dataclass(frozen=True, eq=False)
class ActivitySegment:
    """Preprocessed amplitude and phase over ``[start_us, end_us)``.

    ``amplitude`` and ``phase`` are shaped ``(n_links, n_subcarriers, n)``.
    """

    start_us: int
    end_us: int
    window_ms: float
    rate_hz: float
    subcarriers: tuple
    amplitude: np.ndarray
    phase: np.ndarray
    truncated: bool = False
    links: tuple = field(default=(0, 1))

    @property
    def n_samples(self) -> int:
        return int(self.amplitude.shape[-1])

    def to_dict(self) -> dict:
        return {
            "start_us": self.start_us,
            "end_us": self.end_us,
            "window_ms": self.window_ms,
            "rate_hz": self.rate_hz,
            "links": list(self.links),
            "subcarriers": list(self.subcarriers),
            "truncated": self.truncated,
            "amplitude": self.amplitude.tolist(),
            "phase": self.phase.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivitySegment":
        return cls(
            start_us=int(d["start_us"]),
            end_us=int(d["end_us"]),
            window_ms=float(d["window_ms"]),
            rate_hz=float(d["rate_hz"]),
            subcarriers=tuple(int(s) for s in d["subcarriers"]),
            amplitude=np.asarray(d["amplitude"], dtype=np.float64),
            phase=np.asarray(d["phase"], dtype=np.float64),
            truncated=bool(d.get("truncated", False)),
            links=tuple(int(x) for x in d.get("links", (0, 1))),
        )


def extract_segment(
    trace: CsiTrace, end_us: int, window_ms: float = 3000.0, subcarriers=None, links=None
) -> ActivitySegment:
    """Cut the window ``[end_us - window_ms, end_us)`` out of a preprocessed trace."""
    if len(trace) == 0 or end_us <= trace.t_us[0] or end_us > trace.t_us[-1]:
        raise EndOutOfRange(f"end {end_us} us lies outside the trace")
    sub = tuple(int(s) for s in _check_subcarriers(trace.meta.n_subcarriers, subcarriers))
    if links is None:
        links = tuple(range(trace.meta.n_links))
    for li in links:
        if not 0 <= li < trace.meta.n_links:
            raise BadLinkIndex(f"link index {li} out of range")
    start = int(end_us - round(window_ms * 1000))
    truncated = start < trace.t_us[0]
    if truncated:
        start = int(trace.t_us[0])
    lo = int(np.searchsorted(trace.t_us, start, side="left"))
    hi = int(np.searchsorted(trace.t_us, end_us, side="left"))
    block = trace.csi[lo:hi][:, list(links)][:, :, list(sub)]
    return segment_from_block(block, start, int(end_us), window_ms, trace.meta.nominal_rate_hz, sub, links, truncated)


def segment_from_block(block, start_us, end_us, window_ms, rate_hz, subcarriers, links, truncated):
    """Build a segment from a (n, L, K) complex block."""
    h = np.ascontiguousarray(np.transpose(block, (1, 2, 0)))
    return ActivitySegment(
        start_us=int(start_us),
        end_us=int(end_us),
        window_ms=float(window_ms),
        rate_hz=float(rate_hz),
        subcarriers=tuple(subcarriers),
        amplitude=np.abs(h),
        phase=np.angle(h),
        truncated=bool(truncated),
        links=tuple(links),
    )
