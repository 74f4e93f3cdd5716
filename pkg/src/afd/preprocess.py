"""Resampling onto a uniform time grid and causal low-pass filtering.

Both stages have a batch function and a streaming counterpart.  The two
share their arithmetic helpers, so feeding a stream in arbitrary chunks
gives bit-identical output to the batch call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import InvalidCutoff, TooFewPackets
from .trace import CsiTrace, TraceMeta


@dataclass(frozen=True)
class UniformSeries:
    """Samples on the grid ``t0_us + k * 1e6 / rate_hz`` (time on axis 0)."""

    rate_hz: float
    values: np.ndarray
    t0_us: int = 0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")

    def __len__(self):
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return grid_offsets(len(self.values), self.rate_hz) + self.t0_us


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = 10.0
    order: int = 2


def grid_offsets(n: int, rate_hz: float, start: int = 0) -> np.ndarray:
    """Integer microsecond offsets of grid samples ``start .. start+n-1``."""
    k = np.arange(start, start + n, dtype=np.float64)
    return np.rint(k * (1e6 / rate_hz)).astype(np.int64)


def _grid_count(span_us: int, rate_hz: float) -> int:
    n = int(np.floor(span_us * rate_hz / 1e6)) + 1
    # guard against rounding at the last grid point
    while n > 0 and grid_offsets(1, rate_hz, n - 1)[0] > span_us:
        n -= 1
    while grid_offsets(1, rate_hz, n)[0] <= span_us:
        n += 1
    return n


def _interp(t_grid: np.ndarray, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Linear interpolation of float array ``v`` (time on axis 0).

    Grid points that coincide with an input timestamp get that packet's
    value unchanged.
    """
    j = np.searchsorted(t, t_grid, side="right") - 1
    j = np.clip(j, 0, len(t) - 2)
    t_lo = t[j]
    t_hi = t[j + 1]
    frac = (t_grid - t_lo).astype(np.float64) / (t_hi - t_lo).astype(np.float64)
    shape = (-1,) + (1,) * (v.ndim - 1)
    frac_b = frac.reshape(shape)
    v_lo = v[j]
    v_hi = v[j + 1]
    out = v_lo + (v_hi - v_lo) * frac_b
    out = np.where(frac_b == 0.0, v_lo, out)
    return np.where(frac_b == 1.0, v_hi, out)


def _as_float(csi: np.ndarray) -> np.ndarray:
    """View complex (n, L, S) as float (n, L, S, 2)."""
    return np.ascontiguousarray(csi).view(np.float64).reshape(csi.shape + (2,))


def _as_complex(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).view(np.complex128).reshape(x.shape[:-1])


def interpolate_uniform(trace: CsiTrace, target_rate_hz: float) -> CsiTrace:
    """Resample a trace onto the uniform grid spanning its first..last packet.

    Real and imaginary parts are interpolated independently.  The grid
    starts at the first packet and stops at or before the last one.
    """
    if not target_rate_hz > 0:
        raise ValueError("target_rate_hz must be positive")
    if len(trace) < 2:
        raise TooFewPackets(f"need at least 2 packets, got {len(trace)}")
    t = trace.t_us
    n = _grid_count(int(t[-1] - t[0]), target_rate_hz)
    t_grid = grid_offsets(n, target_rate_hz) + t[0]
    values = _interp(t_grid, t, _as_float(trace.csi))
    meta = TraceMeta(
        trace.meta.n_links, trace.meta.n_subcarriers, float(target_rate_hz), trace.meta.trace_id
    )
    return CsiTrace(meta, t_grid, _as_complex(values))


def butterworth_sos(spec: FilterSpec, rate_hz: float) -> np.ndarray:
    """Second-order sections of a digital (bilinear) Butterworth low-pass."""
    if not (isinstance(spec.order, (int, np.integer)) and spec.order >= 1):
        raise InvalidCutoff(f"filter order must be a positive integer, got {spec.order}")
    if not (0 < spec.cutoff_hz < rate_hz / 2):
        raise InvalidCutoff(
            f"cutoff {spec.cutoff_hz} Hz must lie in (0, {rate_hz / 2}) for rate {rate_hz} Hz"
        )
    return signal.butter(int(spec.order), spec.cutoff_hz, btype="low", fs=rate_hz, output="sos")


def butterworth_magnitude(f_hz, spec: FilterSpec, rate_hz: float):
    """Closed-form |H| of the bilinear Butterworth designed by ``butterworth_sos``."""
    warp = np.tan(np.pi * np.asarray(f_hz, dtype=float) / rate_hz) / np.tan(
        np.pi * spec.cutoff_hz / rate_hz
    )
    return 1.0 / np.sqrt(1.0 + warp ** (2 * spec.order))


class StreamingLowpass:
    """Causal biquad-cascade filter applied along axis 0, chunk by chunk.

    The state is seeded from the first sample so a constant input passes
    through unchanged from the very first output.
    """

    def __init__(self, sos: np.ndarray):
        self.sos = sos
        self._zi = None

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return x.copy()
        if self._zi is None:
            zi = signal.sosfilt_zi(self.sos)
            self._zi = zi.reshape(zi.shape + (1,) * (x.ndim - 1)) * x[0]
        y, self._zi = signal.sosfilt(self.sos, x, axis=0, zi=self._zi)
        return y


def lowpass(series: UniformSeries, spec: FilterSpec = FilterSpec()) -> UniformSeries:
    sos = butterworth_sos(spec, series.rate_hz)
    y = StreamingLowpass(sos).process(series.values)
    return UniformSeries(series.rate_hz, y, series.t0_us)


def preprocess_trace(
    trace: CsiTrace, target_rate_hz: float = 100.0, spec: FilterSpec = FilterSpec()
) -> CsiTrace:
    """Resample to a uniform grid, then low-pass the real and imaginary parts."""
    uniform = interpolate_uniform(trace, target_rate_hz)
    sos = butterworth_sos(spec, target_rate_hz)
    filtered = StreamingLowpass(sos).process(_as_float(uniform.csi))
    return uniform.with_csi(_as_complex(filtered))


class UniformResampler:
    """Streaming counterpart of :func:`interpolate_uniform`.

    ``push`` returns the grid samples that became computable, i.e. those at
    or before the newest packet.
    """

    def __init__(self, target_rate_hz: float):
        if not target_rate_hz > 0:
            raise ValueError("target_rate_hz must be positive")
        self.rate = float(target_rate_hz)
        self._t0 = None
        self._k = 0
        self._last_t = None
        self._last_v = None

    def push(self, t_us: np.ndarray, csi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t_us = np.asarray(t_us, dtype=np.int64)
        v = _as_float(np.asarray(csi, dtype=np.complex128))
        if len(t_us) == 0:
            return t_us, np.zeros((0,) + v.shape[1:-1], dtype=np.complex128)
        if self._last_t is not None and t_us[0] <= self._last_t:
            raise ValueError("packet timestamps must be strictly increasing")
        if self._t0 is None:
            self._t0 = int(t_us[0])
        if self._last_t is not None:
            t_all = np.concatenate([[self._last_t], t_us])
            v_all = np.concatenate([self._last_v[None], v])
        else:
            t_all, v_all = t_us, v
        self._last_t = int(t_us[-1])
        self._last_v = v[-1].copy()
        if len(t_all) < 2:
            return np.zeros(0, dtype=np.int64), np.zeros((0,) + v.shape[1:-1], dtype=np.complex128)
        total = _grid_count(self._last_t - self._t0, self.rate)
        n_new = total - self._k
        t_grid = grid_offsets(n_new, self.rate, self._k) + self._t0
        self._k = total
        out = _interp(t_grid, t_all, v_all)
        return t_grid, _as_complex(out)


class StreamingPreprocessor:
    """Resampler followed by the low-pass filter, fed packet chunks."""

    def __init__(self, target_rate_hz: float = 100.0, spec: FilterSpec = FilterSpec()):
        self.resampler = UniformResampler(target_rate_hz)
        self.filter = StreamingLowpass(butterworth_sos(spec, target_rate_hz))

    def push(self, t_us: np.ndarray, csi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t_grid, values = self.resampler.push(t_us, csi)
        if len(t_grid) == 0:
            return t_grid, values
        filtered = self.filter.process(_as_float(values))
        return t_grid, _as_complex(filtered)
