"""Seven per-series statistics over amplitude and phase of an activity window.

Layout of the feature vector (row-major, frozen as ``LAYOUT_VERSION``)::

    for link in links:
        for subcarrier in selected subcarriers:
            for channel in ("amplitude", "phase"):
                std_norm, mad, period_ms, offset, iqr, entropy_bits, velocity

Two links x four subcarriers x two channels x seven features = 112 values.
In amplitude-only mode the phase rows are dropped (56 values).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadCounts, EmptyChannel, LengthMismatch
from .segmentation import ActivitySegment

LAYOUT_VERSION = 1
FEATURE_NAMES = ("std_norm", "mad", "period_ms", "offset", "iqr", "entropy", "velocity")
N_FEATURES = len(FEATURE_NAMES)
CHANNEL_MODES = {
    "amplitude_and_phase": ("amplitude", "phase"),
    "amplitude_only": ("amplitude",),
}
ENTROPY_BINS = 16


def select_subcarriers(n_total: int, k: int) -> list[int]:
    """``k`` evenly spread indices in ``[0, n_total)``, rounding half up."""
    if not (isinstance(n_total, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise BadCounts("counts must be integers")
    if not 2 <= k <= n_total:
        raise BadCounts(f"need 2 <= k <= n_total, got k={k}, n_total={n_total}")
    # floor(i * (n - 1) / (k - 1) + 1/2) in exact integer arithmetic
    return [(2 * i * (n_total - 1) + (k - 1)) // (2 * (k - 1)) for i in range(k)]


def feature_dim(n_links: int, n_subcarriers: int, channels: str = "amplitude_and_phase") -> int:
    return n_links * n_subcarriers * len(CHANNEL_MODES[channels]) * N_FEATURES


def series_features(x: np.ndarray, rate_hz: float) -> np.ndarray:
    """The seven statistics of one uniformly sampled series."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n == 0:
        raise EmptyChannel("empty series")
    out = np.zeros(N_FEATURES)
    if x.max() == x.min():
        return out
    m = max(1, n // 10)
    mu = x.mean()
    sd = x.std()
    out[0] = sd / (abs(mu) + 1e-9)
    med = np.median(x)
    out[1] = np.median(np.abs(x - med))
    sd_first = x[:m].std()
    hits = np.flatnonzero(np.abs(x - mu) > 2.0 * sd_first)
    if hits.size:
        out[2] = (hits[-1] - hits[0] + 1) * 1000.0 / rate_hz
    out[3] = x[-m:].mean() - x[:m].mean()
    q1, q3 = np.percentile(x, [25.0, 75.0])
    out[4] = q3 - q1
    counts, _ = np.histogram(x, bins=ENTROPY_BINS, range=(x.min(), x.max()))
    p = counts[counts > 0] / n
    out[5] = float(-(p * np.log2(p)).sum())
    if n > 1:
        out[6] = np.abs(np.diff(x)).max() * rate_hz
    return out


def condition_phase(phase: np.ndarray) -> np.ndarray:
    """Unwrap along time, then remove the least-squares line."""
    u = np.unwrap(np.asarray(phase, dtype=np.float64), axis=-1)
    n = u.shape[-1]
    if n < 2:
        return u - u
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    slope = ((u - u.mean(axis=-1, keepdims=True)) * tc).sum(axis=-1, keepdims=True) / (tc * tc).sum()
    return u - u.mean(axis=-1, keepdims=True) - slope * tc


def extract_features(seg: ActivitySegment, channels: str = "amplitude_and_phase") -> np.ndarray:
    if channels not in CHANNEL_MODES:
        raise ValueError(f"unknown channel mode {channels!r}")
    if seg.n_samples == 0:
        raise EmptyChannel("segment holds no samples")
    series = {"amplitude": seg.amplitude, "phase": condition_phase(seg.phase)}
    n_links, n_sub = seg.amplitude.shape[:2]
    rows = []
    for li in range(n_links):
        for si in range(n_sub):
            for ch in CHANNEL_MODES[channels]:
                rows.append(series_features(series[ch][li, si], seg.rate_hz))
    return np.concatenate(rows)


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, vectors) -> "Scaler":
        X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on zero vectors")
        return cls(X.mean(axis=0), X.std(axis=0))

    @property
    def zero_std(self) -> np.ndarray:
        return self.std == 0

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def transform(self, vectors) -> np.ndarray:
        X = np.asarray(vectors, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise LengthMismatch(f"vector length {X.shape[-1]} != scaler length {self.dim}")
        safe = np.where(self.zero_std, 1.0, self.std)
        return np.where(self.zero_std, 0.0, (X - self.mean) / safe)

    def inverse(self, vectors) -> np.ndarray:
        Z = np.asarray(vectors, dtype=np.float64)
        if Z.shape[-1] != self.dim:
            raise LengthMismatch(f"vector length {Z.shape[-1]} != scaler length {self.dim}")
        return Z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def standardize(vectors, scaler: Scaler | None = None) -> tuple[np.ndarray, Scaler]:
    """z-score vectors; fits a scaler on them when none is given."""
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if scaler is None:
        scaler = Scaler.fit(X)
    return scaler.transform(X), scaler


def unstandardize(vectors, scaler: Scaler) -> np.ndarray:
    return scaler.inverse(vectors)
