"""Deterministic synthetic CSI traces with ground-truth activity labels.

The channel of link ``l`` and subcarrier ``s`` is a fixed complex baseline
plus, while someone moves, a perturbation

    A * scale * g[l, s] * m(t) * exp(j * (phi_l(t) + psi[l, s]))

where ``m`` is a kind-specific envelope and ``phi_l`` an independent phase
trajectory per link, so the inter-link phase difference wanders during
motion and freezes when the person is still.  Complex Gaussian noise is
added everywhere.  Time not covered by any event is idle presence: a weak,
never-settling sway.

Falls and fall-like activities (sitting or lying down) both end in stillness.
A fall starts with a short stumble (a quick phase jump) and accelerates
(chirped phase); sitting and lying down turn at a steady rate.  Each event
also gets a random amplitude scale standing in for where the person is
relative to the link, which blurs amplitude cues but leaves phase shape alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import InvalidScenario, MalformedScenario, OverlappingEvents
from .trace import CsiTrace, TraceMeta

KINDS = ("fall", "sit_down", "lie_down", "walk", "stand_up", "still", "sweep")
FALL_LIKE = ("sit_down", "lie_down")
ENDING_KINDS = ("fall",) + FALL_LIKE
MIN_REST_MS = 2000


@dataclass(frozen=True)
class KindProfile:
    amplitude: float  # in units of MOTION_UNIT
    rise: float  # taper fractions of the event duration
    decay: float
    rate_hz: tuple  # range of the phase turning rate
    end_rate_hz: tuple | None = None  # chirp target range
    sway: float = 0.0  # depth of quasi-periodic phase modulation
    sway_hz: tuple = (0.0, 0.0)
    stumble: bool = False
    scale: tuple = (0.75, 1.25)

    def updated(self, overrides: dict | None) -> "KindProfile":
        if not overrides:
            return self
        fields_ = {k: (tuple(v) if isinstance(v, list) else v) for k, v in overrides.items()}
        unknown = set(fields_) - set(self.__dataclass_fields__)
        if unknown:
            raise InvalidScenario(f"unknown profile keys {sorted(unknown)}")
        return replace(self, **fields_)


# Perturbation magnitude of one motion unit relative to the static channel
# (|baseline| ~ 1).  The strongest motion stays below the static path.
MOTION_UNIT = 0.15

PROFILES = {
    "fall": KindProfile(3.0, 0.2, 0.06, (1.0, 2.0), (3.5, 5.0), stumble=True),
    "sit_down": KindProfile(2.0, 0.35, 0.1, (1.5, 4.0)),
    "lie_down": KindProfile(2.0, 0.3, 0.12, (1.2, 3.5)),
    "stand_up": KindProfile(2.0, 0.3, 0.3, (1.5, 2.5)),
    "walk": KindProfile(1.5, 0.1, 0.1, (0.6, 1.2), sway=1.5, sway_hz=(1.6, 2.2), scale=(1.0, 1.0)),
    "sweep": KindProfile(1.0, 0.1, 0.1, (0.3, 0.8), sway=2.0, sway_hz=(0.6, 1.0), scale=(1.0, 1.0)),
}
IDLE = KindProfile(1.3, 0.0, 0.0, (0.8, 1.5), sway=1.0, sway_hz=(0.3, 0.9), scale=(1.0, 1.0))
STUMBLE_AT = 0.08  # fraction of a fall's duration
STUMBLE_S = 0.1

ACTIVITY_MS = {"fall": (1000, 1500), "sit_down": (1500, 2500), "lie_down": (1800, 2500)}
# Fixed-length bursts: falls and fall-like events share one steady motion and
# differ only by the stumble right after onset.
BURST_PROFILE = {"amplitude": 2.5, "rise": 0.1, "decay": 0.06, "rate_hz": [1.0, 2.0], "end_rate_hz": None}
# Bursts are preceded by brisk walking whose quick steps change the channel
# about as fast as a stumble, so only windows starting after the walk see
# the stumble as distinctive.
BURST_LEAD_PROFILE = {"amplitude": 2.5, "sway": 3.0}
GAIN_DRIFT = 0.1


@dataclass(frozen=True)
class Event:
    kind: str
    start_ms: int
    end_ms: int
    profile: dict | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "start_ms": self.start_ms, "end_ms": self.end_ms}
        if self.profile:
            d["profile"] = dict(self.profile)
        return d


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_ms: int
    rate_hz: float = 100.0
    noise_sigma: float = 0.03
    events: tuple = ()
    n_links: int = 2
    n_subcarriers: int = 30
    trace_id: str = ""
    jitter_us: int = 0
    gain_drift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        validate_scenario(self)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "rate_hz": self.rate_hz,
            "noise_sigma": self.noise_sigma,
            "n_links": self.n_links,
            "n_subcarriers": self.n_subcarriers,
            "trace_id": self.trace_id,
            "jitter_us": self.jitter_us,
            "gain_drift": self.gain_drift,
            "events": [e.to_dict() for e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass(frozen=True)
class TruthEvent:
    kind: str
    start_us: int
    end_us: int
    expect_endpoint: bool


@dataclass(frozen=True)
class GroundTruth:
    trace_id: str
    events: tuple = field(default_factory=tuple)

    @property
    def falls(self) -> list[TruthEvent]:
        return [e for e in self.events if e.kind == "fall"]

    @property
    def fall_likes(self) -> list[TruthEvent]:
        return [e for e in self.events if e.kind in FALL_LIKE]

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "events": [
                {"kind": e.kind, "start_us": e.start_us, "end_us": e.end_us, "expect_endpoint": e.expect_endpoint}
                for e in self.events
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            str(d.get("trace_id", "")),
            tuple(
                TruthEvent(str(e["kind"]), int(e["start_us"]), int(e["end_us"]), bool(e.get("expect_endpoint", e["kind"] in ENDING_KINDS)))
                for e in d["events"]
            ),
        )


def validate_scenario(sc: Scenario) -> None:
    if not (isinstance(sc.duration_ms, int) and sc.duration_ms > 0):
        raise InvalidScenario("duration_ms must be a positive integer")
    if not sc.rate_hz > 0:
        raise InvalidScenario("rate_hz must be positive")
    if not sc.noise_sigma >= 0:
        raise InvalidScenario("noise_sigma must be non-negative")
    if sc.n_links < 2 or sc.n_subcarriers < 2:
        raise InvalidScenario("need at least 2 links and 2 subcarriers")
    if not 0 <= sc.jitter_us < 1e6 / sc.rate_hz:
        raise InvalidScenario("jitter_us must be below one packet interval")
    if not sc.gain_drift >= 0:
        raise InvalidScenario("gain_drift must be non-negative")
    events = sorted(sc.events, key=lambda e: (e.start_ms, e.end_ms))
    for e in events:
        if e.kind not in KINDS:
            raise InvalidScenario(f"unknown event kind {e.kind!r}")
        if not 0 <= e.start_ms < e.end_ms <= sc.duration_ms:
            raise InvalidScenario(f"event {e} must satisfy 0 <= start < end <= duration")
        if e.profile is not None:
            if e.kind == "still":
                raise InvalidScenario("still events take no profile")
            PROFILES[e.kind].updated(e.profile)
    for a, b in zip(events, events[1:]):
        if b.start_ms < a.end_ms:
            raise OverlappingEvents(f"{a.kind}@{a.start_ms} overlaps {b.kind}@{b.start_ms}")
    for k, e in enumerate(events):
        if e.kind in ENDING_KINDS:
            nxt = events[k + 1] if k + 1 < len(events) else None
            if nxt is None or nxt.kind != "still" or nxt.start_ms != e.end_ms or nxt.end_ms - nxt.start_ms < MIN_REST_MS:
                raise InvalidScenario(
                    f"{e.kind} ending at {e.end_ms} ms must be followed immediately by >= {MIN_REST_MS} ms of still"
                )


def scenario_from_dict(d) -> Scenario:
    if not isinstance(d, dict):
        raise MalformedScenario("scenario must be a JSON object")
    try:
        events = tuple(
            Event(str(e["kind"]), int(e["start_ms"]), int(e["end_ms"]), e.get("profile"))
            for e in d.get("events", [])
        )
        return Scenario(
            seed=int(d["seed"]),
            duration_ms=int(d["duration_ms"]),
            rate_hz=float(d.get("rate_hz", 100.0)),
            noise_sigma=float(d.get("noise_sigma", 0.03)),
            events=events,
            n_links=int(d.get("n_links", 2)),
            n_subcarriers=int(d.get("n_subcarriers", 30)),
            trace_id=str(d.get("trace_id", "")),
            jitter_us=int(d.get("jitter_us", 0)),
            gain_drift=float(d.get("gain_drift", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenario):
            raise
        raise MalformedScenario(f"bad scenario: {exc!r}") from None


def load_scenario(data: bytes | str) -> Scenario:
    try:
        d = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedScenario(f"scenario is not JSON: {exc}") from None
    return scenario_from_dict(d)


def _taper(u: np.ndarray, rise: float, decay: float) -> np.ndarray:
    m = np.ones_like(u)
    if rise > 0:
        r = u < rise
        m[r] = 0.5 - 0.5 * np.cos(np.pi * u[r] / rise)
    if decay > 0:
        f = u > 1 - decay
        m[f] = np.minimum(m[f], 0.5 - 0.5 * np.cos(np.pi * (1 - u[f]) / decay))
    return m


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _perturbation(rng, prof: KindProfile, t_s: np.ndarray, t_start: float, dur: float, n_links: int, n_sub: int, kind: str) -> np.ndarray:
    """Complex perturbation, shape (len(t_s), n_links, n_sub)."""
    u = (t_s - t_start) / dur
    tau = t_s - t_start
    scale = rng.uniform(*prof.scale)
    env = MOTION_UNIT * prof.amplitude * scale * (_taper(u, prof.rise, prof.decay) if kind != "idle" else np.ones_like(u))
    s_idx = np.arange(n_sub)
    # one body motion, seen by each link through its own geometry
    sign = rng.choice((-1.0, 1.0))
    f0 = rng.uniform(*prof.rate_hz)
    phi = 2 * np.pi * f0 * tau
    if prof.end_rate_hz is not None:
        f1 = rng.uniform(*prof.end_rate_hz)
        phi = 2 * np.pi * (f0 * tau + (f1 - f0) * tau * tau / (2 * dur))
    if prof.sway:
        fs = rng.uniform(*prof.sway_hz)
        phi = phi + prof.sway * np.sin(2 * np.pi * fs * tau + rng.uniform(0, 2 * np.pi))
    if prof.stumble:
        jump = np.pi * rng.uniform(0.8, 1.2)
        phi = phi + jump * _smoothstep((tau - STUMBLE_AT * dur) / STUMBLE_S)
    out = np.empty((len(t_s), n_links, n_sub), dtype=np.complex128)
    for li in range(n_links):
        doppler = sign * rng.uniform(0.85, 1.15)
        phi_l = doppler * phi + rng.uniform(-np.pi, np.pi)
        gain = 1.0 + 0.1 * np.sin(2 * np.pi * s_idx / n_sub * rng.uniform(0.5, 1.5) + rng.uniform(0, 2 * np.pi))
        psi = 2 * np.pi * rng.uniform(0, 1) * s_idx / n_sub
        out[:, li, :] = (env * np.exp(1j * phi_l))[:, None] * (gain * np.exp(1j * psi))[None, :]
    return out


def _gain_drift(rng, t_s: np.ndarray, n_links: int, sigma: float) -> np.ndarray:
    """Slow per-link log-gain wander (receiver gain control), std ``sigma``."""
    out = np.zeros((len(t_s), n_links))
    for li in range(n_links):
        f = rng.uniform(0.05, 0.5, 3)
        ph = rng.uniform(0, 2 * np.pi, 3)
        out[:, li] = np.sin(2 * np.pi * f[None, :] * t_s[:, None] + ph[None, :]).sum(axis=1)
    # each unit sinusoid has variance 1/2
    return out * (sigma / math.sqrt(1.5))


def _gaps(sc: Scenario) -> list[tuple[int, int]]:
    gaps, t = [], 0
    for e in sorted(sc.events, key=lambda e: e.start_ms):
        if e.start_ms > t:
            gaps.append((t, e.start_ms))
        t = max(t, e.end_ms)
    if t < sc.duration_ms:
        gaps.append((t, sc.duration_ms))
    return gaps


def packet_times(sc: Scenario, rng) -> np.ndarray:
    n = int(math.floor(sc.duration_ms * sc.rate_hz / 1000.0))
    base = np.rint(np.arange(n) * (1e6 / sc.rate_hz)).astype(np.int64)
    if sc.jitter_us:
        base = base + rng.integers(0, sc.jitter_us + 1, size=n)
    return base


def generate_trace(sc: Scenario) -> tuple[CsiTrace, GroundTruth]:
    validate_scenario(sc)
    rng = np.random.default_rng(sc.seed)
    L, S = sc.n_links, sc.n_subcarriers
    t_us = packet_times(sc, rng)
    t_s = t_us / 1e6
    baseline = rng.uniform(0.8, 1.2, (L, S)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (L, S)))
    h = np.broadcast_to(baseline, (len(t_us), L, S)).copy()

    spans = [(e.kind, e.start_ms, e.end_ms, e.profile) for e in sorted(sc.events, key=lambda e: e.start_ms)]
    spans += [("idle", a, b, None) for a, b in _gaps(sc)]
    spans.sort(key=lambda s: s[1])
    for kind, a, b, overrides in spans:
        if kind == "still":
            continue
        prof = IDLE if kind == "idle" else PROFILES[kind].updated(overrides)
        lo, hi = np.searchsorted(t_us, [a * 1000, b * 1000], side="left")
        # draw parameters even for empty spans to keep the stream aligned
        p = _perturbation(rng, prof, t_s[lo:hi], a / 1000.0, (b - a) / 1000.0, L, S, kind)
        h[lo:hi] += p

    if sc.gain_drift:
        h *= np.exp(_gain_drift(rng, t_s, L, sc.gain_drift))[:, :, None]
    noise = rng.standard_normal((len(t_us), L, S, 2)) * (sc.noise_sigma / math.sqrt(2))
    h.real += noise[..., 0]
    h.imag += noise[..., 1]
    meta = TraceMeta(L, S, float(sc.rate_hz), sc.trace_id or f"synth-{sc.seed}")
    truth = GroundTruth(
        meta.trace_id,
        tuple(
            TruthEvent(e.kind, e.start_ms * 1000, e.end_ms * 1000, e.kind in ENDING_KINDS)
            for e in sorted(sc.events, key=lambda e: e.start_ms)
        ),
    )
    return CsiTrace(meta, t_us, h), truth


def still_scenario(
    seed: int = 7, duration_ms: int = 30000, noise_sigma: float = 0.03, jitter_us: int = 1500, gain_drift: float = GAIN_DRIFT
) -> Scenario:
    return Scenario(
        seed,
        duration_ms,
        noise_sigma=noise_sigma,
        events=(Event("still", 0, duration_ms),),
        trace_id=f"still-{seed}",
        jitter_us=jitter_us,
        gain_drift=gain_drift,
    )


def _r10(x: float) -> int:
    return int(round(x / 10.0)) * 10




def _cycle_scenario(seed: int, kinds, noise_sigma, jitter_us, burst_ms, trace_id, gain_drift=0.0) -> Scenario:
    rng = np.random.default_rng(seed)
    events, t = [], 0
    for kind in kinds:
        t += _r10(rng.uniform(800, 2000))
        r = rng.uniform()
        if burst_ms or r < 0.35 or r > 0.9:
            other = "walk" if burst_ms or r < 0.35 else "sweep"
            d = _r10(rng.uniform(2000, 4000))
            events.append(Event(other, t, t + d, BURST_LEAD_PROFILE if burst_ms else None))
            # bursts follow other motion closely; regular events leave a pause
            t += d + _r10(rng.uniform(100, 300) if burst_ms else rng.uniform(1500, 2500))
        if burst_ms:
            d = burst_ms
            prof = dict(BURST_PROFILE, stumble=kind == "fall")
        else:
            d = _r10(rng.uniform(*ACTIVITY_MS[kind]))
            prof = None
        events.append(Event(kind, t, t + d, prof))
        t += d
        rest = _r10(rng.uniform(2500, 3500))
        events.append(Event("still", t, t + rest))
        t += rest
        d = _r10(rng.uniform(900, 1300))
        events.append(Event("stand_up", t, t + d))
        t += d
    t += 1500
    return Scenario(
        seed, t, noise_sigma=noise_sigma, events=tuple(events), trace_id=trace_id, jitter_us=jitter_us, gain_drift=gain_drift
    )


def negative_scenarios(
    seed: int = 9000, noise_sigma: float = 0.03, jitter_us: int = 1500, gain_drift: float = GAIN_DRIFT
) -> list[Scenario]:
    """Traces holding only walking, sweeping and standing up."""
    out = []
    for k, kind in enumerate(("walk", "walk", "sweep", "sweep", "stand_up", "stand_up")):
        rng = np.random.default_rng(seed + k)
        events, t = [], 0
        if kind == "stand_up":
            events.append(Event("still", 0, 4000))
            t = 4000
            d = _r10(rng.uniform(900, 1300))
            events.append(Event("stand_up", t, t + d))
            t += d + 2000
            d = _r10(rng.uniform(3000, 5000))
            events.append(Event("walk", t, t + d))
            t += d + 3000
        else:
            for _ in range(6):
                t += _r10(rng.uniform(800, 2000))
                d = _r10(rng.uniform(3000, 6000))
                events.append(Event(kind, t, t + d))
                t += d
            t += 2000
        out.append(
            Scenario(
                seed + k,
                t,
                noise_sigma=noise_sigma,
                events=tuple(events),
                trace_id=f"neg-{kind}-{k}",
                jitter_us=jitter_us,
                gain_drift=gain_drift,
            )
        )
    return out


def build_pack(
    n_fall: int = 230,
    n_fall_like: int = 510,
    seed: int = 2015,
    per_scenario: int = 10,
    noise_sigma: float = 0.03,
    jitter_us: int = 1500,
    burst_ms: int | None = None,
    prefix: str = "bench",
    gain_drift: float = GAIN_DRIFT,
) -> list[Scenario]:
    """Scenarios holding the requested numbers of falls and fall-like events."""
    kinds = ["fall"] * n_fall + ["sit_down"] * ((n_fall_like + 1) // 2) + ["lie_down"] * (n_fall_like // 2)
    order = np.random.default_rng(seed).permutation(len(kinds))
    kinds = [kinds[i] for i in order]
    out = []
    for k in range(0, len(kinds), per_scenario):
        idx = k // per_scenario
        out.append(
            _cycle_scenario(
                seed * 1000 + idx,
                kinds[k : k + per_scenario],
                noise_sigma,
                jitter_us,
                burst_ms,
                f"{prefix}-{idx:03d}",
                gain_drift,
            )
        )
    return out


def benchmark_pack() -> list[Scenario]:
    """The shipped benchmark: 230 falls, 510 fall-like events, plus negative-only traces."""
    pkg = resources.files("afd") / "data" / "benchmark"
    files = sorted(p for p in pkg.iterdir() if p.name.endswith(".scenario.json"))
    return [load_scenario(p.read_bytes()) for p in files]


def training_pack() -> list[Scenario]:
    """A split disjoint from the benchmark (different seeds)."""
    return build_pack(n_fall=600, n_fall_like=200, seed=4242, prefix="train")


def burst_pack(n_fall: int = 60, n_fall_like: int = 60, seed: int = 3003) -> list[Scenario]:
    """Falls and fall-like events all lasting exactly 3 s."""
    return build_pack(n_fall, n_fall_like, seed=seed, burst_ms=3000, prefix="burst")


def write_benchmark_pack(directory) -> list[str]:
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for sc in build_pack() + negative_scenarios():
        name = f"{sc.trace_id}.scenario.json"
        (d / name).write_text(sc.to_json() + "\n")
        names.append(name)
    return names
