"""End-to-end detection, evaluation against ground truth, and window search.

The detector chains preprocess -> phase-difference variance -> end points
-> activity windows -> features -> one-class SVM.  :class:`Detector` runs
the chain incrementally on packet chunks; :func:`run_detector` in batch mode
runs it on a whole trace.  Both produce bit-identical detections because
every stage shares its arithmetic with the batch functions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ocsvm
from .config import Config
from .errors import ConfigError, DimensionMismatch, InsufficientData, LayoutMismatch, TooFewPackets, WindowTooShort
from .features import extract_features, feature_dim, select_subcarriers
from .preprocess import StreamingPreprocessor, grid_offsets, preprocess_trace
from .segmentation import (
    StableThreshold,
    TransitionState,
    _check_links,
    _check_subcarriers,
    _log_of_mean_variance,
    detect_endpoints,
    extract_segment,
    ms_to_samples,
    phase_difference,
    scan_transitions,
    segment_from_block,
    sliding_mean,
    sliding_variance,
    unwrap_time,
    variance_stream_for,
)
from .synth import FALL_LIKE, GroundTruth, Scenario, generate_trace
from .trace import CsiTrace

REFERENCE = {"fdr": 0.89, "fpr": 0.13}
FPR_DEFINITION = (
    "fpr = false alarms / (false alarms + fall-like events without an alarm); "
    "every detection not matched to a fall counts as a false alarm"
)


@dataclass(frozen=True)
class Detection:
    t_end_us: int
    score: float
    segment_ref: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"t_end_us": self.t_end_us, "score": self.score}


def effective_threshold(cfg: Config, th: StableThreshold) -> StableThreshold:
    if cfg.segment.delta_override is not None:
        th = th.with_delta(cfg.segment.delta_override)
    if th.var_window_ms != cfg.segment.var_window_ms or th.stable_window_ms != cfg.segment.stable_window_ms:
        raise ConfigError(
            f"threshold was calibrated with var/stable windows {th.var_window_ms}/{th.stable_window_ms} ms; "
            f"config asks for {cfg.segment.var_window_ms}/{cfg.segment.stable_window_ms} ms"
        )
    return th


def feature_subcarriers(cfg: Config, n_subcarriers: int) -> list[int]:
    return select_subcarriers(n_subcarriers, cfg.features.n_subcarriers)


def check_model(cfg: Config, model: ocsvm.OcSvmModel, n_links: int, n_subcarriers: int) -> None:
    want = feature_dim(n_links, cfg.features.n_subcarriers, cfg.features.channels)
    if model.dim != want or model.channels != cfg.features.channels:
        raise LayoutMismatch(
            f"model expects {model.dim} {model.channels} features; config produces {want} {cfg.features.channels}"
        )


class Detector:
    """Streaming detector fed with packet chunks in timestamp order."""

    def __init__(self, cfg: Config, threshold: StableThreshold, model: ocsvm.OcSvmModel):
        self.cfg = cfg
        self.th = effective_threshold(cfg, threshold)
        self.model = model
        self.rate = cfg.preprocess.target_rate_hz
        self.pre = StreamingPreprocessor(self.rate, cfg.filter_spec)
        self.w = ms_to_samples(cfg.segment.var_window_ms, self.rate)
        if self.w < 2:
            raise WindowTooShort(f"variance window of {cfg.segment.var_window_ms} ms spans {self.w} sample(s)")
        self.s = max(ms_to_samples(self.th.stable_window_ms, self.rate), 1)
        self.m = ms_to_samples(cfg.segment.min_fluct_ms, self.rate)
        self.window_us = int(round(cfg.segment.window_ms * 1000))
        self.state = TransitionState()
        self.candidates: list[Detection] = []
        self._n_packets = 0
        self._meta = None
        self._t_first = None
        self._buf_t = np.zeros(0, dtype=np.int64)
        self._buf_csi = None
        self._prev_wrapped = None
        self._prev_unwrapped = None
        self._u_tail = None
        self._lv_tail = np.zeros(0)
        self._n_lv = 0

    def _setup(self, n_links: int, n_sub: int):
        cfg = self.cfg
        _check_links(n_links, cfg.segment.link_a, cfg.segment.link_b)
        self._var_idx = _check_subcarriers(n_sub, cfg.segment.subcarriers)
        self._feat_sub = tuple(feature_subcarriers(cfg, n_sub))
        self._links = tuple(range(n_links))
        check_model(cfg, self.model, n_links, n_sub)
        self._buf_csi = np.zeros((0, n_links, n_sub), dtype=np.complex128)
        self._meta = (n_links, n_sub)

    def _lv_time(self, g: int) -> int:
        t0 = int(self._t_first + grid_offsets(1, self.rate, self.w - 1)[0])
        return int(t0 + grid_offsets(1, self.rate, g)[0])

    def push(self, t_us, csi) -> list[Detection]:
        t_us = np.asarray(t_us, dtype=np.int64)
        csi = np.asarray(csi, dtype=np.complex128)
        if len(t_us) == 0:
            return []
        if csi.ndim != 3 or len(csi) != len(t_us):
            raise DimensionMismatch(f"csi block of shape {csi.shape} for {len(t_us)} timestamps")
        if self._meta is None:
            self._setup(csi.shape[1], csi.shape[2])
        elif csi.shape[1:] != self._meta:
            raise DimensionMismatch(f"expected {self._meta[0]} links x {self._meta[1]} subcarriers")
        self._n_packets += len(t_us)
        t_grid, values = self.pre.push(t_us, csi)
        if len(t_grid) == 0:
            return []
        if self._t_first is None:
            self._t_first = int(t_grid[0])
        self._buf_t = np.concatenate([self._buf_t, t_grid])
        self._buf_csi = np.concatenate([self._buf_csi, values])

        d = phase_difference(values, self.cfg.segment.link_a, self.cfg.segment.link_b, self._var_idx)
        u = unwrap_time(d, self._prev_wrapped, self._prev_unwrapped)
        self._prev_wrapped = d[-1].copy()
        self._prev_unwrapped = u[-1].copy()
        if self._u_tail is not None:
            u = np.concatenate([self._u_tail, u])
        self._u_tail = u[max(len(u) - (self.w - 1), 0) :].copy()
        lv = _log_of_mean_variance(sliding_variance(u, self.w)) if len(u) >= self.w else np.zeros(0)
        self._n_lv += len(lv)
        lv = np.concatenate([self._lv_tail, lv])
        self._lv_tail = lv[max(len(lv) - (self.s - 1), 0) :].copy()
        mask = sliding_mean(lv, self.s) <= self.th.delta if len(lv) >= self.s else np.zeros(0, dtype=bool)

        out = []
        for g in scan_transitions(mask, self.m, self.s, self.state):
            det = self._classify(self._lv_time(g))
            self.candidates.append(det)
            if det.score >= 0.0:
                out.append(det)
        self._trim()
        return out

    def _classify(self, end_us: int) -> Detection:
        start = int(end_us - self.window_us)
        truncated = start < self._t_first
        if truncated:
            start = self._t_first
        lo = int(np.searchsorted(self._buf_t, start, side="left"))
        hi = int(np.searchsorted(self._buf_t, end_us, side="left"))
        block = self._buf_csi[lo:hi][:, list(self._links)][:, :, list(self._feat_sub)]
        seg = segment_from_block(
            block, start, end_us, self.cfg.segment.window_ms, self.rate, self._feat_sub, self._links, truncated
        )
        return _score_segment(self.model, seg, self.cfg)

    def _trim(self):
        # the next transition can be no earlier than the next mask sample
        next_t = self._lv_time(self.state.offset)
        keep = int(np.searchsorted(self._buf_t, next_t - self.window_us - 1, side="left"))
        if keep > 0:
            self._buf_t = self._buf_t[keep:]
            self._buf_csi = self._buf_csi[keep:]

    def finish(self) -> list[Detection]:
        if self._n_packets < 2:
            raise TooFewPackets(f"need at least 2 packets, got {self._n_packets}")
        return []


def _score_segment(model: ocsvm.OcSvmModel, seg, cfg: Config) -> Detection:
    x = extract_features(seg, cfg.features.channels)
    score = float(ocsvm.score_raw(model, x[None])[0])
    return Detection(seg.end_us, score, {"start_us": seg.start_us, "end_us": seg.end_us, "truncated": seg.truncated})


def segment_trace(trace: CsiTrace, cfg: Config, threshold: StableThreshold, preprocessed: bool = False):
    """End points and activity windows of one trace, batch mode."""
    th = effective_threshold(cfg, threshold)
    params = cfg.segment_params
    pre = trace if preprocessed else preprocess_trace(trace, params.target_rate_hz, params.filter_spec)
    stream = variance_stream_for(pre, params, preprocessed=True)
    ends = detect_endpoints(stream, th, cfg.segment.min_fluct_ms)
    sub = feature_subcarriers(cfg, pre.meta.n_subcarriers)
    segs = [extract_segment(pre, e, cfg.segment.window_ms, sub) for e in ends]
    return pre, ends, segs


def score_candidates(trace: CsiTrace, cfg: Config, threshold: StableThreshold, model: ocsvm.OcSvmModel) -> list[Detection]:
    """Every segmented candidate with its score, batch mode."""
    check_model(cfg, model, trace.meta.n_links, trace.meta.n_subcarriers)
    _, _, segs = segment_trace(trace, cfg, threshold)
    return [_score_segment(model, seg, cfg) for seg in segs]


def run_detector(
    trace: CsiTrace,
    cfg: Config,
    threshold: StableThreshold,
    model: ocsvm.OcSvmModel,
    mode: str = "batch",
    chunk: int = 64,
) -> list[Detection]:
    if mode == "batch":
        return [d for d in score_candidates(trace, cfg, threshold, model) if d.score >= 0.0]
    if mode != "stream":
        raise ValueError(f"unknown mode {mode!r}")
    if chunk < 1:
        raise ValueError("chunk must be positive")
    det = Detector(cfg, threshold, model)
    out = []
    for k in range(0, len(trace), chunk):
        out += det.push(trace.t_us[k : k + chunk], trace.csi[k : k + chunk])
    out += det.finish()
    return out


@dataclass
class EvalReport:
    fdr: float
    fpr: float
    matched: int
    missed: int
    false_alarms: int
    correct_rejections: int
    events: list = field(default_factory=list)
    reference: dict = field(default_factory=lambda: dict(REFERENCE))
    fpr_definition: str = FPR_DEFINITION

    def to_dict(self) -> dict:
        return asdict(self)


def _rates(matched, missed, false_alarms, correct_rejections):
    fdr = matched / (matched + missed) if matched + missed else 0.0
    fpr = false_alarms / (false_alarms + correct_rejections) if false_alarms + correct_rejections else 0.0
    return fdr, fpr


def _greedy_match(times, targets, tol_us):
    """One-to-one pairs (i, j) by increasing |times[i] - targets[j]|, index tie-break."""
    pairs = sorted(
        (abs(int(t) - int(e)), i, j)
        for i, t in enumerate(times)
        for j, e in enumerate(targets)
        if abs(int(t) - int(e)) <= tol_us
    )
    used_i, used_j, out = set(), set(), {}
    for _, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        out[i] = j
    return out


def evaluate(detections, truth: GroundTruth, match_tol_ms: float = 500.0) -> EvalReport:
    """Match detections to fall end points and count alarms on everything else."""
    tol = int(round(match_tol_ms * 1000))
    dets = sorted(detections, key=lambda d: (d.t_end_us, d.score))
    falls = sorted(truth.falls, key=lambda e: e.end_us)
    likes = sorted((e for e in truth.events if e.kind in FALL_LIKE), key=lambda e: e.end_us)
    to_fall = _greedy_match([d.t_end_us for d in dets], [e.end_us for e in falls], tol)
    stray = [i for i in range(len(dets)) if i not in to_fall]
    to_like = _greedy_match([dets[i].t_end_us for i in stray], [e.end_us for e in likes], tol)

    events = []
    by_fall = {j: i for i, j in to_fall.items()}
    for j, e in enumerate(falls):
        i = by_fall.get(j)
        events.append(
            {
                "kind": e.kind,
                "end_us": e.end_us,
                "outcome": "detected" if i is not None else "missed",
                "t_end_us": dets[i].t_end_us if i is not None else None,
                "score": dets[i].score if i is not None else None,
            }
        )
    by_like = {j: stray[k] for k, j in to_like.items()}
    for j, e in enumerate(likes):
        i = by_like.get(j)
        events.append(
            {
                "kind": e.kind,
                "end_us": e.end_us,
                "outcome": "false_alarm" if i is not None else "rejected",
                "t_end_us": dets[i].t_end_us if i is not None else None,
                "score": dets[i].score if i is not None else None,
            }
        )
    for k, i in enumerate(stray):
        if k not in to_like:
            events.append(
                {"kind": None, "end_us": None, "outcome": "false_alarm", "t_end_us": dets[i].t_end_us, "score": dets[i].score}
            )
    matched = len(to_fall)
    missed = len(falls) - matched
    false_alarms = len(stray)
    rejected = len(likes) - len(to_like)
    fdr, fpr = _rates(matched, missed, false_alarms, rejected)
    return EvalReport(fdr, fpr, matched, missed, false_alarms, rejected, events)


def combine_reports(reports) -> EvalReport:
    reports = list(reports)
    matched = sum(r.matched for r in reports)
    missed = sum(r.missed for r in reports)
    fa = sum(r.false_alarms for r in reports)
    cr = sum(r.correct_rejections for r in reports)
    fdr, fpr = _rates(matched, missed, fa, cr)
    return EvalReport(fdr, fpr, matched, missed, fa, cr, [e for r in reports for e in r.events])


# Labeled corpora: preprocessed traces plus end points tagged with the kind of
# the ground-truth event they belong to.


@dataclass(frozen=True, eq=False)
class LabeledEndpoint:
    trace: CsiTrace  # preprocessed
    end_us: int
    kind: str

    @property
    def is_fall(self) -> bool:
        return self.kind == "fall"


def label_endpoints(ends, truth: GroundTruth, match_tol_ms: float = 500.0) -> dict[int, str]:
    """Map end point index -> kind of the ending event it matches."""
    targets = [e for e in truth.events if e.expect_endpoint]
    m = _greedy_match(ends, [e.end_us for e in targets], int(round(match_tol_ms * 1000)))
    return {i: targets[j].kind for i, j in m.items()}


def corpus_from_trace(trace: CsiTrace, truth: GroundTruth, cfg: Config, threshold: StableThreshold) -> list[LabeledEndpoint]:
    pre, ends, _ = segment_trace(trace, cfg, threshold)
    labels = label_endpoints(ends, truth)
    return [LabeledEndpoint(pre, ends[i], labels[i]) for i in sorted(labels)]


def corpus_from_scenarios(scenarios, cfg: Config, threshold: StableThreshold) -> list[LabeledEndpoint]:
    out = []
    for sc in scenarios:
        trace, truth = generate_trace(sc)
        out += corpus_from_trace(trace, truth, cfg, threshold)
    return out


def corpus_features(corpus, window_ms: float, cfg: Config) -> np.ndarray:
    rows = []
    for item in corpus:
        sub = feature_subcarriers(cfg, item.trace.meta.n_subcarriers)
        seg = extract_segment(item.trace, item.end_us, window_ms, sub)
        rows.append(extract_features(seg, cfg.features.channels))
    return np.array(rows)


def _stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    folds = np.zeros(len(labels), dtype=int)
    for cls in (True, False):
        idx = np.flatnonzero(labels == cls)
        perm = rng.permutation(idx)
        folds[perm] = np.arange(len(perm)) % k
    return folds


def train_model(falls, cfg: Config, others=None, seed: int = 0) -> ocsvm.OcSvmModel:
    """Train on raw fall vectors; with ``svm.grid_search`` pick (nu, gamma) first.

    The grid search holds out a fifth of the falls and uses ``others``
    (fall-like vectors) for the validation false-positive rate.
    """
    falls = np.atleast_2d(np.asarray(falls, dtype=np.float64))
    nu, gamma = cfg.svm.nu, cfg.svm.gamma
    if cfg.svm.grid_search:
        if others is None or len(others) == 0 or len(falls) < 5:
            raise InsufficientData("grid search needs fall-like vectors and at least 5 falls")
        perm = np.random.default_rng(seed).permutation(len(falls))
        n_val = max(1, len(falls) // 5)
        nu, gamma, _ = ocsvm.grid_search(falls[perm[n_val:]], falls[perm[:n_val]], others, channels=cfg.features.channels)
    return ocsvm.fit(falls, nu, gamma, cfg.features.channels)


@dataclass
class WindowSearchResult:
    window_ms: int
    coarse: dict
    fine: dict

    def to_dict(self) -> dict:
        return {
            "window_ms": self.window_ms,
            "coarse": {str(k): v for k, v in self.coarse.items()},
            "fine": {str(k): v for k, v in self.fine.items()},
        }


def _argmax_smallest(scores: dict) -> int:
    best = max(scores.values())
    return min(w for w, v in scores.items() if v == best)


def cross_validate(X: np.ndarray, is_fall: np.ndarray, cfg: Config, folds: np.ndarray, k: int) -> tuple[float, float]:
    """Pooled held-out (fdr, fpr) of one-class models trained on the other folds' falls."""
    acc_f = acc_o = 0
    for f in range(k):
        train = (folds != f) & is_fall
        held = folds == f
        model = ocsvm.fit(X[train], cfg.svm.nu, cfg.svm.gamma, cfg.features.channels)
        s = ocsvm.score_raw(model, X[held])
        acc_f += int(np.sum((s >= 0) & is_fall[held]))
        acc_o += int(np.sum((s >= 0) & ~is_fall[held]))
    return acc_f / int(is_fall.sum()), acc_o / int((~is_fall).sum())


def search_window_size(
    corpus,
    cfg: Config = Config(),
    lo: int = 1000,
    hi: int = 5000,
    step: int = 500,
    fine_step: int = 100,
    metric=None,
    k: int = 5,
    seed: int = 0,
) -> WindowSearchResult:
    """Coarse-then-fine search of the activity window length by cross-validation."""
    if not (lo > 0 and hi >= lo and step > 0 and fine_step > 0 and k >= 2):
        raise ConfigError("need 0 < lo <= hi, positive steps and k >= 2")
    if metric is None:
        metric = lambda fdr, fpr: fdr - fpr  # noqa: E731
    is_fall = np.array([c.is_fall for c in corpus], dtype=bool)
    if is_fall.sum() < k or (~is_fall).sum() < k:
        raise InsufficientData(
            f"window search needs at least {k} falls and {k} fall-like end points; "
            f"got {int(is_fall.sum())} and {int((~is_fall).sum())}"
        )
    folds = _stratified_folds(is_fall, k, seed)
    cache = {}

    def score(w):
        if w not in cache:
            fdr, fpr = cross_validate(corpus_features(corpus, w, cfg), is_fall, cfg, folds, k)
            cache[w] = float(metric(fdr, fpr))
        return cache[w]

    coarse = {w: score(w) for w in range(lo, hi + 1, step)}
    best = _argmax_smallest(coarse)
    fine = {w: score(w) for w in range(max(lo, best - step), min(hi, best + step) + 1, fine_step)}
    return WindowSearchResult(_argmax_smallest(fine), coarse, fine)


def calibration_scenario_for(scenarios) -> Scenario:
    """A still recording matching the noise and timing of a pack."""
    from .synth import still_scenario

    sc = scenarios[0]
    return still_scenario(seed=7, noise_sigma=sc.noise_sigma, jitter_us=sc.jitter_us, gain_drift=sc.gain_drift)


def evaluate_scenarios(scenarios, cfg: Config, threshold: StableThreshold, model: ocsvm.OcSvmModel) -> EvalReport:
    reports = []
    for sc in scenarios:
        trace, truth = generate_trace(sc)
        reports.append(evaluate(run_detector(trace, cfg, threshold, model), truth))
    return combine_reports(reports)
