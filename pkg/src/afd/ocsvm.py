"""nu-one-class SVM with an RBF kernel, trained by SMO.

Dual problem solved here::

    minimize    1/2 * sum_ij a_i a_j K(x_i, x_j)
    subject to  0 <= a_i <= 1 / (nu * n),   sum_i a_i = 1

The decision function is ``sum_i a_i K(sv_i, x) - rho``; a vector is
accepted as the target class (a fall) when it is non-negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import CorruptModel, EmptyResultingSet, EmptyTrainingSet, LayoutMismatch, LengthMismatch, VersionMismatch
from .features import LAYOUT_VERSION, Scaler

ALPHA_STORE_EPS = 1e-12
FREE_EPS = 1e-8
TAU = 1e-12


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * float(np.dot(d, d))))


def kernel_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise LengthMismatch(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@dataclass(frozen=True, eq=False)
class OcSvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float
    scaler: Scaler
    feature_layout_version: int = LAYOUT_VERSION
    channels: str = "amplitude_and_phase"
    n_train: int = 0
    rho_fallback: bool = False
    kkt_gap: float = 0.0
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return int(self.support_vectors.shape[1])


@dataclass
class SmoResult:
    alpha: np.ndarray
    grad: np.ndarray
    gap: float
    n_iter: int


def _initial_alpha(n: int, upper: float) -> np.ndarray:
    alpha = np.zeros(n)
    n_full = min(n, int(math.floor(1.0 / upper + 1e-9)))
    alpha[:n_full] = upper
    if n_full < n:
        alpha[n_full] = max(0.0, 1.0 - n_full * upper)
    return alpha


def solve_dual(K: np.ndarray, upper: float, tol: float = 1e-6, max_iter: int = 1_000_000) -> SmoResult:
    """SMO on the box-simplex dual with second-order working-set selection.

    Ties go to the lowest index, so the result depends only on the input
    order.
    """
    n = K.shape[0]
    alpha = _initial_alpha(n, upper)
    G = K @ alpha
    diag = np.diag(K).copy()
    it = 0
    gap = 0.0
    while True:
        up = alpha < upper
        low = alpha > 0
        neg_g = -G
        g_up = np.where(up, neg_g, -np.inf)
        i = int(np.argmax(g_up))
        g_max = g_up[i]
        g_min = np.min(np.where(low, neg_g, np.inf))
        gap = float(g_max - g_min)
        if gap < tol or it >= max_iter:
            break
        b = g_max - neg_g
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        step = b[j] / a[j]
        room_i = upper - alpha[i]
        room_j = alpha[j]
        if step >= room_i and room_i <= room_j:
            step = room_i
            alpha[i] = upper
            alpha[j] = alpha[j] - step if step < room_j else 0.0
        elif step >= room_j:
            step = room_j
            alpha[j] = 0.0
            alpha[i] = alpha[i] + step
        else:
            alpha[i] += step
            alpha[j] -= step
        G += step * (K[:, i] - K[:, j])
        it += 1
    return SmoResult(alpha, G, gap, it)


def compute_rho(alpha: np.ndarray, grad: np.ndarray, upper: float) -> tuple[float, bool]:
    """Offset from free support vectors; falls back to the bounded ones."""
    free = (alpha > FREE_EPS) & (alpha < upper - FREE_EPS)
    if np.any(free):
        return float(np.mean(grad[free])), False
    bounded = alpha >= upper - FREE_EPS
    return float(np.max(grad[bounded])), True


def dual_objective(alpha: np.ndarray, K: np.ndarray) -> float:
    return 0.5 * float(alpha @ K @ alpha)


def train(X, nu: float, gamma: float, scaler: Scaler | None = None, tol: float = 1e-6, channels: str = "amplitude_and_phase") -> OcSvmModel:
    """Train on standardized target-class vectors ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyTrainingSet("need at least one training vector")
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    n, d = X.shape
    if scaler is None:
        scaler = Scaler(np.zeros(d), np.ones(d))
    upper = 1.0 / (nu * n)
    K = kernel_matrix(X, X, gamma)
    res = solve_dual(K, upper, tol)
    rho, fallback = compute_rho(res.alpha, res.grad, upper)
    keep = res.alpha > ALPHA_STORE_EPS
    return OcSvmModel(
        support_vectors=X[keep].copy(),
        alpha=res.alpha[keep].copy(),
        rho=rho,
        gamma=float(gamma),
        nu=float(nu),
        scaler=scaler,
        channels=channels,
        n_train=n,
        rho_fallback=fallback,
        kkt_gap=res.gap,
        n_iter=res.n_iter,
    )


def fit(raw_vectors, nu: float = 0.1, gamma: float | None = None, channels: str = "amplitude_and_phase", tol: float = 1e-6) -> OcSvmModel:
    """Fit a scaler on raw feature vectors, then train on the z-scores."""
    raw = np.atleast_2d(np.asarray(raw_vectors, dtype=np.float64))
    if raw.shape[0] == 0 or raw.size == 0:
        raise EmptyTrainingSet("need at least one training vector")
    scaler = Scaler.fit(raw)
    if gamma is None:
        gamma = 1.0 / raw.shape[1]
    return train(scaler.transform(raw), nu, gamma, scaler, tol, channels)


def decision_scores(model: OcSvmModel, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != model.dim:
        raise LayoutMismatch(f"vector length {Z.shape[1]} != model dimension {model.dim}")
    return kernel_matrix(Z, model.support_vectors, model.gamma) @ model.alpha - model.rho


def decision(model: OcSvmModel, x) -> tuple[float, bool]:
    """Score a standardized vector; ``is_fall`` when the score is >= 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise LayoutMismatch("decision takes a single vector")
    score = float(decision_scores(model, x[None])[0])
    return score, score >= 0.0


def score_raw(model: OcSvmModel, raw_vectors) -> np.ndarray:
    """Standardize raw feature vectors with the model's scaler and score them."""
    raw = np.atleast_2d(np.asarray(raw_vectors, dtype=np.float64))
    if raw.shape[1] != model.scaler.dim:
        raise LayoutMismatch(f"vector length {raw.shape[1]} != model dimension {model.scaler.dim}")
    return decision_scores(model, model.scaler.transform(raw))


def model_to_dict(model: OcSvmModel) -> dict:
    return {
        "version": model.feature_layout_version,
        "nu": model.nu,
        "gamma": model.gamma,
        "rho": model.rho,
        "rho_fallback": model.rho_fallback,
        "channels": model.channels,
        "n_train": model.n_train,
        "kkt_gap": model.kkt_gap,
        "scaler": model.scaler.to_dict(),
        "svs": model.support_vectors.tolist(),
        "alpha": model.alpha.tolist(),
    }


def save(model: OcSvmModel) -> bytes:
    return json.dumps(model_to_dict(model)).encode("utf-8")


def model_from_dict(d: dict) -> OcSvmModel:
    if not isinstance(d, dict):
        raise CorruptModel("model file must hold a JSON object")
    if d.get("version") != LAYOUT_VERSION:
        raise VersionMismatch(f"model layout version {d.get('version')!r}; expected {LAYOUT_VERSION}")
    try:
        svs = np.asarray(d["svs"], dtype=np.float64)
        alpha = np.asarray(d["alpha"], dtype=np.float64)
        scaler = Scaler.from_dict(d["scaler"])
        rho = float(d["rho"])
        gamma = float(d["gamma"])
        nu = float(d["nu"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"bad model file: {exc}") from None
    if svs.ndim != 2 or alpha.shape != (svs.shape[0],) or scaler.mean.shape != (svs.shape[1],) or scaler.std.shape != scaler.mean.shape:
        raise CorruptModel("inconsistent array shapes in model file")
    if not (np.all(np.isfinite(svs)) and np.all(np.isfinite(alpha)) and math.isfinite(rho)):
        raise CorruptModel("non-finite values in model file")
    if gamma <= 0 or not 0 < nu <= 1:
        raise CorruptModel("invalid hyperparameters in model file")
    return OcSvmModel(
        support_vectors=svs,
        alpha=alpha,
        rho=rho,
        gamma=gamma,
        nu=nu,
        scaler=scaler,
        feature_layout_version=int(d["version"]),
        channels=str(d.get("channels", "amplitude_and_phase")),
        n_train=int(d.get("n_train", 0)),
        rho_fallback=bool(d.get("rho_fallback", False)),
        kkt_gap=float(d.get("kkt_gap", 0.0)),
    )


def load(data: bytes | str) -> OcSvmModel:
    try:
        d = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"model file is not JSON: {exc}") from None
    return model_from_dict(d)


@dataclass
class TrainingStore:
    """Raw (unstandardized) fall vectors a model was trained on."""

    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def to_dict(self) -> dict:
        return {"vectors": np.asarray(self.vectors).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingStore":
        v = np.asarray(d["vectors"], dtype=np.float64)
        return cls(v.reshape(len(v), -1) if v.size else np.zeros((0, 0)))


def update_model(model: OcSvmModel, relabeled, store: TrainingStore) -> tuple[OcSvmModel, TrainingStore]:
    """Fold user corrections into the training set and retrain from scratch.

    ``relabeled`` is a sequence of ``(raw_vector, is_fall)`` pairs.  Falls
    are appended; vectors relabeled as non-falls are removed wherever they
    occur in the store.
    """
    X = np.asarray(store.vectors, dtype=np.float64)
    if X.size == 0:
        X = np.zeros((0, model.scaler.dim))
    add, drop = [], []
    for vec, is_fall in relabeled:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (model.scaler.dim,):
            raise LengthMismatch(f"relabeled vector length {v.shape} != {model.scaler.dim}")
        (add if is_fall else drop).append(v)
    if drop and len(X):
        keep = np.ones(len(X), dtype=bool)
        for v in drop:
            keep &= ~np.all(X == v, axis=1)
        X = X[keep]
    if add:
        X = np.vstack([X] + [v[None] for v in add])
    if len(X) == 0:
        raise EmptyResultingSet("no fall vectors left to train on")
    new = fit(X, model.nu, model.gamma, model.channels)
    return new, TrainingStore(X)


def grid_search(train_falls, val_falls, val_others, gammas=None, nus=(0.02, 0.05, 0.1, 0.2), channels="amplitude_and_phase"):
    """Pick (nu, gamma) maximizing validation FDR - FPR; ties keep the earlier pair."""
    train_falls = np.atleast_2d(np.asarray(train_falls, dtype=np.float64))
    d = train_falls.shape[1]
    if gammas is None:
        gammas = [f / d for f in (0.25, 0.5, 1.0, 2.0, 4.0)]
    best = None
    results = []
    for nu in nus:
        for gamma in gammas:
            model = fit(train_falls, nu, gamma, channels)
            fdr = float(np.mean(score_raw(model, val_falls) >= 0)) if len(val_falls) else 0.0
            fpr = float(np.mean(score_raw(model, val_others) >= 0)) if len(val_others) else 0.0
            results.append({"nu": nu, "gamma": gamma, "fdr": fdr, "fpr": fpr})
            if best is None or fdr - fpr > best[0]:
                best = (fdr - fpr, nu, gamma)
    return best[1], best[2], results
