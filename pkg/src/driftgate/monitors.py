"""Drift monitors comparing a recent embedding window against a reference window."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from ._accel import kernels

MONITOR_NAMES = ("mmd2", "disc_auc", "entropy_shift", "ece_shift", "slice_max_mmd2")


class Flagged(NamedTuple):
    value: float
    degenerate: bool


@dataclass
class EmbeddingWindow:
    points: np.ndarray
    origin: str = "recent"
    group_tags: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        if self.group_tags is not None:
            self.group_tags = np.asarray(self.group_tags)
            if self.group_tags.shape[0] != pts.shape[0]:
                raise ValueError("group_tags length must match points")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class EvidenceVector:
    mmd2: float = 0.0
    disc_auc: float = 0.5
    entropy_shift: float = 0.0
    ece_shift: float = 0.0
    slice_max_mmd2: float = 0.0
    standardized: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def raw(self) -> np.ndarray:
        return np.array([self.mmd2, self.disc_auc, self.entropy_shift, self.ece_shift, self.slice_max_mmd2])


@dataclass
class ReferenceStats:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-6
    ece_ref: float = 0.0
    mean_entropy_ref: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if np.any(self.std < 0):
            raise ValueError("reference std must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _pts(w):
    return w.points if isinstance(w, EmbeddingWindow) else np.atleast_2d(np.asarray(w, dtype=float))


def median_bandwidth(pooled) -> float:
    """Median heuristic: median squared distance over distinct pairs (1.0 if degenerate)."""
    X = _pts(pooled)
    if X.shape[0] < 2:
        raise ValueError("median_bandwidth needs at least 2 points")
    med = float(np.median(kernels.pair_sqdists(np.ascontiguousarray(X))))
    return med if med > 0.0 else 1.0


def mmd2_unbiased(recent, reference, sigma2: float) -> float:
    """Unbiased squared MMD with the RBF kernel ``exp(-|u-v|^2 / (2 sigma2))``."""
    X, Y = np.ascontiguousarray(_pts(recent)), np.ascontiguousarray(_pts(reference))
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise ValueError("each window needs at least 2 points")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    g = 1.0 / (2.0 * sigma2)
    return float(kernels.rbf_within_mean(X, g) + kernels.rbf_within_mean(Y, g) - 2.0 * kernels.rbf_cross_mean(X, Y, g))


def _mmd2_ref_sqd(X, Y, ref_sqd, sigma2: float) -> float:
    """``mmd2_unbiased`` with the reference pairwise squared distances precomputed."""
    X, Y = np.ascontiguousarray(X), np.ascontiguousarray(Y)
    g = 1.0 / (2.0 * sigma2)
    return float(kernels.rbf_within_mean(X, g) + kernels.rbf_mean_sqd(ref_sqd, g) - 2.0 * kernels.rbf_cross_mean(X, Y, g))


def rank_auc(pos_scores, neg_scores) -> float:
    """Probability a positive outscores a negative, ties counted as one half."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score sets must be nonempty")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def discriminator_auc(recent, reference, split_fraction: float = 0.5, seed=0,
                      iters: int = 100, lr: float = 0.5) -> Flagged:
    """Held-out AUC of a linear logistic classifier separating recent (1) from reference (0).

    Parameters
    ----------
    recent, reference : EmbeddingWindow or array_like
        Windows to discriminate.
    split_fraction : float
        Fraction of each class used for fitting; the rest is held out.
    seed : int or numpy Generator
        Controls the train/holdout split.
    iters, lr : int, float
        Full-batch gradient descent settings on standardized features.

    Returns
    -------
    Flagged
        AUC in [0, 1]; ``(0.5, True)`` when a class is missing from the holdout.
    """
    X1, X0 = _pts(recent), _pts(reference)
    if X1.shape[0] == 0 or X0.shape[0] == 0:
        raise ValueError("both windows must be nonempty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p1, p0 = rng.permutation(X1.shape[0]), rng.permutation(X0.shape[0])
    c1 = int(np.floor(split_fraction * X1.shape[0]))
    c0 = int(np.floor(split_fraction * X0.shape[0]))
    tr1, ho1 = X1[p1[:c1]], X1[p1[c1:]]
    tr0, ho0 = X0[p0[:c0]], X0[p0[c0:]]
    if ho1.shape[0] == 0 or ho0.shape[0] == 0:
        return Flagged(0.5, True)
    Xtr = np.vstack([tr1, tr0])
    if Xtr.shape[0] == 0 or tr1.shape[0] == 0 or tr0.shape[0] == 0:
        return Flagged(0.5, True)
    ytr = np.concatenate([np.ones(tr1.shape[0]), np.zeros(tr0.shape[0])])
    mu = Xtr.mean(axis=0)
    sd = Xtr.std(axis=0) + 1e-12
    w, b = kernels.logistic_gd(np.ascontiguousarray((Xtr - mu) / sd), ytr, iters, lr, 0.0)
    s1 = ((ho1 - mu) / sd) @ w + b
    s0 = ((ho0 - mu) / sd) @ w + b
    return Flagged(rank_auc(s1, s0), False)


def predictive_entropy(probs) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a normalized nonnegative vector")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropies(P: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a probability matrix."""
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return -terms.sum(axis=1)


def entropy_shift(recent_probs, ref_mean_entropy: float) -> float:
    P = np.atleast_2d(np.asarray(recent_probs, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("recent_probs must be nonempty")
    return float(entropies(P).mean() - ref_mean_entropy)


def streaming_ece(labeled, bins: int = 10) -> Flagged:
    """Expected calibration error over equal-width confidence bins.

    ``labeled`` is a sequence of ``(confidence, correct)`` pairs or an ``(n, 2)``
    array. The last bin is closed on the right.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    arr = np.asarray(labeled, dtype=float).reshape(-1, 2) if len(labeled) else np.empty((0, 2))
    if arr.shape[0] == 0:
        return Flagged(0.0, True)
    conf, correct = arr[:, 0], arr[:, 1]
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    b = np.minimum((conf * bins).astype(np.int64), bins - 1)
    cnt = np.bincount(b, minlength=bins)
    sum_conf = np.bincount(b, weights=conf, minlength=bins)
    sum_acc = np.bincount(b, weights=correct, minlength=bins)
    gap = np.abs(sum_acc - sum_conf)
    return Flagged(float(gap.sum() / conf.size), False)


def slice_max_mmd2(recent: EmbeddingWindow, reference: EmbeddingWindow, sigma2: float,
                   _ref_sqd: dict | None = None) -> Flagged:
    """Largest per-group MMD; groups need at least 2 points on both sides."""
    if recent.group_tags is None or reference.group_tags is None:
        raise ValueError("slice_max_mmd2 needs group tags on both windows")
    best = None
    for g in np.union1d(recent.group_tags, reference.group_tags):
        Xg = recent.points[recent.group_tags == g]
        Yg = reference.points[reference.group_tags == g]
        if Xg.shape[0] < 2 or Yg.shape[0] < 2:
            continue
        if _ref_sqd is not None and g in _ref_sqd:
            v = _mmd2_ref_sqd(Xg, Yg, _ref_sqd[g], sigma2)
        else:
            v = mmd2_unbiased(Xg, Yg, sigma2)
        best = v if best is None else max(best, v)
    if best is None:
        return Flagged(0.0, True)
    return Flagged(float(best), False)


def standardize(raw: EvidenceVector, stats: ReferenceStats) -> EvidenceVector:
    z = (raw.raw() - stats.mean) / (stats.std + stats.epsilon)
    return EvidenceVector(raw.mmd2, raw.disc_auc, raw.entropy_shift, raw.ece_shift, raw.slice_max_mmd2, z)


def unstandardize(z: np.ndarray, stats: ReferenceStats) -> np.ndarray:
    return np.asarray(z) * (stats.std + stats.epsilon) + stats.mean


@dataclass(frozen=True)
class MonitorConfig:
    enabled: tuple = (True, True, True, True, True)
    ece_bins: int = 10
    split_fraction: float = 0.5
    disc_iters: int = 100
    disc_lr: float = 0.5
    pool_size: int = 64
    null_draws: int = 40


class MonitorSuite:
    """Evaluates the five monitors against a fixed reference window.

    Model-dependent quantities (probabilities, labeled confidences) are passed
    in per call, so the suite itself never touches the model.
    """

    def __init__(self, reference: EmbeddingWindow, cfg: MonitorConfig | None = None):
        if reference.group_tags is None:
            raise ValueError("reference window needs group tags")
        self.reference = reference
        self.cfg = cfg or MonitorConfig()
        n_ref = len(reference)
        stride = max(1, n_ref // max(1, self.cfg.pool_size))
        self._pool_ref = reference.points[::stride][: self.cfg.pool_size]
        # reference distances never change, only the bandwidth does
        pts = np.ascontiguousarray(reference.points)
        self._ref_sqd = kernels.pair_sqdists(pts)
        self._ref_group_sqd = {}
        for g in np.unique(reference.group_tags):
            Yg = np.ascontiguousarray(pts[reference.group_tags == g])
            if Yg.shape[0] >= 2:
                self._ref_group_sqd[g] = kernels.pair_sqdists(Yg)

    def raw(self, recent: EmbeddingWindow, recent_probs: np.ndarray, labeled: np.ndarray,
            mean_entropy_ref: float, ece_ref: float, rng: np.random.Generator,
            reference: EmbeddingWindow | None = None) -> EvidenceVector:
        ref = self.reference if reference is None else reference
        on = self.cfg.enabled
        pool = np.vstack([recent.points, self._pool_ref if reference is None else ref.points[: self.cfg.pool_size]])
        s2 = median_bandwidth(pool)
        ev = EvidenceVector()
        if on[0]:
            if reference is None:
                ev.mmd2 = _mmd2_ref_sqd(recent.points, ref.points, self._ref_sqd, s2)
            else:
                ev.mmd2 = mmd2_unbiased(recent, ref, s2)
        if on[1]:
            ev.disc_auc = discriminator_auc(recent, ref, self.cfg.split_fraction, rng,
                                            self.cfg.disc_iters, self.cfg.disc_lr).value
        if on[2]:
            ev.entropy_shift = entropy_shift(recent_probs, mean_entropy_ref)
        if on[3]:
            ece = streaming_ece(labeled, self.cfg.ece_bins)
            ev.ece_shift = 0.0 if ece.degenerate else ece.value - ece_ref
        if on[4]:
            cache = self._ref_group_sqd if reference is None else None
            ev.slice_max_mmd2 = slice_max_mmd2(recent, ref, s2, cache).value
        return ev

    def fit_stats(self, ref_probs: np.ndarray, ref_labeled: np.ndarray, window: int,
                  label_window: int, rng: np.random.Generator, epsilon: float = 1e-6) -> ReferenceStats:
        """Null mean and spread of each monitor from random splits of nominal data.

        Pseudo-recent windows of size ``window`` are drawn from the reference and
        compared with the remaining points; the ECE null uses subsets of
        ``ref_labeled`` of size ``label_window``.
        """
        ref = self.reference
        n_ref = len(ref)
        H_ref = float(entropies(ref_probs).mean())
        ece_ref = streaming_ece(ref_labeled, self.cfg.ece_bins).value
        draws = []
        for _ in range(self.cfg.null_draws):
            perm = rng.permutation(n_ref)
            a, b = perm[:window], perm[window:]
            rec = EmbeddingWindow(ref.points[a], "recent", ref.group_tags[a])
            rest = EmbeddingWindow(ref.points[b], "reference", ref.group_tags[b])
            lab_idx = rng.choice(ref_labeled.shape[0], size=min(label_window, ref_labeled.shape[0]), replace=False)
            ev = self.raw(rec, ref_probs[a], ref_labeled[lab_idx], H_ref, ece_ref, rng, reference=rest)
            draws.append(ev.raw())
        D = np.array(draws)
        return ReferenceStats(D.mean(axis=0), D.std(axis=0, ddof=1), epsilon, ece_ref, H_ref)
