"""Synthetic drifting stream, linear surrogate model, and action effects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax, softmax

from .belief import DriftType, EpisodeDataset
from .monitors import EmbeddingWindow, MonitorConfig, MonitorSuite, ReferenceStats, entropies, standardize

PATTERNS = ("sudden", "gradual", "recurring")
DRIFT_KINDS = ("none", "covariate", "concept", "subgroup")


@dataclass(frozen=True)
class StreamConfig:
    T: int = 4000
    p: int = 16
    classes: int = 4
    pattern: str = "sudden"
    t0: int = 1500
    rho: float = 0.05
    period: int = 800
    delay: int = 50
    p_sub: float = 0.15
    drift_type: str = "covariate"
    seed: int = 0
    mean_scale: float = 3.0
    shift_norm: float = 2.5
    subgroup_norm: float = 4.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.classes < 2 or self.p < self.classes:
            raise ValueError("need classes >= 2 and p >= classes")
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.pattern != "recurring" and not 1 <= self.t0 <= self.T:
            raise ValueError("t0 must lie in [1, T]")
        if self.period < 2:
            raise ValueError("period must be >= 2")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if not 0.0 < self.p_sub < 1.0:
            raise ValueError("p_sub must lie in (0, 1)")
        if self.drift_type not in DRIFT_KINDS:
            raise ValueError(f"drift_type must be one of {DRIFT_KINDS}")

    def class_means(self) -> np.ndarray:
        M = np.zeros((self.classes, self.p))
        M[np.arange(self.classes), np.arange(self.classes)] = self.mean_scale
        return M

    def shift_vector(self) -> np.ndarray:
        v = np.zeros(self.p)
        v[0], v[1] = 1.0, -1.0
        return self.shift_norm * v / np.linalg.norm(v)

    def subgroup_vector(self) -> np.ndarray:
        v = np.zeros(self.p)
        i, j = (2, 3) if self.p >= 4 else (0, 1)
        v[i], v[j] = 1.0, -1.0
        return self.subgroup_norm * v / np.linalg.norm(v)

    def concept_perm(self) -> np.ndarray:
        perm = np.arange(self.classes)
        perm[[0, 1]] = perm[[1, 0]]
        return perm


class SyntheticExample(NamedTuple):
    t: int
    x: np.ndarray
    y: int
    group: int
    arrival: float


def alpha_at(t, cfg: StreamConfig):
    """Drift intensity in [0, 1] at time ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if cfg.pattern == "sudden":
        a = (t >= cfg.t0).astype(float)
    elif cfg.pattern == "gradual":
        a = 0.5 * (1.0 + np.tanh(0.5 * cfg.rho * (t - cfg.t0)))
    else:
        a = 0.5 * (1.0 + np.sin(2.0 * np.pi * t / cfg.period))
    return float(a) if a.ndim == 0 else a


def check_perm(perm) -> np.ndarray:
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(perm.size)) or np.sum(perm != np.arange(perm.size)) < 2:
        raise ValueError("perm must be a permutation moving at least 2 classes")
    return perm


def apply_concept(y, alpha: float, perm, rng: np.random.Generator):
    """Relabel through ``perm`` with probability ``alpha``."""
    perm = check_perm(perm)
    y = np.asarray(y)
    flip = rng.random(y.shape) < alpha
    out = np.where(flip, perm[y], y)
    return int(out) if out.ndim == 0 else out


def apply_covariate(x, alpha: float, cfg: StreamConfig):
    return np.asarray(x, dtype=float) + alpha * cfg.shift_vector()


def apply_subgroup(x, group, alpha: float, cfg: StreamConfig):
    x = np.asarray(x, dtype=float)
    g = np.asarray(group)
    shift = alpha * cfg.subgroup_vector()
    return x + (g[..., None] if x.ndim > 1 else g) * shift


def _draw(ts, alphas, cfg: StreamConfig, rng: np.random.Generator):
    n = ts.size
    y = rng.integers(0, cfg.classes, n)
    x = cfg.class_means()[y] + rng.standard_normal((n, cfg.p))
    group = (rng.random(n) < cfg.p_sub).astype(np.int64)
    u = rng.random(n)
    drifted = u < alphas
    if cfg.drift_type == "covariate":
        x[drifted] = apply_covariate(x[drifted], 1.0, cfg)
    elif cfg.drift_type == "subgroup":
        x[drifted] = apply_subgroup(x[drifted], group[drifted], 1.0, cfg)
    elif cfg.drift_type == "concept":
        y = np.where(drifted, cfg.concept_perm()[y], y)
    return x, y, group


def sample_example(t: int, cfg: StreamConfig, rng: np.random.Generator) -> SyntheticExample:
    """One draw from the mixture of nominal and drift-transformed generators at time ``t``."""
    x, y, g = _draw(np.array([t]), np.array([alpha_at(t, cfg)]), cfg, rng)
    return SyntheticExample(t, x[0], int(y[0]), int(g[0]), float(t + cfg.delay))


@dataclass
class Stream:
    x: np.ndarray
    y: np.ndarray
    group: np.ndarray
    alpha: np.ndarray
    arrival: np.ndarray

    def __len__(self):
        return self.y.size


def generate_stream(cfg: StreamConfig, rng: np.random.Generator, T: int | None = None) -> Stream:
    """Vectorized stream for t = 1..T; row ``i`` holds time index ``i + 1``."""
    T = cfg.T if T is None else T
    ts = np.arange(1, T + 1)
    al = alpha_at(ts, cfg)
    x, y, g = _draw(ts, al, cfg, rng)
    return Stream(x, y, g, np.asarray(al, dtype=float), (ts + cfg.delay).astype(float))


def nominal_sample(n: int, cfg: StreamConfig, rng: np.random.Generator):
    return _draw(np.zeros(n), np.zeros(n), cfg, rng)


class DelayQueue:
    """Labels requested for stream indices, visible once their arrival time passes."""

    def __init__(self):
        self._pending = {}

    def push(self, index: int, label: int, arrival: float):
        if index not in self._pending:
            self._pending[index] = (label, arrival)

    def visible(self, index: int, t: int) -> bool:
        item = self._pending.get(index)
        return item is not None and item[1] <= t

    def labeled(self, t: int) -> dict:
        return {i: lab for i, (lab, arr) in self._pending.items() if arr <= t}

    def __contains__(self, index):
        return index in self._pending

    def __len__(self):
        return len(self._pending)


# surrogate model

@dataclass
class SurrogateModel:
    W: np.ndarray
    b: np.ndarray
    eta: float = 1.0
    store: dict = field(default_factory=dict)
    current_id: int = 0
    safe_id: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("temperature must be positive")
        if not self.store:
            self.store[0] = (self.W.copy(), self.b.copy(), self.eta)

    def params(self):
        return self.W.copy(), self.b.copy(), self.eta

    def with_params(self, W, b, eta) -> "SurrogateModel":
        return replace(self, W=W, b=b, eta=eta)


class ActionOutcome(NamedTuple):
    model: SurrogateModel
    applied: bool


def model_logits(model: SurrogateModel, X) -> np.ndarray:
    return np.atleast_2d(X) @ model.W.T + model.b


def model_predict(model: SurrogateModel, x) -> np.ndarray:
    """Class probabilities ``softmax(logits / eta)``; 1-D input gives a 1-D output."""
    x = np.asarray(x, dtype=float)
    P = softmax(model_logits(model, x) / model.eta, axis=1)
    return P[0] if x.ndim == 1 else P


def train_softmax(X, y, classes, W0=None, b0=None, l2=1e-3, iters=300, lr=0.5):
    """Full-batch gradient descent on mean cross-entropy plus ``l2/2 |W|^2``."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    W = np.zeros((classes, p)) if W0 is None else np.array(W0, dtype=float)
    b = np.zeros(classes) if b0 is None else np.array(b0, dtype=float)
    Y1 = np.eye(classes)[np.asarray(y)]
    for _ in range(iters):
        P = softmax(X @ W.T + b, axis=1)
        R = P - Y1
        W -= lr * (R.T @ X / n + l2 * W)
        b -= lr * R.mean(axis=0)
    return W, b


def launch_model(X, y, classes) -> SurrogateModel:
    W, b = train_softmax(X, y, classes, iters=400)
    return SurrogateModel(W, b, 1.0)


def nll_at_temperature(logits, y, eta) -> float:
    return float(-log_softmax(logits / eta, axis=1)[np.arange(len(y)), y].mean())


def act_recalibrate(model: SurrogateModel, X, y, bounds=(0.05, 20.0)) -> ActionOutcome:
    """Refit the temperature by bounded 1-D NLL minimization; logits untouched."""
    if len(y) == 0:
        return ActionOutcome(model, False)
    logits = model_logits(model, X)
    y = np.asarray(y)
    res = minimize_scalar(lambda e: nll_at_temperature(logits, y, e), bounds=bounds,
                          method="bounded", options={"xatol": 1e-5})
    return ActionOutcome(model.with_params(model.W.copy(), model.b.copy(), float(res.x)), True)


def entropy_and_grad(W, b, eta, X):
    """Mean predictive entropy over ``X`` and its gradient w.r.t. ``(W, b)``."""
    Z = (X @ W.T + b) / eta
    lp = log_softmax(Z, axis=1)
    P = np.exp(lp)
    H = -(P * lp).sum(axis=1)
    G = -P * (lp + H[:, None])
    n = X.shape[0]
    return float(H.mean()), G.T @ X / (n * eta), G.sum(axis=0) / (n * eta)


def act_tta(model: SurrogateModel, X, steps: int = 5, lr: float = 1e-4) -> ActionOutcome:
    """Entropy-minimizing gradient steps on recent unlabeled inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("TTA needs a nonempty recent window")
    W, b = model.W.copy(), model.b.copy()
    for _ in range(steps):
        _, gW, gb = entropy_and_grad(W, b, model.eta, X)
        W -= lr * gW
        b -= lr * gb
    return ActionOutcome(model.with_params(W, b, model.eta), True)


def act_retrain(model: SurrogateModel, X, y, rng: np.random.Generator, max_n: int = 2000,
                l2: float = 1e-3, iters: int = 300, lr: float = 0.5) -> ActionOutcome:
    """Warm-started refit on labeled data; stores and activates a new checkpoint.

    ``rng`` subsamples the labeled set when it exceeds ``max_n``.
    """
    y = np.asarray(y)
    if y.size == 0 or np.unique(y).size < 2:
        return ActionOutcome(model, False)
    X = np.asarray(X, dtype=float)
    if y.size > max_n:
        keep = np.sort(rng.choice(y.size, max_n, replace=False))
        X, y = X[keep], y[keep]
    W, b = train_softmax(X, y, model.W.shape[0], model.W, model.b, l2, iters, lr)
    store = dict(model.store)
    new_id = max(store) + 1
    store[new_id] = (W.copy(), b.copy(), 1.0)
    return ActionOutcome(replace(model, W=W, b=b, eta=1.0, store=store, current_id=new_id), True)


def act_rollback(model: SurrogateModel) -> ActionOutcome:
    W, b, eta = model.store[model.safe_id]
    return ActionOutcome(replace(model, W=W.copy(), b=b.copy(), eta=eta, current_id=model.safe_id), True)


def mark_safe(model: SurrogateModel) -> SurrogateModel:
    """Record the deployed parameters as the validated checkpoint."""
    store = dict(model.store)
    cur = store.get(model.current_id)
    same = cur is not None and np.array_equal(cur[0], model.W) and np.array_equal(cur[1], model.b) and cur[2] == model.eta
    cid = model.current_id
    if not same:
        cid = max(store) + 1
        store[cid] = (model.W.copy(), model.b.copy(), model.eta)
    return replace(model, store=store, current_id=cid, safe_id=cid)


def abstain_rule(probs, threshold: float = 0.6):
    """True where the model should predict (max probability >= threshold)."""
    P = np.asarray(probs, dtype=float)
    out = P.max(axis=-1) >= threshold
    return bool(out) if out.ndim == 0 else out


# launch bundle shared by runs, episodes and calibration

@dataclass
class Launch:
    model: SurrogateModel
    reference: EmbeddingWindow
    suite: MonitorSuite
    stats: ReferenceStats
    val_x: np.ndarray
    val_y: np.ndarray


def make_launch(cfg: StreamConfig, rng: np.random.Generator, n_ref: int = 512, window: int = 64,
                label_window: int = 128, n_train: int = 2000, n_val: int = 1000,
                monitor_cfg: MonitorConfig | None = None) -> Launch:
    """Train the launch model and fit monitor reference statistics on nominal data."""
    Xtr, ytr, _ = nominal_sample(n_train, cfg, rng)
    model = launch_model(Xtr, ytr, cfg.classes)
    Xr, _, gr = nominal_sample(n_ref, cfg, rng)
    ref = EmbeddingWindow(Xr, "reference", gr)
    Xv, yv, _ = nominal_sample(n_val, cfg, rng)
    suite = MonitorSuite(ref, monitor_cfg)
    Pv = model_predict(model, Xv)
    labeled = np.column_stack([Pv.max(axis=1), (Pv.argmax(axis=1) == yv).astype(float)])
    stats = suite.fit_stats(model_predict(model, Xr), labeled, window, label_window, rng)
    return Launch(model, ref, suite, stats, Xv, yv)


def evidence_at(launch: Launch, model: SurrogateModel, xs, groups, recent_idx, labeled_idx, ys,
                rng, mean_entropy_ref: float | None = None):
    """Standardized evidence for a recent window and a labeled set drawn from ``xs``."""
    rec = EmbeddingWindow(xs[recent_idx], "recent", groups[recent_idx])
    P = model_predict(model, rec.points)
    if len(labeled_idx):
        Pl = model_predict(model, xs[labeled_idx])
        lab = np.column_stack([Pl.max(axis=1), (Pl.argmax(axis=1) == ys[labeled_idx]).astype(float)])
    else:
        lab = np.empty((0, 2))
    H = launch.stats.mean_entropy_ref if mean_entropy_ref is None else mean_entropy_ref
    raw = launch.suite.raw(rec, P, lab, H, launch.stats.ece_ref, rng)
    return standardize(raw, launch.stats)


def generate_episodes(M: int, L: int, cfg: StreamConfig, rng: np.random.Generator,
                      launch: Launch | None = None, window: int = 64, cert_window: int = 256,
                      label_rate: float = 0.5, onset_range: tuple | None = None) -> EpisodeDataset:
    """Synthetic episodes with one drift onset each, types assigned round-robin.

    Every step emits the standardized evidence vector and the true drift type
    (``none`` before onset). Labels for the ECE monitor arrive after
    ``cfg.delay`` steps for a ``label_rate`` fraction of inputs.
    """
    if launch is None:
        launch = make_launch(cfg, rng, window=window)
    lo, hi = onset_range or (max(window + 1, L // 5), max(window + 2, 2 * L // 5))
    episodes = []
    for m in range(M):
        kind = DRIFT_KINDS[m % 4]
        t0 = int(rng.integers(lo, hi + 1))
        ecfg = replace(cfg, T=L, t0=t0, drift_type=kind if kind != "none" else "covariate",
                       pattern=cfg.pattern if cfg.pattern != "recurring" else "sudden")
        if kind == "none":
            ecfg = replace(ecfg, t0=L)
        warm_x, warm_y, warm_g = nominal_sample(window, cfg, rng)
        s = generate_stream(ecfg, rng)
        xs = np.vstack([warm_x, s.x])
        ys = np.concatenate([warm_y, s.y])
        gs = np.concatenate([warm_g, s.group])
        has_label = rng.random(ys.size) < label_rate
        Z = np.empty((L, 5))
        lab = np.zeros(L, dtype=np.int64)
        for t in range(1, L + 1):
            end = window + t  # rows [0, end) observed
            recent = np.arange(end - window, end)
            hi_lab = end - cfg.delay
            lo_lab = max(0, hi_lab - cert_window)
            li = np.arange(lo_lab, max(lo_lab, hi_lab))
            li = li[has_label[li]]
            Z[t - 1] = evidence_at(launch, launch.model, xs, gs, recent, li, ys, rng).standardized
            if kind != "none" and t >= t0:
                lab[t - 1] = int(DriftType[kind.upper()])
        episodes.append((Z, lab))
    return EpisodeDataset(episodes)


def window_risk(model: SurrogateModel, X, y) -> float:
    if len(y) == 0:
        return 0.0
    return float((model_predict(model, X).argmax(axis=1) != np.asarray(y)).mean())


def selective_window_risk(model: SurrogateModel, X, y, threshold: float):
    """Risk among accepted inputs and the coverage; risk is None at zero coverage."""
    P = model_predict(model, X)
    acc = abstain_rule(P, threshold)
    if not np.any(acc):
        return None, 0.0
    err = P.argmax(axis=1) != np.asarray(y)
    return float(err[acc].mean()), float(acc.mean())


def calibrate_gain_table(cfg: StreamConfig, H: int = 50, sigma_r: float = 0.10,
                         rng: np.random.Generator | None = None, episodes_per_type: int = 6,
                         launch: Launch | None = None, window: int = 64, eval_window: int = 128,
                         lookback: int = 256, tta_lr: float = 1e-2, theta_sel: float = 0.6) -> np.ndarray:
    """Counterfactual one-step gains ``(R_base - R_a) / sigma_r`` at horizon ``H``.

    Each episode draws one stream; every action branch replays that stream and
    the same action RNG seed, and afterwards the deployment idles until the
    evaluation point. Risk is measured on the last ``eval_window`` inputs.
    """
    from .controller import Action

    rng = np.random.default_rng(0) if rng is None else rng
    if launch is None:
        launch = make_launch(cfg, rng, window=window)
    G = np.zeros((4, 7))
    for d, kind in enumerate(DRIFT_KINDS):
        acc = np.zeros(7)
        for _ in range(episodes_per_type):
            t0 = lookback + cfg.delay + 1
            ta = t0 + cfg.delay + window
            T = ta + H
            ecfg = replace(cfg, T=T, t0=t0 if kind != "none" else T, pattern="sudden",
                           drift_type=kind if kind != "none" else "covariate")
            s = generate_stream(ecfg, rng)
            act_seed = int(rng.integers(2**31))
            lab_hi = ta - cfg.delay
            li = np.arange(max(0, lab_hi - lookback), lab_hi)
            rec = np.arange(ta - window, ta)
            ev = np.arange(T - eval_window, T)
            risks = np.zeros(7)
            for a in Action:
                arng = np.random.default_rng(act_seed)
                m = launch.model
                if a == Action.A1:
                    m = act_recalibrate(m, s.x[li], s.y[li]).model
                elif a == Action.A2:
                    m = act_tta(m, s.x[rec], 5, tta_lr).model
                elif a == Action.A4:
                    m = act_retrain(m, s.x[li], s.y[li], arng).model
                elif a == Action.A5:
                    m = act_rollback(m).model
                if a == Action.A6:
                    r, _ = selective_window_risk(m, s.x[ev], s.y[ev], theta_sel)
                    risks[a] = 0.0 if r is None else r
                else:
                    risks[a] = window_risk(m, s.x[ev], s.y[ev])
            acc += (risks[0] - risks) / sigma_r
        G[d] = acc / episodes_per_type
    G[:, 0] = 0.0
    return G
