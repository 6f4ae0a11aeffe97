"""Markov filtering over drift types with a discriminative emission model."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_softmax, softmax


class DriftType(enum.IntEnum):
    NONE = 0
    COVARIATE = 1
    CONCEPT = 2
    SUBGROUP = 3


TYPE_NAMES = tuple(d.name.lower() for d in DriftType)
N_TYPES = len(DriftType)
B0 = np.array([0.97, 0.01, 0.01, 0.01])
FORMAT_VERSION = 1


class Belief(NamedTuple):
    probs: np.ndarray
    degenerate: bool = False


@dataclass
class EmissionModel:
    weights: np.ndarray
    biases: np.ndarray
    beta: float = 1.0
    gauss_mean: np.ndarray | None = None
    gauss_var: np.ndarray | None = None
    kind: str = "logistic"
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gauss_var is not None and np.any(np.asarray(self.gauss_var) <= 0):
            raise ValueError("Gaussian variances must be positive")


@dataclass
class EpisodeDataset:
    """Evidence/label pairs grouped by episode."""

    episodes: list  # list of (Z: (L, m) array, labels: (L,) int array)

    def __post_init__(self):
        for Z, y in self.episodes:
            if len(y) == 0 or Z.shape[0] != len(y):
                raise ValueError("episodes must be nonempty with matching evidence and labels")

    def stacked(self):
        Z = np.vstack([Z for Z, _ in self.episodes])
        y = np.concatenate([np.asarray(y, dtype=np.int64) for _, y in self.episodes])
        return Z, y


def _check_T(T):
    T = np.asarray(T, dtype=float)
    if T.shape != (N_TYPES, N_TYPES) or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("transition matrix must be 4x4 row-stochastic")
    return T


def predict_step(prev, T) -> np.ndarray:
    """Prior for the next step: ``sum_d' T[d', d] prev[d']``."""
    p = prev.probs if isinstance(prev, Belief) else np.asarray(prev, dtype=float)
    out = _check_T(T).T @ p
    return out / out.sum()


def emission_potential(z, model: EmissionModel) -> np.ndarray:
    """Evidence potential per drift type; only ratios matter to the filter."""
    z = np.asarray(z.standardized if hasattr(z, "standardized") else z, dtype=float)
    if model.kind == "gaussian":
        if model.gauss_mean is None:
            raise ValueError("Gaussian emission model is not fitted")
        ll = -0.5 * (((z - model.gauss_mean) ** 2) / model.gauss_var + np.log(2 * np.pi * model.gauss_var)).sum(axis=1)
        return np.exp(model.beta * (ll - ll.max()))
    if model.weights is None:
        raise ValueError("emission model is not fitted")
    return softmax(model.weights @ z + model.biases) ** model.beta


def update(prev, z, T, model: EmissionModel, psi: np.ndarray | None = None) -> Belief:
    """One filter step. ``psi`` overrides the model potential when given."""
    prior = predict_step(prev, T)
    pot = emission_potential(z, model) if psi is None else np.asarray(psi, dtype=float)
    post = pot * prior
    s = post.sum()
    if not np.isfinite(s) or s <= 0:
        return Belief(np.full(N_TYPES, 1.0 / N_TYPES), True)
    return Belief(post / s, False)


def _nll_and_grad(W, b, Z, Y1, l2):
    logits = Z @ W.T + b
    lp = log_softmax(logits, axis=1)
    n = Z.shape[0]
    obj = (Y1 * lp).sum() / n - 0.5 * l2 * (W * W).sum()
    R = Y1 - np.exp(lp)
    gW = R.T @ Z / n - l2 * W
    gb = R.sum(axis=0) / n
    return obj, gW, gb


def penalized_loglik(W, b, Z, y, l2):
    """Mean log-likelihood minus ``l2/2 |W|^2`` and its gradient (for checks)."""
    Y1 = np.eye(N_TYPES)[np.asarray(y)]
    return _nll_and_grad(W, b, Z, Y1, l2)


def fit_emission(data: EpisodeDataset, l2: float = 1e-3, iters: int = 500, seed=0,
                 lr: float = 0.5, beta: float = 1.0) -> EmissionModel:
    """Multinomial logistic regression by full-batch gradient ascent.

    Initial weights are a small draw from ``seed`` so the fit is reproducible
    and breaks symmetry the same way every time.
    """
    Z, y = data.stacked()
    if np.unique(y).size < 2:
        raise ValueError("need at least two distinct drift types to fit the emission model")
    rng = np.random.default_rng(seed)
    W = 0.01 * rng.standard_normal((N_TYPES, Z.shape[1]))
    b = np.zeros(N_TYPES)
    Y1 = np.eye(N_TYPES)[y]
    for _ in range(iters):
        _, gW, gb = _nll_and_grad(W, b, Z, Y1, l2)
        W += lr * gW
        b += lr * gb
    return EmissionModel(W, b, beta)


def fit_transitions(data: EpisodeDataset) -> np.ndarray:
    if not data.episodes:
        raise ValueError("empty episode dataset")
    C = np.zeros((N_TYPES, N_TYPES))
    for _, y in data.episodes:
        y = np.asarray(y)
        np.add.at(C, (y[:-1], y[1:]), 1.0)
    rows = C.sum(axis=1)
    T = np.empty_like(C)
    for d in range(N_TYPES):
        T[d] = C[d] / rows[d] if rows[d] > 0 else np.full(N_TYPES, 1.0 / N_TYPES)
    return T


def fit_gaussian_emission(data: EpisodeDataset, floor: float = 1e-6, beta: float = 1.0) -> EmissionModel:
    Z, y = data.stacked()
    m = Z.shape[1]
    mean = np.zeros((N_TYPES, m))
    var = np.ones((N_TYPES, m))
    flags = []
    for d in range(N_TYPES):
        Zd = Z[y == d]
        if Zd.shape[0] < 2:
            flags.append(f"{TYPE_NAMES[d]}: fewer than 2 samples")
            if Zd.shape[0] == 1:
                mean[d] = Zd[0]
            var[d] = floor if Zd.shape[0] else 1.0
            continue
        mean[d] = Zd.mean(axis=0)
        var[d] = np.maximum(Zd.var(axis=0), floor)
    return EmissionModel(None, None, beta, mean, var, "gaussian", flags)


class BeliefFilter:
    """Stateful wrapper that holds the previous belief until evidence is available."""

    def __init__(self, T, model: EmissionModel, b0=B0):
        self.T = _check_T(T)
        self.model = model
        self.b = np.asarray(b0, dtype=float).copy()

    def step(self, z) -> np.ndarray:
        if z is None:
            return self.b
        self.b = update(self.b, z, self.T, self.model).probs
        return self.b


def dumps(model: EmissionModel, T) -> str:
    """Serialize an emission model and transition matrix to versioned text."""
    T = _check_T(T)
    fmt = lambda a: " ".join(repr(float(v)) for v in np.ravel(a))
    lines = [f"driftgate-belief {FORMAT_VERSION}", "types " + " ".join(TYPE_NAMES),
             f"kind {model.kind}", f"beta {model.beta!r}"]
    if model.kind == "gaussian":
        for d in range(N_TYPES):
            lines.append(f"mean {TYPE_NAMES[d]} {fmt(model.gauss_mean[d])}")
            lines.append(f"var {TYPE_NAMES[d]} {fmt(model.gauss_var[d])}")
    else:
        for d in range(N_TYPES):
            lines.append(f"weight {TYPE_NAMES[d]} {fmt(model.weights[d])}")
        lines.append(f"bias {fmt(model.biases)}")
    for d in range(N_TYPES):
        lines.append(f"transition {TYPE_NAMES[d]} {fmt(T[d])}")
    return "\n".join(lines) + "\n"


def loads(text: str):
    """Inverse of ``dumps``; returns ``(EmissionModel, T)``."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][0] != "driftgate-belief":
        raise ValueError("not a belief model file")
    if int(lines[0][1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported belief format version {lines[0][1]}")
    if tuple(lines[1][1:]) != TYPE_NAMES:
        raise ValueError("drift type order mismatch")
    kind = lines[2][1]
    beta = float(lines[3][1])
    rows = {}
    for parts in lines[4:]:
        key = parts[0]
        if key == "bias":
            rows["bias"] = np.array(parts[1:], dtype=float)
        else:
            rows[(key, parts[1])] = np.array(parts[2:], dtype=float)
    T = np.array([rows[("transition", n)] for n in TYPE_NAMES])
    if kind == "gaussian":
        mean = np.array([rows[("mean", n)] for n in TYPE_NAMES])
        var = np.array([rows[("var", n)] for n in TYPE_NAMES])
        return EmissionModel(None, None, beta, mean, var, "gaussian"), _check_T(T)
    W = np.array([rows[("weight", n)] for n in TYPE_NAMES])
    return EmissionModel(W, rows["bias"], beta), _check_T(T)
