"""Anytime-valid upper bounds on windowed risk from uniformly audited labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"
SAMPLING_MODES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

_PI2 = math.pi ** 2


@dataclass(frozen=True)
class AuditSample:
    index: int
    loss: float
    accepted: int = 1


@dataclass(frozen=True)
class CertConfig:
    delta: float = 0.05
    tau: float = 0.20
    window_len: int = 256
    sampling_mode: str = WITHOUT_REPLACEMENT
    kappa_min: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.window_len < 1:
            raise ValueError(f"window_len must be >= 1, got {self.window_len}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling_mode {self.sampling_mode!r}")
        if not 0.0 < self.kappa_min <= 1.0:
            raise ValueError(f"kappa_min must lie in (0, 1], got {self.kappa_min}")


@dataclass(frozen=True)
class Certificate:
    t: int
    n: int
    r_hat: float
    radius: float
    upper: float
    safe: bool


@dataclass(frozen=True)
class SelectiveBound:
    upper: float
    mass_upper: float
    coverage_lower: float
    n: int


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"failure budget must lie in (0, 1), got {delta}")


def stitched_delta_n(n: int, delta: float) -> float:
    """Share of ``delta`` allotted to sample size ``n``; sums to ``delta`` over n >= 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_delta(delta)
    return 6.0 * delta / (_PI2 * n * n)


def time_delta(t: int, delta: float) -> float:
    """Share of ``delta`` allotted to time step ``t``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    _check_delta(delta)
    return 6.0 * delta / (_PI2 * t * t)


def hoeffding_radius(n: int, delta_budget: float) -> float:
    """Hoeffding radius valid simultaneously over all sample sizes.

    Parameters
    ----------
    n : int
        Number of audited losses, ``n >= 1``.
    delta_budget : float
        Failure probability spread over ``n`` with the 1/n^2 schedule.

    Returns
    -------
    float
        ``sqrt(log(1 / stitched_delta_n(n, delta_budget)) / (2 n))``.
    """
    dn = stitched_delta_n(n, delta_budget)
    return math.sqrt(math.log(1.0 / dn) / (2.0 * n))


def serfling_radius(n: int, window_len: int, delta_budget: float) -> float:
    """Hoeffding radius shrunk by the finite-population factor ``1 - (n-1)/N``."""
    if n > window_len:
        raise ValueError(f"n={n} exceeds window_len={window_len}")
    dn = stitched_delta_n(n, delta_budget)
    factor = 1.0 - (n - 1) / window_len
    return math.sqrt(factor * math.log(1.0 / dn) / (2.0 * n))


def _radius(n, cfg, budget):
    if cfg.sampling_mode == WITH_REPLACEMENT:
        return hoeffding_radius(n, budget)
    return serfling_radius(n, cfg.window_len, budget)


def _validated(samples, cfg):
    idx = np.fromiter((s.index for s in samples), dtype=np.int64, count=len(samples))
    loss = np.fromiter((s.loss for s in samples), dtype=float, count=len(samples))
    acc = np.fromiter((s.accepted for s in samples), dtype=float, count=len(samples))
    if loss.size and (not np.all(np.isfinite(loss)) or loss.min() < 0.0 or loss.max() > 1.0):
        raise ValueError("audit losses must lie in [0, 1]")
    if acc.size and not np.all((acc == 0.0) | (acc == 1.0)):
        raise ValueError("accepted flags must be 0 or 1")
    if cfg.sampling_mode == WITHOUT_REPLACEMENT and np.unique(idx).size != idx.size:
        raise ValueError("duplicate audit indices are not allowed without replacement")
    return loss, acc


def compute_certificate(samples: Sequence[AuditSample], t: int, cfg: CertConfig) -> Certificate:
    """Upper confidence bound on the risk of the window audited at step ``t``.

    The time budget ``time_delta(t, delta)`` is further stitched over the audit
    count, so the bound stays valid when the number of audits is chosen from
    past observations.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    loss, _ = _validated(samples, cfg)
    return certify_losses(loss, t, cfg)


def certify_losses(losses: np.ndarray, t: int, cfg: CertConfig) -> Certificate:
    """Array form of ``compute_certificate`` for callers that already validated losses."""
    if t < 1:
        raise ValueError("t must be >= 1")
    n = int(losses.size)
    if n == 0:
        return Certificate(t=t, n=0, r_hat=0.0, radius=1.0, upper=1.0, safe=False)
    r_hat = float(np.mean(losses))
    radius = _radius(n, cfg, time_delta(t, cfg.delta))
    upper = min(1.0, r_hat + radius)
    return Certificate(t=t, n=n, r_hat=r_hat, radius=radius, upper=upper, safe=upper <= cfg.tau)


def is_safe(cert: Certificate, tau: float) -> bool:
    return cert.upper <= tau


def selective_certificate(samples: Sequence[AuditSample], t: int, cfg: CertConfig) -> SelectiveBound:
    """Upper bound on risk among accepted predictions.

    Bounds the accepted-loss mass from above and the coverage from below, each
    with half of the step-``t`` budget, and returns their clipped ratio.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    loss, acc = _validated(samples, cfg)
    n = loss.size
    if n == 0:
        return SelectiveBound(upper=1.0, mass_upper=1.0, coverage_lower=0.0, n=0)
    budget = 3.0 * cfg.delta / (_PI2 * t * t)
    rad = _radius(n, cfg, budget)
    m_up = float(np.mean(loss * acc)) + rad
    k_lo = float(np.mean(acc)) - rad
    upper = min(1.0, m_up / max(k_lo, cfg.kappa_min))
    return SelectiveBound(upper=upper, mass_upper=m_up, coverage_lower=k_lo, n=n)
