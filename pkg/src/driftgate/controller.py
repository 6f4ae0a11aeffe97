"""Certificate-gated action selection under label budgets and cooldowns."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .riskcert import AuditSample, CertConfig, Certificate, certify_losses, compute_certificate


class Action(enum.IntEnum):
    A0 = 0  # no-op
    A1 = 1  # recalibrate
    A2 = 2  # test-time adaptation
    A3 = 3  # query labels
    A4 = 4  # retrain
    A5 = 5  # rollback
    A6 = 6  # abstain / hand off


ACTION_LABELS = ("noop", "recalibrate", "tta", "query_labels", "retrain", "rollback", "abstain")
HEAVY = (Action.A4, Action.A5)
SAFE_BRANCH = (Action.A0, Action.A1, Action.A2, Action.A3)
_FIXED_COST = {Action.A0: 0.0, Action.A1: 0.2, Action.A2: 1.0, Action.A4: 12.0, Action.A5: 1.5, Action.A6: 0.3}

# rows: none, covariate, concept, subgroup; columns: A0..A6
DEFAULT_GAINS = np.array([
    [0.0, 0.10, 0.05, 0.08, 0.12, 0.10, 0.15],
    [0.0, 0.35, 0.70, 0.25, 0.85, 0.40, 0.55],
    [0.0, 0.20, 0.30, 0.75, 1.05, 0.60, 0.65],
    [0.0, 0.25, 0.35, 0.85, 0.95, 0.55, 0.80],
])


def action_cost(a: Action, k: int = 0, label_cost: float = 0.05) -> float:
    if a == Action.A3:
        return label_cost * k
    return _FIXED_COST[Action(a)]


def check_gain_table(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != (4, 7):
        raise ValueError("gain table must be 4x7")
    if not np.all(np.isfinite(G)):
        raise ValueError("gain table entries must be finite")
    if np.any(G[:, 0] != 0.0):
        raise ValueError("no-op column of the gain table must be zero")
    return G


@dataclass(frozen=True)
class ControllerConfig:
    lam: float = 1.0
    gamma: float = 50.0
    tau: float = 0.20
    delta: float = 0.05
    sigma_u: float = 0.10
    label_budget: int = 3000
    cooldown_retrain: int = 800
    cooldown_rollback: int = 400
    k_max: int = 64
    k_high: int = 32
    k_low: int = 8
    m_low: float = 0.02
    zeta: float = 2.0
    kappa_min: float = 0.5
    label_cost: float = 0.05
    window_len: int = 1024
    sampling_mode: str = "without_replacement"

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be nonnegative")
        if not self.k_max >= self.k_high >= self.k_low >= 0:
            raise ValueError("query sizes must satisfy k_max >= k_high >= k_low >= 0")
        if self.label_budget < 0:
            raise ValueError("label_budget must be nonnegative")
        if self.cooldown_retrain < 0 or self.cooldown_rollback < 0:
            raise ValueError("cooldowns must be nonnegative")
        self.cert_config()

    @classmethod
    def desk(cls, **overrides) -> "ControllerConfig":
        base = dict(label_budget=400, cooldown_retrain=200, cooldown_rollback=100,
                    k_max=16, k_high=8, k_low=2, window_len=256)
        base.update(overrides)
        return cls(**base)

    def cert_config(self, window_len: int | None = None) -> CertConfig:
        return CertConfig(self.delta, self.tau, window_len or self.window_len, self.sampling_mode, self.kappa_min)


@dataclass
class ControllerState:
    remaining_budget: int
    t_last_retrain: float = -math.inf
    t_last_rollback: float = -math.inf
    fallback_active: bool = False
    scheduled_heavy: Action | None = None
    labels_used: int = 0

    def __post_init__(self):
        if self.remaining_budget < 0:
            raise ValueError("remaining_budget must be nonnegative")

    @classmethod
    def fresh(cls, cfg: ControllerConfig) -> "ControllerState":
        return cls(remaining_budget=cfg.label_budget)


@dataclass(frozen=True)
class Decision:
    action: Action
    k_t: int
    utility_trace: dict = field(default_factory=dict)
    schedule: Action | None = None


@dataclass(frozen=True)
class AuditLogEntry:
    t: int
    z: tuple
    b: tuple
    upper: float
    action: int
    cost: float
    k: int
    n_audit: int = 0
    executed: int | None = None
    safe: bool = False
    risk_oracle: float | None = None
    risk_model: float | None = None
    alarm: bool = False
    wg_acc: float | None = None


def feasible_actions(state: ControllerState, t: int, cfg: ControllerConfig) -> set:
    if t < 1:
        raise ValueError("t must be >= 1")
    acts = {Action.A0, Action.A1, Action.A2, Action.A6}
    if state.remaining_budget > 0:
        acts.add(Action.A3)
    if t - state.t_last_retrain >= cfg.cooldown_retrain:
        acts.add(Action.A4)
    if t - state.t_last_rollback >= cfg.cooldown_rollback:
        acts.add(Action.A5)
    return acts


def expected_gain(b, a: Action, G) -> float:
    return float(np.dot(np.asarray(b, dtype=float), np.asarray(G)[:, int(a)]))


def violation_penalty(cert_upper: float, gain: float, cfg: ControllerConfig) -> float:
    """Excess of the predicted post-action certificate over ``tau``."""
    return max(0.0, cert_upper - cfg.sigma_u * gain - cfg.tau)


def utility(b, a: Action, cert_upper: float, cfg: ControllerConfig, G, k: int = 0) -> float:
    gain = expected_gain(b, a, G)
    return gain - cfg.lam * action_cost(a, k, cfg.label_cost) - cfg.gamma * violation_penalty(cert_upper, gain, cfg)


def safety_margin(cert: Certificate, tau: float) -> float:
    return tau - cert.upper


def query_size(cert: Certificate, z_std_max: float, cfg: ControllerConfig, remaining_budget: int) -> int:
    """Piecewise label-request size: large when unsafe, medium near the threshold."""
    if not cert.safe:
        k = cfg.k_max
    elif safety_margin(cert, cfg.tau) <= cfg.m_low or z_std_max >= cfg.zeta:
        k = cfg.k_high
    else:
        k = cfg.k_low
    return max(0, min(k, int(remaining_budget)))


def select_action(b, cert: Certificate, state: ControllerState, t: int, cfg: ControllerConfig,
                  G, z_std_max: float = 0.0) -> Decision:
    """Gate on the certificate, then maximize utility over the light actions.

    An unsafe certificate always yields abstention; a rollback (preferred) or a
    retrain is scheduled when its cooldown allows.
    """
    G = np.asarray(G)
    feas = feasible_actions(state, t, cfg)
    if not cert.safe:
        sched = None
        if Action.A5 in feas:
            sched = Action.A5
        elif Action.A4 in feas:
            sched = Action.A4
        k = max(0, min(cfg.k_max, state.remaining_budget))
        return Decision(Action.A6, k, {}, sched)
    k = query_size(cert, z_std_max, cfg, state.remaining_budget)
    trace = {}
    best, best_u = Action.A0, -math.inf
    for a in SAFE_BRANCH:
        if a not in feas:
            continue
        u = utility(b, a, cert.upper, cfg, G, k)
        trace[int(a)] = u
        if u > best_u:
            best, best_u = a, u
    return Decision(best, k, trace, None)


def heavy_due(state: ControllerState, t: int, cfg: ControllerConfig) -> Action | None:
    """Scheduled heavy action if it is feasible at ``t``."""
    a = state.scheduled_heavy
    if a is None:
        return None
    return a if a in feasible_actions(state, t, cfg) else None


def mark_executed(state: ControllerState, a: Action, t: int) -> ControllerState:
    if a == Action.A4:
        return replace(state, t_last_retrain=t, scheduled_heavy=None)
    if a == Action.A5:
        return replace(state, t_last_rollback=t, scheduled_heavy=None)
    return state


def controller_step(z, b, samples, t: int, state: ControllerState, cfg: ControllerConfig, G,
                    window_len: int | None = None,
                    label_request: Callable[[int], int] | None = None,
                    prev_cert: Certificate | None = None,
                    executed: Action | None = None,
                    extra_cost: float = 0.0):
    """One control step: request labels, certify, decide, log.

    Parameters
    ----------
    z : array_like
        Standardized evidence vector.
    b : array_like
        Current belief over drift types.
    samples : sequence of AuditSample, ndarray of losses, or callable
        Audited losses from the certifiable window. A callable is evaluated
        after this step's label request so new labels enter the certificate.
    label_request : callable, optional
        Called with the number of labels to request; returns how many were new.
        When omitted every requested label is counted as new.
    prev_cert : Certificate, optional
        Certificate of the previous step; sizes this step's request.
    executed, extra_cost
        Heavy action executed at the start of this step and its cost, for the log.

    Returns
    -------
    tuple
        ``(Decision, Certificate, ControllerState, AuditLogEntry)``.
    """
    z = np.asarray(z, dtype=float)
    zmax = float(z.max()) if z.size else 0.0
    budget = state.remaining_budget

    def request(k):
        nonlocal budget
        k = min(k, budget)
        new = k if label_request is None else int(label_request(k))
        if new < 0 or new > k:
            raise ValueError("label_request returned an invalid count")
        budget -= new
        return new

    if prev_cert is None:
        prev_cert = Certificate(t=max(t - 1, 0), n=0, r_hat=0.0, radius=1.0, upper=1.0, safe=False)
    new = request(query_size(prev_cert, zmax, cfg, budget))

    if callable(samples):
        samples = samples()
    ccfg = cfg.cert_config(window_len)
    if isinstance(samples, np.ndarray):
        cert = certify_losses(samples, t, ccfg)
    else:
        cert = compute_certificate(list(samples), t, ccfg)
    dec = select_action(b, cert, replace(state, remaining_budget=budget), t, cfg, G, zmax)
    extra_new = request(dec.k_t) if dec.action == Action.A3 else 0

    cost = extra_cost + cfg.label_cost * (new + extra_new)
    if dec.action != Action.A3:
        cost += action_cost(dec.action)
    sched = dec.schedule if dec.schedule is not None else (state.scheduled_heavy if not cert.safe else None)
    new_state = replace(state, remaining_budget=budget, fallback_active=not cert.safe,
                        scheduled_heavy=sched, labels_used=state.labels_used + new + extra_new)
    dec = replace(dec, k_t=new + extra_new)
    entry = AuditLogEntry(t=t, z=tuple(float(v) for v in z), b=tuple(float(v) for v in np.asarray(b)),
                          upper=float(cert.upper), action=int(dec.action), cost=float(cost), k=int(new + extra_new),
                          n_audit=cert.n, executed=None if executed is None else int(executed), safe=bool(cert.safe))
    return dec, cert, new_state, entry
