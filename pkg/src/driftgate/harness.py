"""Stream runs for the certified controller and baselines, plus metrics and sweeps."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import belief as bel
from .audit import AuditSampler
from .controller import (
    DEFAULT_GAINS, HEAVY, Action, AuditLogEntry, ControllerConfig, ControllerState, action_cost,
    check_gain_table, controller_step, feasible_actions, heavy_due, mark_executed, query_size, utility,
)
from .monitors import EmbeddingWindow, MonitorConfig, entropies, standardize
from .riskcert import Certificate, certify_losses
from .simenv import (
    Launch, StreamConfig, abstain_rule, act_recalibrate, act_retrain, act_rollback, act_tta,
    generate_stream, make_launch, mark_safe, model_predict,
)

PURPOSES = ("launch", "stream", "priority", "monitor", "action", "noise")


class Policy(str, enum.Enum):
    CERTIFIED = "certified_controller"
    NO_CERTIFICATE = "no_certificate"
    ALARM_ONLY = "alarm_only"
    ADAPT_ALWAYS = "adapt_always"
    RETRAIN_SCHEDULE = "retrain_schedule"
    SELECTIVE_ONLY = "selective_only"


@dataclass(frozen=True)
class RunConfig:
    """Everything about a run that is not stream or controller configuration."""

    window: int = 64
    n_ref: int = 512
    theta_alarm: float = 2.5
    adapt_lr: float = 1e-4
    adapt_steps: int = 1
    tta_lr: float = 1e-2
    tta_steps: int = 5
    retrain_period: int = 300
    theta_sel: float = 0.6
    safe_refresh: int = 100
    monitor_noise: float = 0.0
    disc_iters: int = 100

    def __post_init__(self):
        if self.window < 2 or self.n_ref < 2 * self.window:
            raise ValueError("need window >= 2 and n_ref >= 2 * window")
        if self.retrain_period < 1 or self.safe_refresh < 1:
            raise ValueError("retrain_period and safe_refresh must be positive")
        if self.monitor_noise < 0:
            raise ValueError("monitor_noise must be nonnegative")


def desk_stream(**overrides) -> StreamConfig:
    base = dict(T=700, t0=200, delay=50, pattern="sudden", drift_type="covariate")
    base.update(overrides)
    return StreamConfig(**base)


def desk_controller(**overrides) -> ControllerConfig:
    return ControllerConfig.desk(**overrides)


@dataclass
class Artifacts:
    emission: bel.EmissionModel
    transitions: np.ndarray
    gains: np.ndarray = field(default_factory=lambda: DEFAULT_GAINS.copy())


def default_artifacts() -> Artifacts:
    """Uninformative emission with sticky transitions; used when nothing is calibrated."""
    T = np.full((4, 4), 0.01 / 3)
    np.fill_diagonal(T, 0.99)
    return Artifacts(bel.EmissionModel(np.zeros((4, 5)), np.zeros(4)), T)


@dataclass
class MetricsReport:
    """Run-level metrics; ``None`` marks an undefined delay or recovery.

    With several drift events the per-event values are kept in
    ``detection_delays`` / ``recovery_times`` and the scalar fields hold their
    mean (undefined if any event is undefined).
    """

    total_cost: float
    violations: int
    detection_delay: float | None
    recovery_time: float | None
    worst_group_accuracy: float | None
    fir: float | None
    heavy_fir: float | None
    heavy_count: int
    labels_used: int
    undefined_risk_steps: int = 0
    detection_delays: list = field(default_factory=list)
    recovery_times: list = field(default_factory=list)
    risk_trace: list = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("risk_trace")
        return d


def rngs_for(seed: int) -> dict:
    """Independent generators per purpose, derived only from ``seed``."""
    kids = np.random.SeedSequence(int(seed)).spawn(len(PURPOSES))
    return {p: np.random.default_rng(k) for p, k in zip(PURPOSES, kids)}


# metrics

def detection_delay(alarms: Sequence[bool], t0: int, end: int | None = None) -> int | None:
    """Steps from onset ``t0`` to the first alarm; ``alarms[i]`` is time ``i + 1``.

    The search stops before time ``end`` when given.
    """
    stop = len(alarms) if end is None else min(len(alarms), end - 1)
    for t in range(max(1, t0), stop + 1):
        if alarms[t - 1]:
            return t - t0
    return None


def recovery_time(trace: Sequence, t0: int, tau: float, end: int | None = None) -> int | None:
    """Steps from ``t0`` to the first defined risk value at or below ``tau``."""
    stop = len(trace) if end is None else min(len(trace), end - 1)
    for t in range(max(1, t0), stop + 1):
        r = trace[t - 1]
        if r is not None and r <= tau:
            return t - t0
    return None


def event_recovery_time(trace: Sequence, t0: int, tau: float, end: int | None = None) -> int | None:
    """Recovery measured from onset, after the first post-onset unsafe step.

    A step is unsafe when its risk exceeds ``tau`` or is undefined because the
    system handed off every input. Returns 0 when no unsafe step follows onset.
    """
    stop = len(trace) if end is None else min(len(trace), end - 1)
    start = None
    for t in range(max(1, t0), stop + 1):
        r = trace[t - 1]
        if r is None or r > tau:
            start = t
            break
    if start is None:
        return 0
    rec = recovery_time(trace, start, tau, end)
    return None if rec is None else start + rec - t0


def drift_onsets(cfg: StreamConfig) -> list:
    """Onset times of drift events: ``t0`` for one-shot patterns, each period start otherwise."""
    if cfg.pattern != "recurring":
        return [cfg.t0]
    return [max(1, k * cfg.period) for k in range(0, (cfg.T - 1) // cfg.period + 1)]


def _event_mean(vals):
    if not vals or any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def violations(trace: Sequence, tau: float) -> int:
    return int(sum(1 for r in trace if r is not None and r > tau))


def worst_group_accuracy(per_step: Sequence) -> float | None:
    """Minimum over steps of the minimum per-group accuracy; empty groups are skipped.

    ``per_step`` holds one mapping (or sequence) of group accuracies per step;
    ``None`` entries mark groups without samples.
    """
    best = None
    for accs in per_step:
        vals = accs.values() if isinstance(accs, dict) else accs
        vals = [a for a in vals if a is not None]
        if not vals:
            continue
        m = min(vals)
        best = m if best is None else min(best, m)
    return best


def fir(actions: Sequence[int], trace: Sequence, tau: float, heavy_only: bool = False) -> float | None:
    """Share of already-safe steps on which the policy intervened."""
    safe = [i for i, r in enumerate(trace) if r is not None and r <= tau]
    if not safe:
        return None
    if heavy_only:
        hits = sum(1 for i in safe if actions[i] in (int(Action.A4), int(Action.A5)))
    else:
        hits = sum(1 for i in safe if actions[i] != int(Action.A0))
    return hits / len(safe)


def _interventions(log: Sequence[AuditLogEntry]) -> list:
    """Per-step action code; an executed heavy action takes precedence."""
    return [e.executed if e.executed is not None else e.action for e in log]


def metrics_from_log(log: Sequence[AuditLogEntry], onsets, tau: float) -> MetricsReport:
    """Recompute every metric from an audit log; ``onsets`` is an int or a list of onset times."""
    onsets = [int(onsets)] if np.isscalar(onsets) else [int(o) for o in onsets]
    trace = [e.risk_oracle for e in log]
    alarms = [e.alarm for e in log]
    acts = _interventions(log)
    post = [e.wg_acc for e in log if e.t >= min(onsets)]
    ends = onsets[1:] + [None]
    dets = [detection_delay(alarms, o, e) for o, e in zip(onsets, ends)]
    recs = [event_recovery_time(trace, o, tau, e) for o, e in zip(onsets, ends)]
    return MetricsReport(
        total_cost=float(sum(e.cost for e in log)),
        violations=violations(trace, tau),
        detection_delay=_event_mean(dets),
        recovery_time=_event_mean(recs),
        worst_group_accuracy=worst_group_accuracy([[a] for a in post]),
        fir=fir(acts, trace, tau),
        heavy_fir=fir(acts, trace, tau, heavy_only=True),
        heavy_count=int(sum(1 for a in acts if a in (4, 5))),
        labels_used=int(sum(e.k for e in log)),
        undefined_risk_steps=int(sum(1 for r in trace if r is None)),
        detection_delays=dets,
        recovery_times=recs,
        risk_trace=trace,
    )


# run loop

def _group_min_acc(correct, groups):
    accs = [float(correct[groups == g].mean()) for g in (0, 1) if np.any(groups == g)]
    return min(accs) if accs else None


def run_stream(policy, stream_cfg: StreamConfig, ctrl_cfg: ControllerConfig, seed: int,
               run_cfg: RunConfig | None = None, artifacts: Artifacts | None = None,
               launch: Launch | None = None):
    """Simulate one policy on one stream.

    Parameters
    ----------
    policy : Policy or str
        Which decision rule acts on the stream.
    stream_cfg, ctrl_cfg : StreamConfig, ControllerConfig
        Stream and controller settings; ``ctrl_cfg.window_len`` is the
        certifiable window length.
    seed : int
        Sole source of randomness; every purpose gets its own child stream.
    run_cfg : RunConfig, optional
        Monitor window, baseline parameters and sweep perturbations.
    artifacts : Artifacts, optional
        Fitted belief model, transitions and gain table.
    launch : Launch, optional
        Pre-built launch model and monitor reference for this seed.

    Returns
    -------
    tuple
        ``(log, report)`` with one ``AuditLogEntry`` per step.
    """
    policy = Policy(policy)
    rc = run_cfg or RunConfig()
    art = artifacts or default_artifacts()
    G = check_gain_table(art.gains)
    cfg, cc = stream_cfg, ctrl_cfg
    R = rngs_for(seed)
    if launch is None:
        launch = make_launch(cfg, R["launch"], n_ref=rc.n_ref, window=rc.window,
                             label_window=min(cc.window_len, 256),
                             monitor_cfg=MonitorConfig(disc_iters=rc.disc_iters))
    s = generate_stream(cfg, R["stream"])
    T, d, N, n = cfg.T, cfg.delay, cc.window_len, rc.window
    sampler = AuditSampler(T, d, R["priority"])
    filt = bel.BeliefFilter(art.transitions, art.emission)
    state = ControllerState.fresh(cc)
    # the launch deployment counts as the latest retrain and rollback
    state = replace(state, t_last_retrain=0, t_last_rollback=0)
    model = launch.model
    ref_pts = launch.reference.points
    H_ref_cache = (None, launch.stats.mean_entropy_ref)
    consec_safe = 0
    prev_cert = Certificate(t=0, n=0, r_hat=0.0, radius=1.0, upper=1.0, safe=False)
    log = []
    can_abstain = policy is Policy.SELECTIVE_ONLY

    for t in range(1, T + 1):
        executed, extra = None, 0.0
        lo, hi = max(1, t - d - N + 1), t - d
        sampler.set_window(lo, hi)

        # scheduled heavy actions run before monitoring
        due = heavy_due(state, t, cc) if policy is Policy.CERTIFIED else None
        if due is not None:
            model = _apply_heavy(due, model, sampler, lo, hi, t, s, R["action"])
            state = mark_executed(state, due, t)
            executed, extra = due, action_cost(due)

        # monitors and belief
        z = None
        if t >= n:
            if H_ref_cache[0] is not model:
                H_ref_cache = (model, float(entropies(model_predict(model, ref_pts)).mean()))
            rec = np.arange(t - n, t)
            rw = EmbeddingWindow(s.x[rec], "recent", s.group[rec])
            P_rec = model_predict(model, rw.points)
            lab_idx = sampler.labeled_in(lo, hi, t)
            if lab_idx.size:
                Pl = model_predict(model, s.x[lab_idx - 1])
                lab = np.column_stack([Pl.max(axis=1), (Pl.argmax(axis=1) == s.y[lab_idx - 1]).astype(float)])
            else:
                lab = np.empty((0, 2))
            raw = launch.suite.raw(rw, P_rec, lab, H_ref_cache[1], launch.stats.ece_ref, R["monitor"])
            z = standardize(raw, launch.stats).standardized
            if rc.monitor_noise > 0:
                z = z + rc.monitor_noise * R["noise"].standard_normal(z.size)
        b = filt.step(z)
        zvec = np.zeros(5) if z is None else z
        alarm = bool(z is not None and np.linalg.norm(z) > rc.theta_alarm)

        # oracle and audited losses on the certifiable window
        win = sampler.window_indices()
        if win.size:
            Pw = model_predict(model, s.x[win - 1])
            wrong = (Pw.argmax(axis=1) != s.y[win - 1]).astype(float)
            risk_model = float(wrong.mean())
            wg = _group_min_acc(1.0 - wrong, s.group[win - 1])
        else:
            Pw, wrong, risk_model, wg = None, None, None, None
        request = lambda k: sampler.request(k, s.y, t)

        def audited_losses():
            audit = sampler.audit_set()
            return wrong[audit - lo] if audit.size else np.empty(0)

        if policy is Policy.CERTIFIED:
            dec, cert, state, entry = controller_step(zvec, b, audited_losses, t, state, cc, G,
                                                      window_len=max(1, win.size), label_request=request,
                                                      prev_cert=prev_cert, executed=executed, extra_cost=extra)
            prev_cert = cert
            action = dec.action
            if not cert.safe:
                risk_star = None
            else:
                risk_star = risk_model
            safe_now = cert.safe
        else:
            k = query_size(prev_cert, float(zvec.max()), cc, state.remaining_budget)
            new = request(k)
            cert = certify_losses(audited_losses(), t, cc.cert_config(max(1, win.size)))
            prev_cert = cert
            safe_now = cert.safe
            action = Action.A0
            if policy is Policy.NO_CERTIFICATE:
                feas = feasible_actions(state, t, cc)
                best_u = -math.inf
                for a in Action:
                    if a in feas:
                        u = utility(b, a, cert.upper, cc, G, k)
                        if u > best_u:
                            action, best_u = a, u
            elif policy is Policy.ADAPT_ALWAYS:
                action = Action.A2
            elif policy is Policy.RETRAIN_SCHEDULE:
                if t % rc.retrain_period == 0 and Action.A4 in feasible_actions(state, t, cc):
                    action = Action.A4
            elif policy is Policy.SELECTIVE_ONLY:
                if not abstain_rule(model_predict(model, s.x[t - 1]), rc.theta_sel):
                    action = Action.A6
            if action == Action.A3:
                new += request(min(k, state.remaining_budget - new))
            cost = cc.label_cost * new + (action_cost(action) if action != Action.A3 else 0.0)
            state = replace(state, remaining_budget=state.remaining_budget - new,
                            labels_used=state.labels_used + new, fallback_active=not cert.safe)
            if action in HEAVY:
                model = _apply_heavy(action, model, sampler, lo, hi, t, s, R["action"])
                state = mark_executed(state, action, t)
            if can_abstain:
                if Pw is None:
                    risk_star = None
                else:
                    accm = abstain_rule(Pw, rc.theta_sel)
                    risk_star = float(wrong[accm].mean()) if accm.any() else None
            elif action == Action.A6:
                risk_star = None
            else:
                risk_star = risk_model
            entry = AuditLogEntry(t=t, z=tuple(float(v) for v in zvec), b=tuple(float(v) for v in b),
                                  upper=float(cert.upper), action=int(action), cost=float(cost), k=int(new),
                                  n_audit=cert.n, executed=None, safe=bool(cert.safe))

        # light action effects apply from the next step on
        if action == Action.A1:
            li = sampler.labeled_in(lo, hi, t)
            model = act_recalibrate(model, s.x[li - 1], s.y[li - 1]).model
        elif action == Action.A2:
            rec = s.x[max(0, t - n):t]
            if policy is Policy.ADAPT_ALWAYS:
                model = act_tta(model, rec, rc.adapt_steps, rc.adapt_lr).model
            else:
                model = act_tta(model, rec, rc.tta_steps, rc.tta_lr).model

        if policy in (Policy.CERTIFIED, Policy.NO_CERTIFICATE):
            consec_safe = consec_safe + 1 if safe_now else 0
            if consec_safe >= rc.safe_refresh:
                model = mark_safe(model)
                consec_safe = 0

        entry = replace(entry, risk_oracle=risk_star, risk_model=risk_model, alarm=alarm, wg_acc=wg)
        log.append(entry)

    return log, metrics_from_log(log, drift_onsets(cfg), cc.tau)


def _apply_heavy(a, model, sampler, lo, hi, t, s, rng):
    if a == Action.A5:
        return act_rollback(model).model
    li = sampler.labeled_in(lo, hi, t)
    return act_retrain(model, s.x[li - 1], s.y[li - 1], rng).model


# sweeps

SWEEP_KEYS = ("delay", "label_budget", "label_cost", "monitor_noise", "pattern")
SWEEP_METRICS = ("total_cost", "violations", "detection_delay", "recovery_time", "fir", "heavy_fir")


def replica_seeds(seed: int, replicas: int) -> list:
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(int(seed)).spawn(replicas)]


def _cell_configs(cell, stream_cfg, ctrl_cfg, run_cfg):
    s, c, r = stream_cfg, ctrl_cfg, run_cfg
    if "delay" in cell:
        s = replace(s, delay=int(cell["delay"]))
    if "pattern" in cell:
        s = replace(s, pattern=str(cell["pattern"]))
    if "label_budget" in cell:
        c = replace(c, label_budget=int(cell["label_budget"]))
    if "label_cost" in cell:
        c = replace(c, label_cost=float(cell["label_cost"]))
    if "monitor_noise" in cell:
        r = replace(r, monitor_noise=float(cell["monitor_noise"]))
    return s, c, r


def _run_job(job):
    policy, s, c, r, seed, art = job
    _, rep = run_stream(policy, s, c, seed, r, art)
    return rep.summary()


def _mean_sd(vals, censor):
    x = np.array([censor if v is None else v for v in vals], dtype=float)
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), sd


def run_sweep(grid: dict, replicas: int, seed: int, policy=Policy.CERTIFIED,
              stream_cfg: StreamConfig | None = None, ctrl_cfg: ControllerConfig | None = None,
              run_cfg: RunConfig | None = None, artifacts: Artifacts | None = None,
              workers: int = 1) -> list:
    """Grid of runs with per-cell mean and standard deviation over replicas.

    ``grid`` maps a subset of ``SWEEP_KEYS`` to value lists; cells are the
    cartesian product in key order. Replica seeds are shared across cells.
    Undefined delays or recoveries are censored at the remaining horizon.
    """
    for k in grid:
        if k not in SWEEP_KEYS:
            raise ValueError(f"unknown sweep key {k!r}")
    s0 = stream_cfg or desk_stream()
    c0 = ctrl_cfg or desk_controller()
    r0 = run_cfg or RunConfig()
    keys = list(grid)
    cells = [{}]
    for k in keys:
        cells = [dict(c, **{k: v}) for c in cells for v in grid[k]]
    seeds = replica_seeds(seed, replicas)
    jobs = []
    for cell in cells:
        s, c, r = _cell_configs(cell, s0, c0, r0)
        jobs.extend((Policy(policy).value, s, c, r, sd, artifacts) for sd in seeds)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    rows = []
    for ci, cell in enumerate(cells):
        s, _, _ = _cell_configs(cell, s0, c0, r0)
        reps = results[ci * replicas:(ci + 1) * replicas]
        row = dict(cell)
        for m in SWEEP_METRICS:
            mean, sd = _mean_sd([rp[m] for rp in reps], s.T - s.t0 + 1)
            row[f"{m}_mean"], row[f"{m}_sd"] = mean, sd
        row["undefined_recoveries"] = sum(1 for rp in reps if rp["recovery_time"] is None)
        rows.append(row)
    return rows


def calibrate(stream_cfg: StreamConfig, seed: int, episodes: int = 40, length: int = 300,
              run_cfg: RunConfig | None = None, with_gains: bool = False, horizon: int = 50) -> Artifacts:
    """Fit the belief model (and optionally the gain table) from synthetic episodes."""
    from .simenv import calibrate_gain_table, generate_episodes

    rc = run_cfg or RunConfig()
    R = rngs_for(seed)
    launch = make_launch(stream_cfg, R["launch"], n_ref=rc.n_ref, window=rc.window,
                         monitor_cfg=MonitorConfig(disc_iters=rc.disc_iters))
    data = generate_episodes(episodes, length, stream_cfg, R["stream"], launch, window=rc.window)
    em = bel.fit_emission(data, 1e-3, 500, seed)
    T = bel.fit_transitions(data)
    G = DEFAULT_GAINS.copy()
    if with_gains:
        G = calibrate_gain_table(stream_cfg, horizon, 0.10, R["action"], launch=launch, window=rc.window)
    return Artifacts(em, T, G)
