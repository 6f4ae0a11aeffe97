"""Audit-log, metrics, sweep and artifact files.

Audit logs are JSON lines: an optional first line ``{"meta": {...}}`` followed
by one flat record per step with keys in ``LOG_FIELDS`` order. Undefined
values are written as ``null`` in JSON and ``NA`` in CSV, never as 0.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Sequence

import numpy as np

from . import belief as bel
from .controller import AuditLogEntry

LOG_FIELDS = ("t", "z", "b", "upper", "action", "cost", "k", "n_audit", "executed", "safe",
              "risk_oracle", "risk_model", "alarm", "wg_acc")
LOG_CSV_HEADER = ("t", "action", "cost", "k", "upper", "safe", "risk_oracle")
METRIC_FIELDS = ("total_cost", "violations", "detection_delay", "recovery_time", "worst_group_accuracy",
                 "fir", "heavy_fir", "heavy_count", "labels_used", "undefined_risk_steps")
PARETO_HEADER = ("policy", "seed", "total_cost", "violations", "frontier")
NA = "NA"


class PersistError(OSError):
    """File access failure with the offending path in the message."""


def _guard(path, mode):
    try:
        return open(path, mode, newline="" if "b" not in mode else None, encoding="utf-8")
    except OSError as e:
        raise PersistError(f"{path}: {e.strerror or e}") from e


def _cell(v):
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _record(e: AuditLogEntry) -> dict:
    return {
        "t": int(e.t), "z": [float(v) for v in e.z], "b": [float(v) for v in e.b], "upper": float(e.upper),
        "action": int(e.action), "cost": float(e.cost), "k": int(e.k), "n_audit": int(e.n_audit),
        "executed": None if e.executed is None else int(e.executed), "safe": bool(e.safe),
        "risk_oracle": None if e.risk_oracle is None else float(e.risk_oracle),
        "risk_model": None if e.risk_model is None else float(e.risk_model),
        "alarm": bool(e.alarm), "wg_acc": None if e.wg_acc is None else float(e.wg_acc),
    }


def _entry(d: dict) -> AuditLogEntry:
    missing = [k for k in LOG_FIELDS if k not in d]
    if missing:
        raise ValueError(f"log record missing fields {missing}")
    return AuditLogEntry(t=d["t"], z=tuple(d["z"]), b=tuple(d["b"]), upper=d["upper"], action=d["action"],
                         cost=d["cost"], k=d["k"], n_audit=d["n_audit"], executed=d["executed"], safe=d["safe"],
                         risk_oracle=d["risk_oracle"], risk_model=d["risk_model"], alarm=d["alarm"],
                         wg_acc=d["wg_acc"])


def write_log(log: Sequence[AuditLogEntry], path, meta: dict | None = None):
    """Write a JSON-lines audit log; identical inputs give identical bytes."""
    with _guard(path, "w") as f:
        if meta is not None:
            f.write(json.dumps({"meta": meta}, sort_keys=True, separators=(",", ":")) + "\n")
        for e in log:
            f.write(json.dumps(_record(e), separators=(",", ":")) + "\n")


def read_log(path):
    """Inverse of ``write_log``; returns ``(entries, meta)``."""
    entries, meta = [], None
    with _guard(path, "r") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            d = json.loads(line)
            if n == 0 and "meta" in d:
                meta = d["meta"]
                continue
            entries.append(_entry(d))
    for a, b in zip(entries, entries[1:]):
        if b.t <= a.t:
            raise ValueError(f"{path}: log times must be strictly increasing")
    return entries, meta


def write_log_csv(log: Sequence[AuditLogEntry], path):
    with _guard(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_CSV_HEADER)
        for e in log:
            w.writerow([_cell(getattr(e, k)) for k in LOG_CSV_HEADER])


def write_metrics_csv(reports: dict, path):
    """One row per label (policy, seed, ...) with the fixed ``METRIC_FIELDS`` columns."""
    with _guard(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("label",) + METRIC_FIELDS)
        for label, rep in reports.items():
            d = rep.summary() if hasattr(rep, "summary") else rep
            w.writerow([label] + [_cell(d[k]) for k in METRIC_FIELDS])


def write_table_csv(rows: Sequence[dict], path, columns: Iterable[str] | None = None):
    rows = list(rows)
    cols = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with _guard(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])


def pareto_frontier(points: Sequence[tuple]) -> list:
    """Flags for (cost, violations) pairs not dominated by any other pair."""
    flags = []
    for i, (c, v) in enumerate(points):
        dom = any((c2 <= c and v2 <= v) and (c2 < c or v2 < v) for j, (c2, v2) in enumerate(points) if j != i)
        flags.append(not dom)
    return flags


def write_pareto_csv(rows: Sequence[tuple], path):
    """``rows`` holds ``(policy, seed, total_cost, violations)``; adds the frontier flag."""
    flags = pareto_frontier([(r[2], r[3]) for r in rows])
    with _guard(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PARETO_HEADER)
        for r, fl in zip(rows, flags):
            w.writerow([r[0], r[1], _cell(float(r[2])), r[3], _cell(fl)])


def read_csv(path) -> list:
    with _guard(path, "r") as f:
        return list(csv.DictReader(f))


# calibrated artifacts: belief text file plus gain table

def save_artifacts(art, directory):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise PersistError(f"{directory}: {e.strerror or e}") from e
    with _guard(os.path.join(directory, "belief.txt"), "w") as f:
        f.write(bel.dumps(art.emission, art.transitions))
    with _guard(os.path.join(directory, "gains.csv"), "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["drift_type"] + [f"A{i}" for i in range(7)])
        for name, row in zip(bel.TYPE_NAMES, np.asarray(art.gains)):
            w.writerow([name] + [repr(float(v)) for v in row])


def load_artifacts(directory):
    from .harness import Artifacts

    with _guard(os.path.join(directory, "belief.txt"), "r") as f:
        em, T = bel.loads(f.read())
    rows = read_csv(os.path.join(directory, "gains.csv"))
    if [r["drift_type"] for r in rows] != list(bel.TYPE_NAMES):
        raise ValueError(f"{directory}: gain table rows out of order")
    G = np.array([[float(r[f"A{i}"]) for i in range(7)] for r in rows])
    return Artifacts(em, T, G)


# episode datasets: one line per step, "episode step label z1 ... zm"

def write_episodes(data: bel.EpisodeDataset, path):
    with _guard(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        m = data.episodes[0][0].shape[1] if data.episodes else 0
        w.writerow(["episode", "step", "label"] + [f"z{j}" for j in range(m)])
        for e, (Z, y) in enumerate(data.episodes):
            for s in range(len(y)):
                w.writerow([e, s, int(y[s])] + [repr(float(v)) for v in Z[s]])


def read_episodes(path) -> bel.EpisodeDataset:
    rows = read_csv(path)
    groups = {}
    for r in rows:
        groups.setdefault(int(r["episode"]), []).append(r)
    episodes = []
    for e in sorted(groups):
        rs = sorted(groups[e], key=lambda r: int(r["step"]))
        zcols = [k for k in rs[0] if k.startswith("z")]
        Z = np.array([[float(r[k]) for k in zcols] for r in rs])
        y = np.array([int(r["label"]) for r in rs], dtype=np.int64)
        if np.any((y < 0) | (y >= bel.N_TYPES)):
            raise ValueError(f"{path}: labels must be drift type codes 0..{bel.N_TYPES - 1}")
        episodes.append((Z, y))
    return bel.EpisodeDataset(episodes)
