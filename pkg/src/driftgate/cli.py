"""Command line entry point: calibrate, run, sweep, report, pareto, defaults.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as conf
from . import persist
from .harness import SWEEP_KEYS, Policy, calibrate, metrics_from_log, replica_seeds, run_stream, run_sweep

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


def _settings(args) -> conf.Settings:
    s = conf.load(args.config) if args.config else conf.defaults()
    if getattr(args, "set", None):
        pairs = {}
        for item in args.set:
            if "=" not in item:
                raise conf.ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v
        s = conf.apply(s, pairs)
    seed = conf.resolve_seed(args.seed, s)
    return conf.apply(s, {"seed": str(seed)})


def _artifacts(args):
    return persist.load_artifacts(args.artifacts) if args.artifacts else None


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, default=lambda v: v.value if hasattr(v, "value") else str(v)))


def cmd_calibrate(args):
    s = _settings(args)
    art = calibrate(s.stream, s.seed, episodes=args.episodes, length=args.length, run_cfg=s.run,
                    with_gains=args.gains, horizon=args.horizon)
    persist.save_artifacts(art, args.out)
    _emit({"artifacts": args.out, "seed": s.seed})


def _meta(s: conf.Settings, policy: Policy) -> dict:
    from .harness import drift_onsets

    return {"format": 1, "policy": policy.value, "seed": s.seed, "onsets": drift_onsets(s.stream),
            "tau": s.controller.tau, "T": s.stream.T}


def cmd_run(args):
    s = _settings(args)
    policy = Policy(args.policy) if args.policy else s.policy
    log, rep = run_stream(policy, s.stream, s.controller, s.seed, s.run, _artifacts(args))
    persist.write_log(log, args.log, _meta(s, policy))
    if args.csv:
        persist.write_log_csv(log, args.csv)
    if args.report:
        persist.write_metrics_csv({policy.value: rep}, args.report)
    _emit(rep.summary())


def _grid(items) -> dict:
    grid = {}
    for item in items:
        if "=" not in item:
            raise conf.ConfigError(f"--grid expects key=v1,v2,..., got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in SWEEP_KEYS:
            raise conf.ConfigError(f"unknown sweep key {k!r}; choose from {', '.join(SWEEP_KEYS)}")
        cast = str if k == "pattern" else (float if k in ("label_cost", "monitor_noise") else int)
        try:
            grid[k] = [cast(x) for x in v.split(",") if x.strip()]
        except ValueError as e:
            raise conf.ConfigError(f"bad grid values for {k!r}: {v!r}") from e
    if not grid:
        raise conf.ConfigError("at least one --grid entry is required")
    return grid


def cmd_sweep(args):
    s = _settings(args)
    policy = Policy(args.policy) if args.policy else s.policy
    grid = _grid(args.grid)
    rows = run_sweep(grid, args.replicas, s.seed, policy, s.stream, s.controller, s.run,
                     _artifacts(args), workers=args.workers)
    persist.write_table_csv(rows, args.out)
    _emit({"rows": len(rows), "out": args.out})


def cmd_report(args):
    log, meta = persist.read_log(args.log)
    if meta is None and (args.t0 is None or args.tau is None):
        raise conf.ConfigError("log has no meta line; pass --t0 and --tau")
    onsets = [args.t0] if args.t0 is not None else meta["onsets"]
    tau = args.tau if args.tau is not None else meta["tau"]
    rep = metrics_from_log(log, onsets, tau)
    if args.out:
        label = meta["policy"] if meta else "log"
        persist.write_metrics_csv({label: rep}, args.out)
    _emit(rep.summary())


def cmd_pareto(args):
    s = _settings(args)
    policies = [Policy(p) for p in args.policies] if args.policies else list(Policy)
    art = _artifacts(args)
    rows = []
    for seed in replica_seeds(s.seed, args.replicas):
        for p in policies:
            _, rep = run_stream(p, s.stream, s.controller, seed, s.run, art)
            rows.append((p.value, seed, rep.total_cost, rep.violations))
    persist.write_pareto_csv(rows, args.out)
    _emit({"points": len(rows), "out": args.out})


def cmd_defaults(args):
    sys.stdout.write(conf.dumps(conf.defaults()))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="driftgate", description="Certified drift-to-action control at desk scale.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, artifacts=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help=f"overrides ${conf.SEED_ENV} and the config seed")
        if artifacts:
            p.add_argument("--artifacts", help="directory written by 'calibrate'")

    p = sub.add_parser("calibrate", help="fit belief model and gain table")
    common(p, artifacts=False)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--gains", action="store_true", help="also calibrate the gain table (default: fixed reference table)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="one policy on one stream")
    common(p)
    p.add_argument("--policy", choices=[x.value for x in Policy])
    p.add_argument("--log", required=True, help="audit log (JSON lines)")
    p.add_argument("--csv", help="per-step CSV")
    p.add_argument("--report", help="metrics CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid of runs with replicas")
    common(p)
    p.add_argument("--policy", choices=[x.value for x in Policy])
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2", help=f"keys: {', '.join(SWEEP_KEYS)}")
    p.add_argument("--replicas", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="recompute metrics from a stored log")
    p.add_argument("log")
    p.add_argument("--t0", type=int, help="onset (defaults to the log's meta line)")
    p.add_argument("--tau", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pareto", help="(total cost, violations) per policy and replica")
    common(p)
    p.add_argument("--policies", nargs="+", choices=[x.value for x in Policy])
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("defaults", help="print the default config file")
    p.set_defaults(func=cmd_defaults)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_VALIDATION
    try:
        args.func(args)
    except (persist.PersistError, OSError) as e:
        print(f"driftgate: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"driftgate: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
