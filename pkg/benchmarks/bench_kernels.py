"""Time the numba kernels against the numpy fallback at monitor-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 200]

The numba path is compiled (or loaded from cache) before timing. A second
section times whole stream steps with each path by re-running in a
subprocess with DRIFTGATE_DISABLE_NUMBA set and unset (the default
dispatch uses numba only for kernels where it wins).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from driftgate import _accel


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(5):
        t = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t) / repeat)
    return best


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(64, 16)), rng.normal(size=(512, 16))
    d = _accel.kernels_numpy.pair_sqdists(Y)
    y = (rng.random(64) < 0.5).astype(float)
    cases = {
        "pair_sqdists(64x16)": lambda k: k.pair_sqdists(X),
        "rbf_within_mean(64x16)": lambda k: k.rbf_within_mean(X, 0.05),
        "rbf_cross_mean(64 vs 512)": lambda k: k.rbf_cross_mean(X, Y, 0.05),
        "rbf_mean_sqd(512 ref)": lambda k: k.rbf_mean_sqd(d, 0.05),
        "logistic_gd(64x16, 100 it)": lambda k: k.logistic_gd(X, y, 100, 0.5, 0.0),
    }
    print(f"{'kernel':<28}{'numpy us':>10}{'numba us':>10}{'speedup':>9}")
    for name, call in cases.items():
        call(_accel.kernels_numba)  # compile
        tn = best_of(lambda: call(_accel.kernels_numpy), repeat)
        tb = best_of(lambda: call(_accel.kernels_numba), repeat)
        print(f"{name:<28}{tn * 1e6:>10.1f}{tb * 1e6:>10.1f}{tn / tb:>9.2f}")


STEP_SNIPPET = """
import time
from driftgate.harness import desk_stream, desk_controller, run_stream
cfg = desk_stream(T=300, t0=100)
run_stream("certified_controller", cfg, desk_controller(), 0)
t = time.perf_counter()
run_stream("certified_controller", cfg, desk_controller(), 1)
print((time.perf_counter() - t) / cfg.T)
"""


def step_table():
    out = {}
    for label, flag in (("numpy", "1"), ("default", "0")):
        env = dict(os.environ, DRIFTGATE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    print(f"\nper-step cost of a certified run: numpy {out['numpy'] * 1e3:.2f} ms, "
          f"default dispatch {out['default'] * 1e3:.2f} ms ({out['numpy'] / out['default']:.2f}x)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-steps", action="store_true", help="only time the kernels")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    kernel_table(args.repeat)
    if not args.skip_steps:
        step_table()


if __name__ == "__main__":
    main()
