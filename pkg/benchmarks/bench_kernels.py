"""Compare the compiled (numba) and pure-numpy paths of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on both
paths in-process (best of several repeats, after one warm-up call for JIT
compilation), then one full training step is timed in a subprocess per
backend, with ``CONFFLOW_DISABLE_NUMBA`` toggled.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from confflow import kernels
from confflow._accel import HAVE_NUMBA


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(rng):
    cost = rng.random((20, 20))
    P = rng.standard_normal((20, 12, 3))
    Q = rng.standard_normal((20, 12, 3))
    P -= P.mean(axis=1, keepdims=True)
    Q -= Q.mean(axis=1, keepdims=True)
    vals = rng.standard_normal((4000, 72))
    idx = rng.integers(0, 600, size=4000)
    return [
        ("hungarian 20x20", lambda: kernels._hungarian_loops(cost)[0], lambda: kernels._hungarian_numpy(cost)[0]),
        ("kabsch rmsd 20x20, K=12", lambda: kernels._kabsch_rmsd_loops(P, Q), lambda: kernels._kabsch_rmsd_numpy(P, Q)),
        ("scatter-add 4000x72 -> 600", lambda: kernels._scatter_add_loops(vals, idx, 600), lambda: kernels._scatter_add_numpy(vals, idx, 600)),
    ]


_STEP = """
import time
from confflow.synthetic import toy_dataset
from confflow.equinet import ModelConfig, init_params, loss_and_grad
from confflow.flowrt import TrainConfig, path_batch
mols = list(toy_dataset())
params = init_params(ModelConfig(), 0)
batch, u = path_batch(mols, 0, TrainConfig())
loss_and_grad(params, batch, u)
t0 = time.perf_counter()
for _ in range({n}):
    batch, u = path_batch(mols, 0, TrainConfig())
    loss_and_grad(params, batch, u)
print((time.perf_counter() - t0) / {n})
"""


def step_time(disable, n):
    env = dict(os.environ, CONFFLOW_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", _STEP.format(n=n)], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=5, help="training steps timed per backend")
    ap.add_argument("--skip-step", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is unavailable or disabled; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}")
    for name, fast, slow in kernel_cases(rng):
        np.testing.assert_allclose(fast(), slow(), atol=1e-9)  # both paths must agree
        a = best_of(fast, args.repeat, 20) * 1e3
        b = best_of(slow, args.repeat, 20) * 1e3
        print(f"{name:<28} {a:>11.4f} {b:>11.4f} {b / a:>7.1f}x")
    if not args.skip_step:
        a = step_time(False, args.steps) * 1e3
        b = step_time(True, args.steps) * 1e3
        print(f"{'train step (20 molecules)':<28} {a:>11.1f} {b:>11.1f} {b / a:>7.1f}x")


if __name__ == "__main__":
    main()
