"""Compare the numba-compiled loop kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Each kernel is fed inputs shaped like the training loop's (a 256-example batch,
a buffer of grid-rooms trajectories, ...), outputs are checked for agreement,
and the best-of-``repeat`` wall time is reported. ``--end-to-end`` also times a
short tabular training run in two subprocesses, one with
``GCSL_DISABLE_NUMBA=1``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gcsl import kernels
from gcsl._accel import NUMBA_AVAILABLE


def _inputs(rng: np.random.Generator) -> dict:
    n = 256
    pos = rng.uniform(0.0, 1.0, (n, 2))
    delta = rng.choice([-0.05, 0.0, 0.05], size=(n, 2))
    probs = rng.dirichlet(np.ones(9), size=n)
    logits = rng.normal(size=(n, 5))
    acts = rng.integers(0, 5, n)
    states = rng.integers(0, 104, (200, 31))
    traj_acts = rng.integers(0, 5, (200, 30))
    target = np.zeros(31 * 104 * 104 * 5)
    idx = rng.integers(0, target.size, 93_000)
    w = rng.random(93_000)
    return {
        "four_rooms_move": (pos, delta, 0.49, 0.51, np.array([0.25, 0.75]), 0.06),
        "categorical_sample": (probs, rng.random(n)),
        "softmax_xent": (logits, acts),
        "relabel_cells": (states, traj_acts, 30),
        "scatter_add": (target, idx, w),
    }


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-10, atol=1e-12))


def bench(repeat: int) -> list[tuple[str, float, float, bool]]:
    data = _inputs(np.random.default_rng(0))
    rows = []
    for name, (loop_fn, numpy_fn) in kernels.KERNELS.items():
        args = data[name]
        if name == "scatter_add":
            # in place: each call writes into a fresh copy, which is returned for comparison
            def run_loop(a=args, fn=loop_fn):
                out = a[0].copy()
                fn(out, a[1], a[2])
                return out

            def run_np(a=args, fn=numpy_fn):
                out = a[0].copy()
                fn(out, a[1], a[2])
                return out
        else:
            run_loop = lambda a=args: loop_fn(*a)  # noqa: E731
            run_np = lambda a=args: numpy_fn(*a)  # noqa: E731
        same = _agree(run_loop(), run_np())  # also triggers compilation
        t_loop = min(timeit.repeat(run_loop, number=1, repeat=repeat))
        t_np = min(timeit.repeat(run_np, number=1, repeat=repeat))
        rows.append((name, t_loop, t_np, same))
    return rows


def end_to_end(steps: int) -> dict[str, float]:
    code = (
        "import time; from gcsl.env import make_env; from gcsl.trainer import TrainConfig, run\n"
        "env = make_env('grid-rooms'); run(env, TrainConfig(total_env_steps=12000, eval_every=12000))\n"
        f"t = time.perf_counter(); run(env, TrainConfig(total_env_steps={steps}, eval_every={steps}))\n"
        "print(time.perf_counter() - t)\n"
    )
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, GCSL_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true", help="also time a tabular grid-rooms run")
    ap.add_argument("--steps", type=int, default=60_000, help="env steps for --end-to-end")
    args = ap.parse_args(argv)

    print(f"numba available: {NUMBA_AVAILABLE}")
    print(f"{'kernel':<20} {'loop (ms)':>10} {'numpy (ms)':>11} {'speedup':>8}  outputs")
    for name, t_loop, t_np, same in bench(args.repeat):
        print(f"{name:<20} {1e3 * t_loop:10.3f} {1e3 * t_np:11.3f} {t_np / t_loop:8.2f}x  "
              f"{'agree' if same else 'DIFFER'}")
    if args.end_to_end:
        t = end_to_end(args.steps)
        print(f"tabular grid-rooms, {args.steps} env steps: numba {t['numba']:.2f} s, "
              f"numpy {t['numpy']:.2f} s ({t['numpy'] / t['numba']:.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
