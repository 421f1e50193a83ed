"""Time the numba kernels against their numpy twins on identical inputs.

    python benchmarks/bench_kernels.py [--d 64] [--M 32] [--steps 20000] [--repeat 3]

Both twins are called directly, so numba must be importable and
LEAPSGD_DISABLE_NUMBA unset. Each row also reports the max abs difference
between the two results as a sanity check.
"""
import argparse
import time

import numpy as np

from leapsgd import kernels
from leapsgd._accel import NUMBA_ENABLED


def setup(M, d, n, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.choice([-1.0, 1.0], size=(M, d)) / np.sqrt(d)
    a = rng.choice([-1.0, 1.0], size=M) / M
    b = np.zeros(M)
    X = rng.standard_normal((n, d))
    Y = X[:, 0] ** 2 - 1
    return W, a, b, X, Y


def run_phase1(fn, M, d, n):
    W, a, b, X, Y = setup(M, d, n)
    a /= d
    in_s = np.ones((M, d), dtype=bool)
    leave = np.full((M, d), -1, dtype=np.int64)
    clamp = np.full((M, d), -1, dtype=np.int64)
    t0 = time.perf_counter()
    fn(W, a, b, in_s, leave, clamp, X, Y, 0.1, 0.2, 0.4, 0, 1.0, 0, kernels.NO_RECORD)
    return time.perf_counter() - t0, W


def run_phase2(fn, M, d, n):
    W, a, b, X, Y = setup(M, d, n)
    t0 = time.perf_counter()
    fn(W, a, b, X, Y, 0.5 / M, 1e-5, 0, 1.0)
    return time.perf_counter() - t0, a


def run_vanilla(batch):
    def run(fn, M, d, n):
        W, a, b, X, Y = setup(M, d, n)
        t0 = time.perf_counter()
        fn(W, a, b, X, Y, 0.4 * M / d, 2.0 / M, batch, 0, 1.0)
        return time.perf_counter() - t0, W
    return run


CASES = [
    ("phase1", run_phase1, kernels._phase1_block_nb, kernels._phase1_block_np),
    ("phase2", run_phase2, kernels._phase2_block_nb, kernels._phase2_block_np),
    ("vanilla b=1", run_vanilla(1), kernels._vanilla_block_nb, kernels._vanilla_block_np),
    ("vanilla b=16", run_vanilla(16), kernels._vanilla_block_nb, kernels._vanilla_block_np),
]


def best_of(runner, fn, M, d, n, repeat):
    times = []
    for _ in range(repeat):
        dt, out = runner(fn, M, d, n)
        times.append(dt)
    return min(times), out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if not NUMBA_ENABLED:
        raise SystemExit("numba is disabled; unset LEAPSGD_DISABLE_NUMBA to compare backends")

    M, d, n = args.M, args.d, args.steps
    print(f"M={M} d={d} samples={n} best of {args.repeat}")
    print(f"{'kernel':<14}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max diff':>11}")
    for name, runner, nb, np_ in CASES:
        runner(nb, M, d, 64)  # compile outside the timing
        t_nb, out_nb = best_of(runner, nb, M, d, n, args.repeat)
        t_np, out_np = best_of(runner, np_, M, d, n, args.repeat)
        diff = float(np.max(np.abs(out_nb - out_np)))
        print(f"{name:<14}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
