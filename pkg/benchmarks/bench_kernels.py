"""Time the blade-product kernel: compiled extension vs numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Shapes follow the layers: a batch of N multivectors with C channels in
Cl(n) (D = 2^n), and a per-channel weight table.
"""
import argparse
import time

import numpy as np

from glgenn import kernels

SHAPES = [(32, 8, 3), (32, 8, 5), (32, 16, 5), (8, 4, 8)]  # (N, C, n)


def best_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    try:
        from glgenn import _ckernels  # noqa: F401
    except ImportError:
        print("compiled extension not built; only the fallback can be timed")
        return

    rng = np.random.default_rng(0)
    print(f"{'N':>4} {'C':>4} {'n':>3} {'op':>10} {'cython ms':>11} {'numpy ms':>10} {'speedup':>8}")
    for n_batch, chans, n in SHAPES:
        d = 1 << n
        x = rng.normal(size=(n_batch, chans, d))
        y = rng.normal(size=(n_batch, chans, d))
        g = rng.normal(size=(n_batch, chans, d))
        table = rng.normal(size=(chans, d, d))
        ops = {
            "forward": lambda b: kernels.xor_bilinear(x, y, table, backend=b),
            "table_grad": lambda b: kernels.xor_bilinear_table_grad(g, x, y, chans, backend=b),
        }
        for name, op in ops.items():
            t_c = best_time(lambda: op("cython"), args.repeats)
            t_py = best_time(lambda: op("python"), args.repeats)
            print(f"{n_batch:>4} {chans:>4} {n:>3} {name:>10} {1e3 * t_c:>11.3f} {1e3 * t_py:>10.3f} "
                  f"{t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
