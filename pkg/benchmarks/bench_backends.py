"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run:  python benchmarks/bench_backends.py
The same inputs go through both implementations; timings are
best-of-repeats after a warmup call (which also absorbs JIT compilation).
"""
import time

import numpy as np

from meta3 import _kernels_numba as kb
from meta3 import _kernels_numpy as kp


def best_of(fn, repeats=5):
    fn()  # warmup / JIT
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def row(name, numba_s, numpy_s):
    print(f"{name:34s} {numba_s * 1e3:10.3f} {numpy_s * 1e3:10.3f} {numpy_s / numba_s:8.1f}x")


def main():
    rng = np.random.default_rng(0)

    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>9s}")

    s = rng.standard_normal((60, 60))
    s = s + s.T
    row(
        "jacobi_eigh 60x60",
        best_of(lambda: kb.jacobi_eigh(s.copy(), 100, 1e-12)),
        best_of(lambda: kp.jacobi_eigh(s.copy(), 100, 1e-12)),
    )

    blocks = rng.standard_normal((25, 10, 10))
    blocks = blocks + blocks.transpose(0, 2, 1)
    roots = 0.2 + rng.random((25, 10))
    row(
        "scaled_block_eigvals 25x(10x10)",
        best_of(lambda: kb.scaled_block_eigvals(blocks, roots, 100, 1e-12)),
        best_of(lambda: kp.scaled_block_eigvals(blocks, roots, 100, 1e-12)),
    )

    lams = np.abs(rng.standard_normal(90)) * 0.2 + 0.01
    row(
        "davies_sum 20k terms, 90 lambdas",
        best_of(lambda: kb.davies_sum(8.0, lams, 0.005, 20_000, 1e-6)),
        best_of(lambda: kp.davies_sum(8.0, lams, 0.005, 20_000, 1e-6)),
    )

    m, k = 25, 10
    t = rng.standard_normal(m * k)
    v2 = 0.05 + 0.1 * rng.random(m * k)
    x = np.ones((m * k, 1))
    starts = np.arange(0, m * k + 1, k, dtype=np.int64)

    def reml_many(impl):
        def run():
            for tau2 in np.linspace(0.01, 0.5, 200):
                impl.reml_loglik_core(tau2, 0.1, t, v2, x, starts)
        return run

    row(
        "reml_loglik_core x200 (250 rows)",
        best_of(reml_many(kb)),
        best_of(reml_many(kp)),
    )

    row(
        "profile_loglik (golden section)",
        best_of(lambda: kb.profile_loglik(0, 0.1, 5.0, t, v2, x, starts, 1e-8)),
        best_of(lambda: kp.profile_loglik(0, 0.1, 5.0, t, v2, x, starts, 1e-8)),
    )


if __name__ == "__main__":
    main()
