"""Times the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--dims 64 256 1024] [--sizes 10000 100000]
                                       [--pool 64] [--repeat 5]

score_all is the per-query exhaustive scan over the store matrix; mmr_select
is the greedy diversification over a candidate pool. Both backends return
identical selections; the benchmark is about speed and the float64 copy the
numpy path makes per query.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from biorag.kernels import available_backends


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_score_all(backends, sizes, dims, repeat):
    rng = np.random.default_rng(0)
    print(f"\nscore_all (best of {repeat}, seconds)")
    header = f"{'n':>9} {'dim':>6}" + "".join(f" {name:>12}" for name in backends)
    print(header)
    print("-" * len(header))
    for n in sizes:
        for dim in dims:
            matrix = rng.normal(size=(n, dim)).astype(np.float32)
            matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
            matrix = np.ascontiguousarray(matrix)
            query = rng.normal(size=dim)
            query /= np.linalg.norm(query)
            row = f"{n:>9} {dim:>6}"
            results = {}
            for name, impl in backends.items():
                results[name] = _time(lambda impl=impl: impl.score_all(matrix, query), repeat)
                row += f" {results[name]:>12.6f}"
            if len(results) == 2:
                py, cy = results.get("python"), results.get("compiled")
                if py and cy:
                    row += f"   x{py / cy:.2f}"
            print(row)


def bench_mmr(backends, pool_sizes, dims, repeat):
    rng = np.random.default_rng(1)
    print(f"\nmmr_select, k = pool/2 (best of {repeat}, seconds)")
    header = f"{'pool':>9} {'dim':>6}" + "".join(f" {name:>12}" for name in backends)
    print(header)
    print("-" * len(header))
    for m in pool_sizes:
        for dim in dims:
            cand = rng.normal(size=(m, dim)).astype(np.float32)
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            cand = np.ascontiguousarray(cand)
            query = rng.normal(size=dim)
            query /= np.linalg.norm(query)
            tie = np.arange(m, dtype=np.int64)
            row = f"{m:>9} {dim:>6}"
            results = {}
            for name, impl in backends.items():
                rel = impl.score_all(cand, query)
                results[name] = _time(
                    lambda impl=impl, rel=rel: impl.mmr_select(cand, rel, 0.5, m // 2 or 1, tie),
                    repeat,
                )
                row += f" {results[name]:>12.6f}"
            if len(results) == 2:
                py, cy = results.get("python"), results.get("compiled")
                if py and cy:
                    row += f"   x{py / cy:.2f}"
            print(row)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000, 500_000])
    parser.add_argument("--dims", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--pool", type=int, nargs="+", default=[40, 64, 256])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    print("backends:", ", ".join(backends))
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    bench_score_all(backends, args.sizes, args.dims, args.repeat)
    bench_mmr(backends, args.pool, args.dims, args.repeat)


if __name__ == "__main__":
    main()
