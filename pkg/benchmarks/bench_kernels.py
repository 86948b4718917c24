"""Compiled vs pure-Python kernels: neighbour row sums and per-node walk counts.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from engnn import kernels
from engnn.graphs import gen_erdos_renyi


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    rng = np.random.default_rng(0)
    cases = []
    for n, p in ((200, 0.05), (2000, 0.005)):
        g = gen_erdos_renyi(n, p, 1)
        x = rng.standard_normal((n, 64))
        cases.append((f"csr_rowsum n={n} m={g.num_edges}",
                      lambda b, g=g, x=x: kernels.csr_rowsum(g.indptr, g.indices, x, backend=b)))
    for k, closed in ((3, True), (5, True), (4, False)):
        g = gen_erdos_renyi(24, 0.3, 2)
        cases.append((f"walk_counts k={k} closed={closed} n=24",
                      lambda b, g=g, k=k, c=closed: kernels.walk_counts(g.indptr, g.indices, k, c, backend=b)))
    print(f"{'case':40s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases:
        times = {b: bench(lambda: fn(b), args.repeat) for b in backends}
        line = f"{name:40s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"  {times['python'] / times['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
