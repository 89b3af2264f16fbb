"""Time the numba kernels against their numpy twins.

Run ``python benchmarks/bench_kernels.py``.  Each kernel is checked for
identical output first, then timed as the best of several repeats (the
numba path is warmed up once so compilation is not counted).
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from relocate import _kernels
from relocate._kernels import INF


def random_graph(rng: np.random.Generator, n: int) -> np.ndarray:
    d = np.full((n, n), INF, dtype=np.int64)
    np.fill_diagonal(d, 0)
    for _ in range(4 * n):
        u, v = rng.choice(n, size=2, replace=False)
        d[u, v] = d[v, u] = rng.integers(1, 100)
    return d


def cases(rng: np.random.Generator, scale: int) -> dict[str, tuple]:
    m = 2000 * scale
    tail = rng.integers(0, 500, size=m)
    head = rng.integers(0, 500, size=m)
    flow = rng.integers(0, 9, size=m)
    loads = rng.integers(1, 6, size=12)
    return {
        "floyd_warshall": ((random_graph(rng, 40 * scale),), {}),
        "node_imbalance": ((tail, head, flow, 500), {}),
        "suffix_subset_sums": ((loads, 8, 40), {}),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", type=int, default=2)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not available (or RELOCATE_NO_NUMBA is set); nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (pos, kw) in cases(rng, args.scale).items():
        fast = getattr(_kernels, f"{name}_numba")
        slow = getattr(_kernels, f"{name}_numpy")
        np.testing.assert_array_equal(fast(*pos, **kw), slow(*pos, **kw))
        times = []
        for fn in (slow, fast):
            runs = timeit.repeat(lambda: fn(*pos, **kw), number=1, repeat=args.repeat)
            times.append(min(runs) * 1000)
        print(f"{name:<20} {times[0]:>10.3f} {times[1]:>10.3f} {times[0] / times[1]:>7.1f}x")


if __name__ == "__main__":
    main()
