from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from relocate import _kernels
from relocate._kernels import INF

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not available")


def _random_dist(rng: np.random.Generator, n: int) -> np.ndarray:
    d = np.full((n, n), INF, dtype=np.int64)
    np.fill_diagonal(d, 0)
    for _ in range(3 * n):
        u, v = rng.choice(n, size=2, replace=False)
        d[u, v] = d[v, u] = rng.integers(1, 50)
    return d


@needs_numba
def test_floyd_warshall_paths_agree() -> None:
    rng = np.random.default_rng(3)
    for n in (2, 5, 17):
        d = _random_dist(rng, n)
        np.testing.assert_array_equal(_kernels.floyd_warshall_numba(d), _kernels.floyd_warshall_numpy(d))


@needs_numba
def test_node_imbalance_paths_agree() -> None:
    rng = np.random.default_rng(4)
    tail = rng.integers(0, 30, size=200)
    head = rng.integers(0, 30, size=200)
    flow = rng.integers(0, 9, size=200)
    np.testing.assert_array_equal(_kernels.node_imbalance_numba(tail, head, flow, 30),
                                  _kernels.node_imbalance_numpy(tail, head, flow, 30))


@needs_numba
def test_subset_sum_tables_agree() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        loads = rng.integers(1, 6, size=int(rng.integers(0, 9)))
        count, total = int(loads.size), int(loads.sum())
        np.testing.assert_array_equal(_kernels.suffix_subset_sums_numba(loads, count, total),
                                      _kernels.suffix_subset_sums_numpy(loads, count, total))


def test_subset_sum_table_matches_enumeration() -> None:
    loads = np.array([2, 3, 3, 5])
    reach = _kernels.suffix_subset_sums(loads, 4, 13)
    for mask in range(16):
        picked = [int(loads[i]) for i in range(4) if mask >> i & 1]
        assert reach[0, len(picked), sum(picked)]
    assert not reach[0, 1, 4]
    assert not reach[0, 2, 4]


def test_env_flag_selects_numpy() -> None:
    code = "from relocate import _kernels; print(_kernels.backend_name())"
    env = dict(os.environ, RELOCATE_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
