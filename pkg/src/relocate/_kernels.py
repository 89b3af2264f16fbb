"""Numeric inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin.  Setting ``RELOCATE_NO_NUMBA=1`` in the
environment (before import) selects the numpy path; so does a missing numba
install.  Both paths must return identical results, which the test-suite
checks directly.
"""

from __future__ import annotations

import os

import numpy as np

INF = np.iinfo(np.int64).max // 4

_DISABLED = os.environ.get("RELOCATE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by RELOCATE_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------

def floyd_warshall_numpy(dist: np.ndarray) -> np.ndarray:
    d = np.array(dist, dtype=np.int64, copy=True)
    n = d.shape[0]
    for k in range(n):
        via = d[:, k, None] + d[None, k, :]
        np.minimum(d, via, out=d)
    # keep "unreachable" saturated instead of drifting past INF
    d[d > INF] = INF
    return d


def node_imbalance_numpy(tail: np.ndarray, head: np.ndarray, flow: np.ndarray,
                         n_nodes: int) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.int64)
    out = np.bincount(tail, weights=flow, minlength=n_nodes)
    inn = np.bincount(head, weights=flow, minlength=n_nodes)
    return np.rint(out - inn).astype(np.int64)


def suffix_subset_sums_numpy(loads: np.ndarray, max_count: int, max_sum: int) -> np.ndarray:
    n = loads.shape[0]
    reach = np.zeros((n + 1, max_count + 1, max_sum + 1), dtype=np.bool_)
    reach[n, 0, 0] = True
    for i in range(n - 1, -1, -1):
        w = int(loads[i])
        reach[i] = reach[i + 1]
        if w <= max_sum:
            reach[i, 1:, w:] |= reach[i + 1, :-1, : max_sum + 1 - w]
    return reach


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

def _floyd_warshall_loops(dist):
    d = dist.copy()
    n = d.shape[0]
    for k in range(n):
        for i in range(n):
            dik = d[i, k]
            if dik >= INF:
                continue
            for j in range(n):
                dkj = d[k, j]
                if dkj >= INF:
                    continue
                cand = dik + dkj
                if cand < d[i, j]:
                    d[i, j] = cand
    return d


def _node_imbalance_loops(tail, head, flow, n_nodes):
    bal = np.zeros(n_nodes, dtype=np.int64)
    for a in range(tail.shape[0]):
        bal[tail[a]] += flow[a]
        bal[head[a]] -= flow[a]
    return bal


def _suffix_subset_sums_loops(loads, max_count, max_sum):
    n = loads.shape[0]
    reach = np.zeros((n + 1, max_count + 1, max_sum + 1), dtype=np.bool_)
    reach[n, 0, 0] = True
    for i in range(n - 1, -1, -1):
        w = loads[i]
        for c in range(max_count + 1):
            for s in range(max_sum + 1):
                ok = reach[i + 1, c, s]
                if not ok and c > 0 and s >= w:
                    ok = reach[i + 1, c - 1, s - w]
                reach[i, c, s] = ok
    return reach


if HAVE_NUMBA:
    _fw_jit = njit(cache=True)(_floyd_warshall_loops)
    _imb_jit = njit(cache=True)(_node_imbalance_loops)
    _sss_jit = njit(cache=True)(_suffix_subset_sums_loops)

    def floyd_warshall_numba(dist: np.ndarray) -> np.ndarray:
        return _fw_jit(np.ascontiguousarray(dist, dtype=np.int64))

    def node_imbalance_numba(tail, head, flow, n_nodes: int) -> np.ndarray:
        return _imb_jit(np.ascontiguousarray(tail, dtype=np.int64),
                        np.ascontiguousarray(head, dtype=np.int64),
                        np.ascontiguousarray(flow, dtype=np.int64), int(n_nodes))

    def suffix_subset_sums_numba(loads, max_count: int, max_sum: int) -> np.ndarray:
        return _sss_jit(np.ascontiguousarray(loads, dtype=np.int64), int(max_count), int(max_sum))

    floyd_warshall = floyd_warshall_numba
    node_imbalance = node_imbalance_numba
    suffix_subset_sums = suffix_subset_sums_numba
else:
    floyd_warshall_numba = node_imbalance_numba = suffix_subset_sums_numba = None  # type: ignore[assignment]
    floyd_warshall = floyd_warshall_numpy
    node_imbalance = node_imbalance_numpy
    suffix_subset_sums = suffix_subset_sums_numpy


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
