"""Random relocation instances: stations scattered on a square plane."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

from .instance import Instance


class GenerationFailed(ValueError):
    pass


@dataclass(frozen=True)
class GenParams:
    n_stations: int
    n_overfull: int
    n_underfull: int
    T: int
    L: int
    k: int
    plane_size: float = 100.0
    surplus_range: tuple[int, int] = (1, 5)
    base_range: tuple[int, int] = (0, 3)
    capacity_range: tuple[int, int] | None = None
    neighbors: int = 3
    seed: int = 0
    name: str = ""

    def check(self) -> None:
        ints = dict(n_stations=self.n_stations, n_overfull=self.n_overfull,
                    n_underfull=self.n_underfull, T=self.T, L=self.L, k=self.k)
        bad = [k for k, v in ints.items() if v < 1]
        if bad:
            raise GenerationFailed(f"parameters must be positive: {', '.join(bad)}")
        if self.n_overfull + self.n_underfull >= self.n_stations:
            raise GenerationFailed("need n_overfull + n_underfull < n_stations (the depot is a station)")
        lo, hi = self.surplus_range
        if not 1 <= lo <= hi:
            raise GenerationFailed(f"bad surplus range {self.surplus_range}")
        if self.plane_size <= 0 or self.neighbors < 1:
            raise GenerationFailed("plane_size and neighbors must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> GenParams:
        data = dict(data)
        for key in ("surplus_range", "base_range", "capacity_range"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)


def _balance(rng: np.random.Generator, surplus: np.ndarray, deficit: np.ndarray,
             lo: int, hi: int) -> None:
    """Nudge the two vectors in place until their sums agree, staying in ``[lo, hi]``."""
    while (diff := int(surplus.sum() - deficit.sum())) != 0:
        grow, shrink = (deficit, surplus) if diff > 0 else (surplus, deficit)
        up = np.flatnonzero(grow < hi)
        if up.size:
            grow[rng.choice(up)] += 1
            continue
        down = np.flatnonzero(shrink > lo)
        if not down.size:
            raise GenerationFailed("cannot balance surpluses and deficits within the surplus range")
        shrink[rng.choice(down)] -= 1


def generate(params: GenParams) -> Instance:
    """Draw an instance; the depot is station 0 at the centre of the plane."""
    params.check()
    rng = np.random.default_rng(params.seed)
    n = params.n_stations
    pts = rng.uniform(0.0, params.plane_size, size=(n, 2))
    pts[0] = params.plane_size / 2.0

    euclid = cdist(pts, pts)
    weight = np.maximum(1, np.rint(euclid)).astype(np.int64)
    pairs = set()
    k_nn = min(params.neighbors, n - 1)
    order = np.argsort(euclid, axis=1, kind="stable")
    for i in range(n):
        for j in order[i, 1:k_nn + 1]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    # zero-length pairs would vanish from the sparse MST input
    mst = minimum_spanning_tree(np.where(euclid > 0, euclid, 1e-9) * ~np.eye(n, dtype=bool)).tocoo()
    for i, j in zip(mst.row.tolist(), mst.col.tolist()):
        pairs.add((min(i, j), max(i, j)))
    edges = [(i, j, int(weight[i, j])) for i, j in sorted(pairs)]

    chosen = rng.permutation(np.arange(1, n))
    over = np.sort(chosen[: params.n_overfull])
    under = np.sort(chosen[params.n_overfull: params.n_overfull + params.n_underfull])
    lo, hi = params.surplus_range
    surplus = rng.integers(lo, hi + 1, size=over.size)
    deficit = rng.integers(lo, hi + 1, size=under.size)
    _balance(rng, surplus, deficit, lo, hi)

    b_lo, b_hi = params.base_range
    base = rng.integers(b_lo, b_hi + 1, size=n)
    base[0] = 0
    z0 = base.copy()
    zT = base.copy()
    z0[over] += surplus
    zT[under] += deficit

    if params.capacity_range is None:
        cap = z0 + zT + params.L
    else:
        c_lo, c_hi = params.capacity_range
        cap = rng.integers(c_lo, c_hi + 1, size=n)
        if np.any(cap < np.maximum(z0, zT)):
            raise GenerationFailed("capacity range too small for the drawn car counts")

    name = params.name or f"s{n}_o{params.n_overfull}_u{params.n_underfull}_seed{params.seed}"
    return Instance.from_edges(n, edges, capacity=cap.tolist(), z0=z0.tolist(), zT=zT.tolist(),
                               k=params.k, L=params.L, T=params.T, depot=0, name=name)
