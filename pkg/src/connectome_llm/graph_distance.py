"""Distances between consecutive connectivity matrices.

Five matrix distances (chebyshev, manhattan, frobenius, spectral, nuclear)
and two topological ones (wass0, wass1) built on the birth/death sets of
the descending-threshold graph filtration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .connectome import ConnectomeSequence
from .errors import DimensionError, IncompatibleSummaryError, NumericError, SizeError, SpecError

METRICS = ("chebyshev", "manhattan", "frobenius", "spectral", "nuclear", "wass0", "wass1")
MATRIX_METRICS = METRICS[:5]


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}", module="graph_distance")
    return a, b


def frobenius_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def manhattan_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.sum(np.abs(a - b)))


def chebyshev_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.max(np.abs(a - b)))


def _eigvalsh(m):
    try:
        return np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}", module="graph_distance") from None


def spectral_distance(a, b) -> float:
    """L2 distance between the descending-sorted eigenvalue vectors."""
    a, b = _check_pair(a, b)
    ea = np.sort(_eigvalsh(a))[::-1]
    eb = np.sort(_eigvalsh(b))[::-1]
    return float(np.sqrt(np.sum((ea - eb) ** 2)))


def nuclear_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    try:
        s = np.linalg.svd(a - b, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}", module="graph_distance") from None
    return float(np.sum(s))


@dataclass(frozen=True)
class PersistenceSummary:
    births: np.ndarray  # B0, descending
    deaths: np.ndarray  # D1, descending

    @property
    def n_nodes(self) -> int:
        return self.births.size + 1


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def persistence_summary(c) -> PersistenceSummary:
    """Births = maximum-spanning-tree edge weights, deaths = the remaining edges.

    Kruskal over edges sorted by descending weight; ties keep (i, j) order.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise SizeError(f"connectivity matrix must be square, got {c.shape}")
    n = c.shape[0]
    if n < 2:
        raise SizeError(f"need at least 2 nodes, got {n}")
    iu, ju = np.triu_indices(n, k=1)
    w = c[iu, ju]
    order = np.argsort(-w, kind="stable")
    ds = _DisjointSet(n)
    in_tree = np.zeros(w.size, dtype=bool)
    added = 0
    for e in order:
        if ds.union(int(iu[e]), int(ju[e])):
            in_tree[e] = True
            added += 1
            if added == n - 1:
                break
    births = np.sort(w[in_tree])[::-1]
    deaths = np.sort(w[~in_tree])[::-1]
    return PersistenceSummary(births, deaths)


def wasserstein_distance(p: PersistenceSummary, q: PersistenceSummary, homology: int = 0, order: float = 2.0) -> float:
    """Sorted-order p-Wasserstein distance between births (0) or deaths (1)."""
    if homology == 0:
        x, y = p.births, q.births
    elif homology == 1:
        x, y = p.deaths, q.deaths
    else:
        raise SpecError(f"homology must be 0 or 1, got {homology}", module="graph_distance")
    if order < 1:
        raise SpecError(f"Wasserstein order must be >= 1, got {order}", module="graph_distance")
    if x.size != y.size:
        raise IncompatibleSummaryError(f"multiset sizes differ: {x.size} vs {y.size}")
    d = np.abs(np.sort(x) - np.sort(y))
    if d.size == 0:
        return 0.0
    return float(np.sum(d**order) ** (1.0 / order))


_MATRIX_FNS = {
    "chebyshev": chebyshev_distance,
    "manhattan": manhattan_distance,
    "frobenius": frobenius_distance,
    "spectral": spectral_distance,
    "nuclear": nuclear_distance,
}


def metric_distance(name: str, a, b, order: float = 2.0) -> float:
    """Evaluate one named metric on a pair of matrices."""
    if name in _MATRIX_FNS:
        return _MATRIX_FNS[name](a, b)
    if name in ("wass0", "wass1"):
        return wasserstein_distance(persistence_summary(a), persistence_summary(b), int(name[-1]), order)
    raise SpecError(f"unknown metric {name!r}; choose from {', '.join(METRICS)}", module="graph_distance")


@dataclass
class DistanceSeries:
    values: np.ndarray  # (d, T)
    metric_names: list[str]

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def to_json(self) -> dict:
        return {"metrics": list(self.metric_names), "T": self.T, "X": self.values.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "DistanceSeries":
        x = np.array(doc["X"], dtype=np.float64).reshape(len(doc["metrics"]), int(doc["T"]))
        return cls(x, list(doc["metrics"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "DistanceSeries":
        return cls.from_json(json.loads(Path(path).read_text()))

    def truncate(self, T: int) -> "DistanceSeries":
        return DistanceSeries(self.values[:, :T].copy(), list(self.metric_names))


def distance_series(seq: ConnectomeSequence, metrics: Sequence[str] = METRICS, order: float = 2.0) -> DistanceSeries:
    metrics = list(metrics)
    if not metrics:
        raise SpecError("metric list is empty", module="graph_distance")
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise SpecError(f"unknown metrics {unknown}; choose from {', '.join(METRICS)}", module="graph_distance")
    windows = seq.windows if isinstance(seq, ConnectomeSequence) else list(seq)
    if len(windows) < 2:
        raise SpecError(f"need at least 2 windows, got {len(windows)}", module="graph_distance")
    summaries = None
    if any(m.startswith("wass") for m in metrics):
        summaries = [persistence_summary(c) for c in windows]
    x = np.empty((len(metrics), len(windows) - 1))
    for t in range(len(windows) - 1):
        a, b = windows[t], windows[t + 1]
        for f, name in enumerate(metrics):
            if name in _MATRIX_FNS:
                x[f, t] = _MATRIX_FNS[name](a, b)
            else:
                x[f, t] = wasserstein_distance(summaries[t], summaries[t + 1], int(name[-1]), order)
    return DistanceSeries(x, metrics)
