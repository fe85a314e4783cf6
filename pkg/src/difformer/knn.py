"""Exact brute-force k-nearest-neighbor graphs with deterministic tie-breaking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_features, check_k


@dataclass(frozen=True)
class NeighborGraph:
    """Row i lists the k nearest nodes to i (self excluded), nearest first.

    Ties in distance resolve to the smaller node index, so graphs rebuilt from
    identical inputs are identical. Edge gather/scatter plans are cached since
    one graph typically serves many layer applications.
    """

    n_nodes: int
    k: int
    neighbors: np.ndarray  # (n_nodes, k) int indices
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def flat(self) -> np.ndarray:
        if "flat" not in self._cache:
            self._cache["flat"] = self.neighbors.reshape(-1)
        return self._cache["flat"]

    def centers(self) -> np.ndarray:
        if "centers" not in self._cache:
            self._cache["centers"] = np.repeat(np.arange(self.n_nodes), self.k)
        return self._cache["centers"]

    def flat_plan(self):
        from .tensor import make_scatter_plan
        if "flat_plan" not in self._cache:
            self._cache["flat_plan"] = make_scatter_plan(self.flat())
        return self._cache["flat_plan"]

    def center_plan(self):
        from .tensor import make_grouped_plan
        if "center_plan" not in self._cache:
            self._cache["center_plan"] = make_grouped_plan(self.n_nodes, self.k)
        return self._cache["center_plan"]


def knn(features, k: int) -> NeighborGraph:
    """Exact O(N^2) Euclidean k-NN over row features."""
    feats = as_features(features)
    n = feats.shape[0]
    k = check_k(k, n)
    sq = (feats * feats).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps equal distances in index order
    order = np.argsort(d2, axis=1, kind="stable")
    return NeighborGraph(n, k, np.ascontiguousarray(order[:, :k]))


def is_connected(points, k: int) -> bool:
    """Whether the symmetrized k-NN graph has a single component (BFS)."""
    graph = knn(points, k)
    adj = [set() for _ in range(graph.n_nodes)]
    for i, row in enumerate(graph.neighbors):
        for j in row:
            adj[i].add(int(j))
            adj[j].add(i)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    nxt.append(j)
        frontier = nxt
    return len(seen) == graph.n_nodes
