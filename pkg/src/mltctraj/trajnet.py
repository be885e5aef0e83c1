"""Trajectory condition network and the shortest-path similarity metric.

Conditions that sit next to each other in many retained trajectories are
joined by frequent edges.  An edge seen ``f`` times gets weight
``1 / sqrt(f)``, so frequent neighbours are close.  Two conditions are as
similar as the inverse of their weighted shortest-path distance, and two
trajectories as similar as the mean similarity over all their condition
pairs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .trajectory import Trajectory

UNREACHABLE = math.inf


@dataclass
class TrajectoryNetwork:
    nodes: tuple[int, ...]
    frequencies: Mapping[tuple[int, int], int]
    _adjacency: dict[int, list[tuple[int, float]]] = field(init=False, repr=False)
    _dist_cache: dict[int, dict[int, float]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.nodes = tuple(sorted(self.nodes))
        node_set = set(self.nodes)
        adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        freqs = {}
        for (a, b), f in self.frequencies.items():
            if a == b:
                raise ValueError(f"self-edge on condition {a}")
            if a not in node_set or b not in node_set:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")
            key = (min(a, b), max(a, b))
            if key in freqs:
                raise ValueError(f"duplicate edge {key}")
            freqs[key] = f
            w = edge_weight(f)
            adj[a].append((b, w))
            adj[b].append((a, w))
        self.frequencies = dict(sorted(freqs.items()))
        self._adjacency = {n: sorted(v) for n, v in adj.items()}
        self._dist_cache = {}

    @property
    def weights(self) -> dict[tuple[int, int], float]:
        return {e: edge_weight(f) for e, f in self.frequencies.items()}

    def neighbours(self, node: int) -> list[tuple[int, float]]:
        return self._adjacency[node]

    def _check(self, node: int) -> None:
        if node not in self._adjacency:
            raise KeyError(f"condition {node} is not in the network")

    def distances_from(self, source: int) -> dict[int, float]:
        """Single-source Dijkstra; unreachable nodes are absent from the result."""
        self._check(source)
        cached = self._dist_cache.get(source)
        if cached is not None:
            return cached
        dist = {source: 0.0}
        done = set()
        heap = [(0.0, source)]
        while heap:
            d, node = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            for nxt, w in self._adjacency[node]:
                nd = d + w
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
        self._dist_cache[source] = dist
        return dist


def edge_weight(f: int) -> float:
    """Weight of an edge observed ``f`` times: ``1 / sqrt(f)``."""
    if f < 1:
        raise ValueError(f"edge frequency must be >= 1, got {f}")
    return 1.0 / math.sqrt(f)


def _conditions(t: Trajectory | Sequence[int]) -> tuple[int, ...]:
    return t.conditions if isinstance(t, Trajectory) else tuple(t)


def build_network(trajectories: Iterable[Trajectory | Sequence[int]],
                  edge_weighting: str = "trajectory") -> TrajectoryNetwork:
    """Undirected network over the conditions of the given trajectories.

    ``f(a, b)`` counts the trajectories in which ``a`` and ``b`` are adjacent.
    With ``edge_weighting="patient"`` each trajectory instead contributes its
    support.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("cannot build a network from zero trajectories")
    if edge_weighting not in ("trajectory", "patient"):
        raise ValueError(f"unknown edge_weighting {edge_weighting!r}")
    nodes: set[int] = set()
    freq: dict[tuple[int, int], int] = {}
    for t in trajectories:
        conds = _conditions(t)
        nodes.update(conds)
        if edge_weighting == "patient":
            if not isinstance(t, Trajectory):
                raise TypeError("patient edge weighting needs Trajectory objects")
            amount = t.support
        else:
            amount = 1
        # each adjacency counts once per trajectory
        for a, b in {(min(a, b), max(a, b)) for a, b in zip(conds, conds[1:])}:
            freq[(a, b)] = freq.get((a, b), 0) + amount
    freq = {e: f for e, f in freq.items() if f > 0}
    return TrajectoryNetwork(tuple(nodes), freq)


def shortest_path_length(network: TrajectoryNetwork, a: int, b: int) -> float:
    """Minimum total edge weight from ``a`` to ``b``; ``math.inf`` if disconnected."""
    network._check(b)
    return network.distances_from(a).get(b, UNREACHABLE)


def condition_similarity(network: TrajectoryNetwork, a: int, b: int,
                         clamp: bool = True) -> float:
    """Inverse shortest-path distance, clamped to 1; 0 when unreachable."""
    if a == b:
        network._check(a)
        return 1.0
    d = shortest_path_length(network, a, b)
    if d == UNREACHABLE:
        return 0.0
    sim = 1.0 / d
    return min(1.0, sim) if clamp else sim


def trajectory_similarity(network: TrajectoryNetwork, t1, t2, clamp: bool = True) -> float:
    """Mean condition similarity over all ``|t1| * |t2|`` condition pairs."""
    c1, c2 = _conditions(t1), _conditions(t2)
    total = math.fsum(condition_similarity(network, a, b, clamp) for a in c1 for b in c2)
    return total / (len(c1) * len(c2))


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray

    @property
    def order(self) -> int:
        return self.values.shape[0]


def condition_similarity_table(network: TrajectoryNetwork, clamp: bool = True,
                               ) -> np.ndarray:
    """Similarity between every pair of network nodes, indexed like ``network.nodes``."""
    nodes = network.nodes
    out = np.zeros((len(nodes), len(nodes)))
    for i, a in enumerate(nodes):
        for j, b in enumerate(nodes):
            out[i, j] = condition_similarity(network, a, b, clamp)
    return out


def similarity_matrix(network: TrajectoryNetwork,
                      trajectories: Sequence[Trajectory | Sequence[int]],
                      clamp: bool = True) -> SimilarityMatrix:
    """Pairwise trajectory similarities; diagonal fixed at 1."""
    if len(trajectories) == 0:
        raise ValueError("no trajectories")
    index = {c: i for i, c in enumerate(network.nodes)}
    table = condition_similarity_table(network, clamp)
    rows = [[index[c] for c in _conditions(t)] for t in trajectories]
    n = len(rows)
    values = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            block = table[np.ix_(rows[i], rows[j])]
            v = math.fsum(block.ravel().tolist()) / block.size
            values[i, j] = values[j, i] = v
    return SimilarityMatrix(values)
