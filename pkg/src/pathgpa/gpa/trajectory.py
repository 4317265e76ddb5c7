"""KNN graph, minimum spanning tree and the tree path between two graphs."""
from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class WeightedGraph:
    """Undirected graph on ``n`` nodes with edges as (i, j, weight), i < j."""

    n: int
    edges: list[tuple[int, int, float]]
    points: np.ndarray | None = None

    def adjacency(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {i: {} for i in range(self.n)}
        for i, j, w in self.edges:
            adj[i][j] = w
            adj[j][i] = w
        return adj

    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.edges))


def knn_graph(z, k: int = 10) -> WeightedGraph:
    """Union-symmetrized k-nearest-neighbor graph weighted by Euclidean distance."""
    pts = np.asarray(z, dtype=float)
    n = pts.shape[0]
    if n < 2:
        return WeightedGraph(n, [], pts)
    if k >= n:
        warnings.warn(f"K={k} clamped to {n - 1} for {n} points", stacklevel=2)
        k = n - 1
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    edges = {}
    for i in range(n):
        d = dist[i].copy()
        d[i] = np.inf
        for j in np.lexsort((np.arange(n), d))[:k]:
            a, b = (i, int(j)) if i < j else (int(j), i)
            edges[(a, b)] = float(dist[a, b])
    return WeightedGraph(n, [(a, b, w) for (a, b), w in sorted(edges.items())], pts)


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def minimum_spanning_tree(graph: WeightedGraph) -> WeightedGraph:
    """Kruskal's algorithm; ties resolved by (weight, i, j).

    A disconnected graph gets one tree per component, and components are then
    joined through the shortest pair between them, which needs point
    coordinates on the graph.
    """
    if graph.n == 0:
        raise ValueError("minimum spanning tree of an empty graph")
    ds = _DisjointSet(graph.n)
    tree = []
    for i, j, w in sorted(graph.edges, key=lambda e: (e[2], e[0], e[1])):
        if ds.union(i, j):
            tree.append((i, j, w))
    n_comp = len({ds.find(i) for i in range(graph.n)})
    if n_comp > 1:
        if graph.points is None:
            raise ValueError(f"graph has {n_comp} components and no coordinates to join them")
        warnings.warn(f"neighbor graph has {n_comp} components; joining by shortest inter-component pairs",
                      stacklevel=2)
        pts = graph.points
        dist = np.sqrt(np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1))
        while n_comp > 1:
            roots = np.array([ds.find(i) for i in range(graph.n)])
            cross = roots[:, None] != roots[None, :]
            d = np.where(cross, dist, np.inf)
            flat = int(np.argmin(d))
            i, j = divmod(flat, graph.n)
            i, j = min(i, j), max(i, j)
            ds.union(i, j)
            tree.append((i, j, float(dist[i, j])))
            n_comp -= 1
    tree.sort(key=lambda e: (e[0], e[1]))
    return WeightedGraph(graph.n, tree, graph.points)


def tree_path(tree: WeightedGraph, start: int, end: int) -> list[int]:
    adj = tree.adjacency()
    parent = {start: None}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == end:
            break
        for v in sorted(adj[u]):
            if v not in parent:
                parent[v] = u
                queue.append(v)
    if end not in parent:
        raise ValueError(f"nodes {start} and {end} are not connected in the tree")
    path = [end]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


@dataclass
class Trajectory:
    indices: list[int]
    start: int
    end: int
    step_lengths: list[float]
    stages: list[int] = field(default_factory=list)
    transition_pairs: list[tuple[int, int]] = field(default_factory=list)
    subject_ids: list[str] = field(default_factory=list)
    endpoints: str = "severity"

    def __len__(self):
        return len(self.indices)

    @property
    def length(self) -> float:
        return float(sum(self.step_lengths))

    def as_dict(self):
        return {
            "indices": list(self.indices),
            "subject_ids": list(self.subject_ids),
            "start": self.start,
            "end": self.end,
            "step_lengths": list(self.step_lengths),
            "stages": list(self.stages),
            "transition_pairs": [list(p) for p in self.transition_pairs],
            "endpoints": self.endpoints,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["indices"], d["start"], d["end"], d["step_lengths"], d.get("stages", []),
                   [tuple(p) for p in d.get("transition_pairs", [])], d.get("subject_ids", []),
                   d.get("endpoints", "severity"))


def default_endpoints(severity) -> tuple[int, int]:
    """Lowest- and highest-severity graphs; ties go to the lower index."""
    y = np.asarray(severity, dtype=float)
    return int(np.argmin(y)), int(np.argmax(y))


def shortest_path_trajectory(tree: WeightedGraph, start: int, end: int) -> Trajectory:
    for v in (start, end):
        if not 0 <= v < tree.n:
            raise ValueError(f"endpoint {v} outside 0..{tree.n - 1}")
    if start == end:
        warnings.warn("start equals end; trajectory has a single point", stacklevel=2)
        return Trajectory([start], start, end, [])
    path = tree_path(tree, start, end)
    adj = tree.adjacency()
    steps = [adj[a][b] for a, b in zip(path[:-1], path[1:])]
    return Trajectory(path, start, end, steps)


def transition_pairs(stages_along_path) -> list[tuple[int, int]]:
    s = list(stages_along_path)
    return [(t, t + 1) for t in range(len(s) - 1) if s[t] != s[t + 1]]
