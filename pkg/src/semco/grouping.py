"""Density-based grouping of label embeddings under cosine distance."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 0.2
MINI_IMAGENET_EPS = 0.3


@dataclass(frozen=True)
class LabelGrouping:
    assignments: tuple[int, ...]
    eps: float

    @property
    def K(self) -> int:
        return len(self.assignments)

    @property
    def Q(self) -> int:
        return max(self.assignments) + 1 if self.assignments else 0

    @property
    def matrix_G(self) -> np.ndarray:
        G = np.zeros((self.K, self.Q))
        G[np.arange(self.K), self.assignments] = 1.0
        return G

    def members(self, q: int) -> list[int]:
        return [k for k, a in enumerate(self.assignments) if a == q]

    def groups(self) -> list[list[int]]:
        return [self.members(q) for q in range(self.Q)]

    @classmethod
    def singletons(cls, K: int) -> "LabelGrouping":
        return cls(tuple(range(K)), 0.0)


def cosine_distances(vectors) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms == 0, 1.0, norms)
    return 1.0 - np.clip(unit @ unit.T, -1.0, 1.0)


def dbscan(dist: np.ndarray, eps: float, min_pts: int = 2) -> np.ndarray:
    """DBSCAN over a precomputed distance matrix; returns labels with -1 for noise.

    Neighbourhoods are closed balls (``dist <= eps``) that include the point
    itself.  Clusters are numbered in order of their lowest-index core point
    and a border point reachable from several clusters joins the one seeded
    by the lowest-index core point.
    """
    n = dist.shape[0]
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbours], dtype=bool)
    labels = np.full(n, -1)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbours[p]:
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def group_labels(M, eps: float = DEFAULT_EPS, min_pts: int = 2) -> LabelGrouping:
    """Cluster label rows; every noise point becomes its own singleton group.

    ``eps == 0`` switches grouping off (all singletons), even for rows that
    point in identical directions.
    """
    M = np.asarray(getattr(M, "vectors", M), dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1:
        raise ValueError("label matrix must be a non-empty K x d array")
    if not 0 <= eps <= 2:
        raise ValueError("eps must lie in [0, 2]")
    K = M.shape[0]
    if eps == 0:
        return LabelGrouping(tuple(range(K)), 0.0)
    raw = dbscan(cosine_distances(M), eps, min_pts)
    # relabel so group ids follow the smallest member index
    remap: dict[tuple[str, int], int] = {}
    assignments = []
    for k in range(K):
        key = ("noise", k) if raw[k] == -1 else ("cluster", int(raw[k]))
        if key not in remap:
            remap[key] = len(remap)
        assignments.append(remap[key])
    return LabelGrouping(tuple(assignments), float(eps))


def group_scores(p, grouping: LabelGrouping) -> np.ndarray:
    """Sum class scores within each group (``G^T p``); works on batches too."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != grouping.K:
        raise ValueError(f"score vector has {p.shape[-1]} entries, grouping has {grouping.K}")
    return p @ grouping.matrix_G


def groups_as_json(grouping: LabelGrouping, labels) -> dict:
    """Multi-member groups first, members sorted, then singletons."""
    named = [sorted(labels[k] for k in members) for members in grouping.groups()]
    named.sort(key=lambda g: (len(g) == 1, g))
    return {"eps": grouping.eps, "groups": named}
