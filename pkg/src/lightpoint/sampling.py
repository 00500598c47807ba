"""Farthest point sampling and exact k-nearest-neighbor grouping.

Both are exhaustive and deterministic. Every tie is broken by the
lexicographic order of the coordinates (x, then y, then z) before falling
back to the point index, so results depend on the point *set* rather than
on the order the points are stored in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadNeighborCount, BadSampleCount, IndexOutOfRange


@dataclass(frozen=True)
class Neighborhood:
    center_index: int
    neighbor_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.neighbor_indices, dtype=np.int64)
        if idx.size == 0 or idx[0] != self.center_index:
            raise ValueError("first neighbor must be the center itself")
        if np.unique(idx).size != idx.size:
            raise ValueError("neighbor indices must be distinct")
        object.__setattr__(self, "neighbor_indices", idx)

    def __len__(self):
        return self.neighbor_indices.size


def lexicographic_rank(points: np.ndarray) -> np.ndarray:
    """Rank of each point under (x, y, z, index) ordering."""
    n = points.shape[0]
    order = np.lexsort((np.arange(n), points[:, 2], points[:, 1], points[:, 0]))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return rank


def _pick(scores: np.ndarray, rank: np.ndarray) -> int:
    best = scores.max()
    cands = np.flatnonzero(scores == best)
    if cands.size == 1:
        return int(cands[0])
    return int(cands[np.argmin(rank[cands])])


def fps_start(points: np.ndarray, rank=None) -> int:
    """Index of the point farthest from the centroid."""
    points = np.asarray(points, dtype=np.float64)
    if rank is None:
        rank = lexicographic_rank(points)
    diff = points - points.mean(axis=0)
    return _pick((diff * diff).sum(axis=1), rank)


def farthest_point_sample(points, m: int, start=None) -> np.ndarray:
    """Greedy farthest-first selection of ``m`` indices.

    Starts at ``start`` if given, else at :func:`fps_start`; each further
    pick maximizes the squared distance to the nearest already-selected
    point.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise BadSampleCount(f"sample count {m} outside [1, {n}]")
    rank = lexicographic_rank(points)
    selected = np.empty(m, dtype=np.int64)
    if start is None:
        cur = fps_start(points, rank)
    elif 0 <= start < n:
        cur = int(start)
    else:
        raise IndexOutOfRange(f"start index {start} outside [0, {n})")
    min_d = np.full(n, np.inf)
    for i in range(m):
        selected[i] = cur
        diff = points - points[cur]
        np.minimum(min_d, (diff * diff).sum(axis=1), out=min_d)
        min_d[cur] = -1.0
        if i + 1 < m:
            cur = _pick(min_d, rank)
    return selected


def knn_indices(points, center_indices, k: int) -> np.ndarray:
    """M x k neighbor index matrix; column 0 is the center itself, the rest
    ordered by (distance, x, y, z, index)."""
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(center_indices, dtype=np.int64).ravel()
    n = points.shape[0]
    if not 1 <= k <= n:
        raise BadNeighborCount(f"neighbor count {k} outside [1, {n}]")
    if centers.size and (centers.min() < 0 or centers.max() >= n):
        raise IndexOutOfRange("center index out of range")
    diff = points[None, :, :] - points[centers][:, None, :]
    d2 = (diff * diff).sum(axis=2)
    # the center sorts first regardless of coincident duplicates
    d2[np.arange(centers.size), centers] = -1.0
    m = centers.size
    keys = (
        np.broadcast_to(np.arange(n), (m, n)),
        np.broadcast_to(points[:, 2], (m, n)),
        np.broadcast_to(points[:, 1], (m, n)),
        np.broadcast_to(points[:, 0], (m, n)),
        d2,
    )
    order = np.lexsort(keys, axis=-1)
    return order[:, :k].copy()


def knn_group(points, center_indices, k: int) -> list:
    idx = knn_indices(points, center_indices, k)
    return [Neighborhood(int(row[0]), row) for row in idx]


def gather_features(features, nbhd: Neighborhood) -> np.ndarray:
    features = np.asarray(features)
    idx = nbhd.neighbor_indices
    if idx.min() < 0 or idx.max() >= features.shape[0]:
        raise IndexOutOfRange(f"neighbor index outside [0, {features.shape[0]})")
    return features[idx]
