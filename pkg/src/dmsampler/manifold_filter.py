"""Nearest-neighbour selection of generated latent samples near the training set."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError

__all__ = ["SpatialIndex", "build_index", "select_neighbors", "select_neighbor_indices"]

LEAF_SIZE = 16


class SpatialIndex:
    """Exact Euclidean k-d tree over the rows of ``points``.

    Neighbours at equal distance are ordered by ascending point index.
    """

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ParameterError("cannot index an empty point set")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("points contain non-finite entries")
        self.points = pts
        self.leaf_size = int(leaf_size)
        self._tree = cKDTree(pts, leafsize=self.leaf_size, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return self.points.shape[0]

    def query(self, queries, n: int = 1):
        """``(distances, indices)`` of the ``n`` nearest points, each of shape (Q, n)."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        n = int(n)
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        if n > len(self):
            raise ParameterError(f"asked for {n} neighbours but only {len(self)} points are indexed")
        # One extra neighbour exposes ties that straddle the cut.
        extra = min(n + 1, len(self))
        d, i = self._tree.query(q, k=extra)
        d = d.reshape(q.shape[0], extra)
        i = i.reshape(q.shape[0], extra)
        out_d, out_i = d[:, :n].copy(), i[:, :n].copy()
        for r in range(q.shape[0]):
            row_d, row_i = d[r], i[r]
            tied = extra > n and row_d[n] == row_d[n - 1]
            if tied:
                row_d, row_i = self._brute(q[r], n)
            else:
                order = np.lexsort((row_i[:n], row_d[:n]))
                row_d, row_i = row_d[:n][order], row_i[:n][order]
            out_d[r], out_i[r] = row_d, row_i
        return out_d, out_i

    def _brute(self, x, n):
        dist = np.sqrt(((self.points - x) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(dist.size), dist))[:n]
        return dist[order], order


def build_index(points, leaf_size: int = LEAF_SIZE) -> SpatialIndex:
    return SpatialIndex(points, leaf_size)


def select_neighbor_indices(index: SpatialIndex, train_latent, n: int) -> np.ndarray:
    """Indices (into the indexed set) of the ``n`` nearest points to each training point, row-major."""
    train = np.atleast_2d(np.asarray(train_latent, dtype=float))
    if int(n) < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if len(index) < int(n):
        raise ParameterError(f"only {len(index)} generated points for n = {n} neighbours")
    _, idx = index.query(train, int(n))
    return idx.reshape(-1)


def select_neighbors(index: SpatialIndex, train_latent, n: int, dedup: bool = False) -> np.ndarray:
    """For each training point, the ``n`` nearest generated points.

    Returns ``n * N`` rows (a multiset) unless ``dedup`` removes repeats, in
    which case rows keep their first-occurrence order.
    """
    idx = select_neighbor_indices(index, train_latent, n)
    if dedup:
        _, first = np.unique(idx, return_index=True)
        idx = idx[np.sort(first)]
    return index.points[idx]

