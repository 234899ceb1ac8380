"""Sample-comparison metrics: marginal KS statistics, moment deltas, distance to the manifold."""

from __future__ import annotations

import numpy as np

from .datasets import DEFAULT_T_RANGE, distance_to_s_manifold
from .errors import ParameterError

__all__ = ["ks_statistic", "marginal_metrics", "distance_metrics", "histogram_table"]


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov–Smirnov statistic ``sup |F_a - F_b|`` via a sorted merge."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ParameterError("KS statistic needs two nonempty samples")
    grid = np.concatenate([a, b])
    # Empirical CDFs evaluated right after every jump.
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def marginal_metrics(a, b) -> dict:
    """Per-coordinate KS statistics and absolute mean/variance deltas between row samples."""
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ParameterError("both samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"width mismatch: {a.shape[1]} vs {b.shape[1]}")
    ks = [ks_statistic(a[:, j], b[:, j]) for j in range(a.shape[1])]
    var_a = a.var(axis=0, ddof=1) if a.shape[0] > 1 else np.zeros(a.shape[1])
    var_b = b.var(axis=0, ddof=1) if b.shape[0] > 1 else np.zeros(b.shape[1])
    return {
        "ks": ks,
        "ks_max": max(ks),
        "mean_delta": np.abs(a.mean(axis=0) - b.mean(axis=0)).tolist(),
        "var_delta": np.abs(var_a - var_b).tolist(),
        "n_a": int(a.shape[0]),
        "n_b": int(b.shape[0]),
    }


def distance_metrics(points, t_range=DEFAULT_T_RANGE) -> dict:
    """Mean and max distance of ambient S-curve samples to the true surface."""
    pts = _as_2d(points)
    if pts.shape[0] == 0:
        return {"mean_distance": 0.0, "max_distance": 0.0, "count": 0}
    d = distance_to_s_manifold(pts, t_range)
    return {"mean_distance": float(d.mean()), "max_distance": float(d.max()), "count": int(pts.shape[0])}


def histogram_table(samples, bins: int = 50, range_=None):
    """Density histograms per coordinate as rows ``(coord, left, right, density)``."""
    s = _as_2d(samples)
    rows = []
    for j in range(s.shape[1]):
        r = range_[j] if range_ is not None else None
        dens, edges = np.histogram(s[:, j], bins=bins, range=r, density=True)
        for k in range(bins):
            rows.append((j, edges[k], edges[k + 1], dens[k]))
    return np.asarray(rows, dtype=float)
