"""S-curve benchmark data, its distance oracle, and CSV input/output."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ParameterError

DEFAULT_T_RANGE = (-3.0, 3.0)
DISTANCE_GRID = 20000


def s_curve_backbone(t):
    """(x, z) coordinates of the S backbone at parameter ``t``."""
    t = np.asarray(t, dtype=float)
    ang = 0.5 * np.pi * t
    return np.sin(ang), np.sign(t) * (1.0 - np.cos(ang))


def gen_s_curve(n: int, t_range=DEFAULT_T_RANGE, seed=0):
    """Sample ``n`` points on the S-shaped ribbon.

    ``t`` is uniform on ``t_range`` and the width ``h`` uniform on [-1, 1].
    Returns the (n, 3) points and the generating ``t`` values.
    """
    lo, hi = map(float, t_range)
    if not hi > lo:
        raise ParameterError(f"empty t range {t_range}")
    if int(n) < 1:
        raise ParameterError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(lo, hi, size=int(n))
    h = rng.uniform(-1.0, 1.0, size=int(n))
    x, z = s_curve_backbone(t)
    return np.column_stack([x, h, z]), t


def distance_to_s_manifold(x, t_range=DEFAULT_T_RANGE, grid: int = DISTANCE_GRID):
    """Distance from 3-D point(s) ``x`` to the S-curve ribbon.

    The (x, z) distance to the backbone is minimized over ``grid`` evenly
    spaced ``t`` values and combined in quadrature with ``max(0, |y| - 1)``.
    Accepts a single point or an (M, 3) array.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ts = np.linspace(float(t_range[0]), float(t_range[1]), int(grid))
    bx, bz = s_curve_backbone(ts)
    out = np.empty(pts.shape[0])
    chunk = max(1, 2_000_000 // ts.size)
    for s in range(0, pts.shape[0], chunk):
        p = pts[s : s + chunk]
        d2 = (p[:, 0:1] - bx[None, :]) ** 2 + (p[:, 2:3] - bz[None, :]) ** 2
        plane = np.min(d2, axis=1)
        excess = np.maximum(0.0, np.abs(p[:, 1]) - 1.0)
        out[s : s + chunk] = np.sqrt(plane + excess**2)
    return float(out[0]) if single else out


def read_csv(path):
    """Read a numeric CSV with a header row. Returns (matrix, column names)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParameterError(f"{path} is empty") from None
        rows = [row for row in reader if row]
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise ParameterError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        data = np.empty((0, len(header)))
    if data.shape[1] != len(header):
        raise ParameterError(f"{path}: rows do not match the header width")
    return data, [h.strip() for h in header]


def write_csv(path, data, header):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
