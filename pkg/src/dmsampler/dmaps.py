"""Diffusion Maps embedding, non-harmonic coordinate selection and restriction.

The kernel is ``exp(-|xi - xj|^2 / (2 eps))``. Density bias is removed with
exponent ``alpha`` and the result is row-normalized into a Markov matrix whose
leading eigenvectors serve as latent coordinates. Eigenvectors are scaled to
unit root-mean-square, so the trivial one is identically 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from .errors import (
    DegenerateDataError,
    DegenerateKernelError,
    EigensolverError,
    OutOfSupportError,
    ParameterError,
)

__all__ = [
    "AmbientDataset",
    "DMapsConfig",
    "DMapsModel",
    "ResidualReport",
    "build_kernel",
    "normalize_markov",
    "eigendecompose_markov",
    "fit_dmaps",
    "local_linear_residual",
    "nonharmonic_residuals",
    "select_coordinates",
    "restrict",
    "restrict_batch",
    "tune_epsilon",
]

DEFAULT_THRESHOLD = 0.2
DEFAULT_BANDWIDTH_FACTOR = 1.0 / 3.0
RIDGE = 1e-10
MIN_DENSITY = 1e-300
MIN_EIGVAL = 1e-8


@dataclass(frozen=True)
class AmbientDataset:
    points: np.ndarray
    columns: Optional[tuple] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise ParameterError(f"dataset needs N >= 2 rows and d >= 1 columns, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("dataset contains non-finite entries")
        if self.columns is not None and len(self.columns) != pts.shape[1]:
            raise ParameterError("column names do not match the number of columns")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class DMapsConfig:
    epsilon: float
    alpha: float = 1.0
    n_eig: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if int(self.n_eig) < 1:
            raise ParameterError(f"n_eig must be positive, got {self.n_eig}")


@dataclass(frozen=True)
class DMapsModel:
    config: DMapsConfig
    train_points: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    point_density: np.ndarray
    selected: tuple = field(default=())

    @property
    def latent(self) -> np.ndarray:
        """Training-set coordinates restricted to the selected eigenvectors."""
        return self.eigvecs[:, list(self.selected)]

    def to_dict(self) -> dict:
        return {
            "config": {"epsilon": self.config.epsilon, "alpha": self.config.alpha, "n_eig": self.config.n_eig},
            "train_points": self.train_points.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "point_density": self.point_density.tolist(),
            "selected": [int(i) for i in self.selected],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DMapsModel":
        return cls(
            config=DMapsConfig(**d["config"]),
            train_points=np.asarray(d["train_points"], dtype=float),
            eigvals=np.asarray(d["eigvals"], dtype=float),
            eigvecs=np.asarray(d["eigvecs"], dtype=float),
            point_density=np.asarray(d["point_density"], dtype=float),
            selected=tuple(int(i) for i in d["selected"]),
        )


@dataclass(frozen=True)
class ResidualReport:
    indices: np.ndarray  # eigenvector index k for each residual, starting at 1
    residuals: np.ndarray
    threshold: float
    selected: tuple

    def residual(self, k: int) -> float:
        return float(self.residuals[int(k) - 1])


def build_kernel(points, epsilon: float, other=None) -> np.ndarray:
    """Gaussian kernel matrix between ``points`` (and ``other``, if given)."""
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ParameterError("points contain non-finite entries")
    if other is None:
        sq = cdist(x, x, "sqeuclidean")
        K = np.exp(-sq / (2.0 * epsilon))
        np.fill_diagonal(K, 1.0)
        return K
    y = np.atleast_2d(np.asarray(other, dtype=float))
    return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * epsilon))


def normalize_markov(K, alpha: float):
    """Density-normalize ``K`` and turn it into a row-stochastic matrix.

    Returns
    -------
    M : (N, N) ndarray
        Markov matrix ``D^-1 P^-alpha K P^-alpha``.
    p : (N,) ndarray
        Kernel row sums (point densities).
    D : (N,) ndarray
        Row sums of the density-normalized kernel.
    """
    K = np.asarray(K, dtype=float)
    p = K.sum(axis=1)
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise DegenerateKernelError(bad[0])
    q = p ** (-alpha)
    Kt = K * q[:, None] * q[None, :]
    D = Kt.sum(axis=1)
    bad = np.flatnonzero(~(D > 0))
    if bad.size:
        raise DegenerateKernelError(bad[0])
    M = Kt / D[:, None]
    return M, p, D


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigendecompose_markov(M, D, n_eig: int):
    """Leading eigenpairs of a reversible Markov matrix.

    ``M`` is conjugated to the symmetric ``D^1/2 M D^-1/2``, solved with a
    dense symmetric eigensolver and mapped back with ``phi = D^-1/2 v``.
    Eigenvectors are scaled to unit RMS and sign-fixed so that their
    largest-magnitude entry is positive.
    """
    M = np.asarray(M, dtype=float)
    D = np.asarray(D, dtype=float)
    n = M.shape[0]
    n_eig = min(int(n_eig), n)
    sd = np.sqrt(D)
    Ms = sd[:, None] * M / sd[None, :]
    Ms = 0.5 * (Ms + Ms.T)
    try:
        w, v = scipy.linalg.eigh(Ms, subset_by_index=[n - n_eig, n - 1])
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed to converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    w = w[order]
    phi = v[:, order] / sd[:, None]
    phi *= np.sqrt(n) / np.linalg.norm(phi, axis=0)
    return w, _fix_signs(phi)


def fit_dmaps(
    data,
    config: DMapsConfig,
    threshold: float = DEFAULT_THRESHOLD,
    bandwidth_factor: float = DEFAULT_BANDWIDTH_FACTOR,
) -> DMapsModel:
    """Fit Diffusion Maps and pick the non-harmonic coordinates.

    With fewer than three nontrivial eigenpairs every nontrivial eigenvector
    is selected.
    """
    if not isinstance(data, AmbientDataset):
        data = AmbientDataset(data)
    if not np.any(np.ptp(data.points, axis=0) > 0):
        raise DegenerateDataError("all points are identical; there is no geometry to embed")
    K = build_kernel(data.points, config.epsilon)
    M, p, D = normalize_markov(K, config.alpha)
    del K
    eigvals, eigvecs = eigendecompose_markov(M, D, config.n_eig)
    model = DMapsModel(
        config=config,
        train_points=data.points.copy(),
        eigvals=eigvals,
        eigvecs=eigvecs,
        point_density=p,
        selected=tuple(range(1, len(eigvals))),
    )
    if len(eigvals) - 1 >= 3:
        report = nonharmonic_residuals(model, bandwidth_factor, threshold)
        model = select_coordinates(model, report.selected)
    return model


def local_linear_residual(predictors, target, bandwidth_factor: float = DEFAULT_BANDWIDTH_FACTOR) -> float:
    """Normalized leave-one-out error of a local linear fit of ``target``.

    Weights are ``exp(-d^2 / h^2)`` with ``h`` equal to ``bandwidth_factor``
    times the median pairwise distance among the predictors. A ridge of 1e-10
    is always added to each weighted normal-equation system, so singular
    neighbourhoods never raise.
    """
    X = np.asarray(predictors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float)
    n, p = X.shape
    dists = pdist(X)
    h = bandwidth_factor * np.median(dists) if dists.size else 0.0
    if not h > 0:
        h = 1.0
    W = np.exp(-cdist(X, X, "sqeuclidean") / h**2)
    np.fill_diagonal(W, 0.0)
    rs = W.sum(axis=1, keepdims=True)
    rs[rs == 0] = 1.0
    W /= rs

    # Weighted normal equations for every point at once: A_i = sum_j w_ij z_j z_j^T.
    Z = np.hstack([np.ones((n, 1)), X])
    q = p + 1
    outer = (Z[:, :, None] * Z[:, None, :]).reshape(n, q * q)
    A = (W @ outer).reshape(n, q, q)
    b = W @ (Z * y[:, None])
    A += RIDGE * np.eye(q)
    coef = np.linalg.solve(A, b[:, :, None])[:, :, 0]
    fit = np.einsum("ij,ij->i", Z, coef)
    denom = np.sum(y**2)
    if denom == 0:
        return 0.0
    return float(np.sqrt(np.sum((y - fit) ** 2) / denom))


def nonharmonic_residuals(
    model: DMapsModel,
    regression_bandwidth_factor: float = DEFAULT_BANDWIDTH_FACTOR,
    threshold: float = DEFAULT_THRESHOLD,
) -> ResidualReport:
    """Local-linear-regression residual ``r_k`` of each eigenvector on its predecessors.

    ``r_1`` is 1 by convention. Coordinates with ``r_k >= threshold`` are
    non-harmonic and are selected.
    """
    phi = model.eigvecs
    n_eig = phi.shape[1]
    if n_eig - 1 < 3:
        raise ParameterError("residuals need at least 3 nontrivial eigenpairs")
    res = np.ones(n_eig - 1)
    for k in range(2, n_eig):
        res[k - 1] = local_linear_residual(phi[:, 1:k], phi[:, k], regression_bandwidth_factor)
    indices = np.arange(1, n_eig)
    selected = tuple(int(k) for k, r in zip(indices, res) if r >= threshold)
    return ResidualReport(indices=indices, residuals=res, threshold=threshold, selected=selected)


def select_coordinates(model: DMapsModel, selected: Sequence[int]) -> DMapsModel:
    selected = tuple(int(i) for i in selected)
    if not selected or min(selected) < 0 or max(selected) >= model.eigvecs.shape[1]:
        raise ParameterError(f"invalid coordinate selection {selected}")
    return replace(model, selected=selected)


def _usable(model: DMapsModel, coords):
    coords = list(model.selected if coords is None else coords)
    keep = [b for b in coords if abs(model.eigvals[b]) >= MIN_EIGVAL]
    dropped = [b for b in coords if b not in keep]
    if dropped:
        warnings.warn(f"eigenvalues of coordinates {dropped} are below {MIN_EIGVAL}; excluded from restriction")
    return keep


def restrict_batch(model: DMapsModel, x_new, coords=None) -> np.ndarray:
    """Nyström restriction of new ambient points (rows of ``x_new``)."""
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    keep = _usable(model, coords)
    if x_new.shape[0] == 0:
        return np.empty((0, len(keep)))
    cfg = model.config
    K = build_kernel(x_new, cfg.epsilon, model.train_points)
    p_new = K.sum(axis=1)
    bad = np.flatnonzero(p_new < MIN_DENSITY)
    if bad.size:
        raise OutOfSupportError(f"point {bad[0]} lies outside the data support (density {p_new[bad[0]]:.3g})")
    Kt = K / (p_new[:, None] ** cfg.alpha * model.point_density[None, :] ** cfg.alpha)
    A = Kt / Kt.sum(axis=1, keepdims=True)
    return (A @ model.eigvecs[:, keep]) / model.eigvals[keep]


def restrict(model: DMapsModel, x_new, coords=None) -> np.ndarray:
    """Latent coordinates of a single ambient point."""
    return restrict_batch(model, np.asarray(x_new, dtype=float)[None, :], coords)[0]


def tune_epsilon(points) -> float:
    """Half the median pairwise squared distance."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] < 2:
        raise ParameterError("need at least two points to tune epsilon")
    med = float(np.median(pdist(x, "sqeuclidean")))
    if med <= 0:
        raise DegenerateDataError("all points are identical (median pairwise distance is zero)")
    return med / 2.0
