"""Latent Harmonics (Double Diffusion Maps): lift latent points to ambient space.

A plain Gaussian kernel on the latent coordinates is eigendecomposed; the
ambient coordinates are projected on its eigenvectors and extended to new
latent points with the Nyström formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .dmaps import build_kernel, tune_epsilon
from .errors import ConfigurationError, EigensolverError, ParameterError

__all__ = ["GHModel", "fit_latent_harmonics", "extend", "lift"]

DEFAULT_CUTOFF = 1e-8


@dataclass(frozen=True)
class GHModel:
    """Fitted Latent Harmonics extension.

    ``basis_eigvecs`` may be ``None`` for a model restored from its compact
    form, which keeps only the precomputed extension ``weights``.
    """

    epsilon2: float
    basis_eigvals: np.ndarray
    basis_eigvecs: Optional[np.ndarray]
    train_latent: np.ndarray
    proj_coeffs: np.ndarray
    cutoff_delta: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weights is None:
            if self.basis_eigvecs is None:
                raise ParameterError("either basis_eigvecs or weights is required")
            # Column c maps kernel rows to output coordinate c.
            w = self.basis_eigvecs @ (self.proj_coeffs / self.basis_eigvals[:, None])
            object.__setattr__(self, "weights", w)

    @property
    def n_basis(self) -> int:
        return self.basis_eigvals.size

    def to_dict(self, full: bool = False) -> dict:
        """JSON-ready form; ``full`` also stores the N x n_basis eigenvector matrix."""
        d = {
            "epsilon2": self.epsilon2,
            "basis_eigvals": self.basis_eigvals.tolist(),
            "train_latent": self.train_latent.tolist(),
            "proj_coeffs": self.proj_coeffs.tolist(),
            "cutoff_delta": self.cutoff_delta,
            "weights": self.weights.tolist(),
        }
        if full and self.basis_eigvecs is not None:
            d["basis_eigvecs"] = self.basis_eigvecs.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GHModel":
        n = len(d["train_latent"])
        eigvals = np.asarray(d["basis_eigvals"], dtype=float)
        vecs = d.get("basis_eigvecs")
        vecs = None if vecs is None else np.asarray(vecs, dtype=float).reshape(n, -1)
        w = d.get("weights")
        return cls(
            epsilon2=float(d["epsilon2"]),
            basis_eigvals=eigvals,
            basis_eigvecs=vecs,
            train_latent=np.asarray(d["train_latent"], dtype=float).reshape(n, -1),
            proj_coeffs=np.asarray(d["proj_coeffs"], dtype=float).reshape(eigvals.size, -1),
            cutoff_delta=float(d["cutoff_delta"]),
            weights=None if w is None else np.asarray(w, dtype=float).reshape(n, -1),
        )


def fit_latent_harmonics(latent, targets, epsilon2=None, cutoff_delta: float = DEFAULT_CUTOFF) -> GHModel:
    """Build the Latent Harmonics basis on ``latent`` and project ``targets`` on it.

    Parameters
    ----------
    latent : (N, k) array_like
        Selected non-harmonic coordinates of the training points.
    targets : (N, d) array_like
        Function values to extend, row-aligned with ``latent`` (normally the
        ambient coordinates).
    epsilon2 : float, optional
        Kernel bandwidth; half the median pairwise squared distance when omitted.
    cutoff_delta : float
        Eigenpairs with ``sigma_j < cutoff_delta * sigma_0`` are discarded.
    """
    phi = np.asarray(latent, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    h = np.asarray(targets, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] != phi.shape[0]:
        raise ParameterError(f"targets have {h.shape[0]} rows but latent has {phi.shape[0]}")
    if not np.all(np.isfinite(phi)):
        raise ParameterError("latent coordinates contain non-finite entries")
    if not 0.0 < cutoff_delta < 1.0:
        raise ParameterError(f"cutoff_delta must lie in (0, 1), got {cutoff_delta}")
    if epsilon2 is None:
        epsilon2 = tune_epsilon(phi)
    if not epsilon2 > 0:
        raise ParameterError(f"epsilon2 must be positive, got {epsilon2}")

    K = build_kernel(phi, epsilon2)
    try:
        sig, psi = scipy.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"kernel eigendecomposition failed: {exc}") from exc
    sig, psi = sig[::-1], psi[:, ::-1]
    keep = sig >= cutoff_delta * sig[0]
    if not np.any(keep) or sig[0] <= 0:
        raise ConfigurationError("no eigenpair survives the cutoff")
    sig, psi = sig[keep], psi[:, keep]
    coeffs = psi.T @ h
    return GHModel(
        epsilon2=float(epsilon2),
        basis_eigvals=sig,
        basis_eigvecs=psi,
        train_latent=phi.copy(),
        proj_coeffs=coeffs,
        cutoff_delta=float(cutoff_delta),
    )


def extend(model: GHModel, phi_new) -> np.ndarray:
    """Value of the extended function at one latent point."""
    return lift(model, np.asarray(phi_new, dtype=float)[None, :])[0]


def lift(model: GHModel, phi_batch, chunk: int = 4096) -> np.ndarray:
    """Extend the projected targets to every row of ``phi_batch``."""
    phi = np.asarray(phi_batch, dtype=float)
    k = model.train_latent.shape[1]
    d = model.proj_coeffs.shape[1]
    if phi.size == 0:
        return np.empty((0, d))
    phi = phi.reshape(-1, k)
    out = np.empty((phi.shape[0], d))
    for s in range(0, phi.shape[0], chunk):
        Kn = build_kernel(phi[s : s + chunk], model.epsilon2, model.train_latent)
        out[s : s + chunk] = Kn @ model.weights
    return out
