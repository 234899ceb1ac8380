"""Probabilistic Learning on Manifolds (PLoM).

Pipeline: whiten the data with PCA, model the whitened coordinates with a
Gaussian kernel-density mixture, build a Diffusion-Maps basis ``g`` over the
training points and run the damped second-order Itô SDE on the reduced
matrix ``Z`` (``H = Z g^T``) with a Störmer–Verlet splitting.

Matrices follow the column convention: data are ``(n, N)`` with one
realization per column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .dmaps import build_kernel, eigendecompose_markov, normalize_markov
from .errors import DegenerateDataError, DivergenceError, NumericError, ParameterError

__all__ = [
    "PLoMPCA",
    "PLoMConfig",
    "PLoMModel",
    "BasisDegenerateError",
    "pca_reduce",
    "pca_reconstruct",
    "silverman_params",
    "potential_gradient",
    "dmaps_basis",
    "basis_size_from_gap",
    "stormer_verlet_step",
    "plom_fit",
    "isde_run",
    "plom_sample",
]


class BasisDegenerateError(NumericError):
    pass


@dataclass(frozen=True)
class PLoMPCA:
    mean: np.ndarray
    pca_eigvecs: np.ndarray
    pca_eigvals: np.ndarray
    eta_d: np.ndarray

    @property
    def nu(self) -> int:
        return self.pca_eigvals.size

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean", "pca_eigvecs", "pca_eigvals", "eta_d")}

    @classmethod
    def from_dict(cls, d: dict) -> "PLoMPCA":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def pca_reduce(Phi, tol: float = 1e-6) -> PLoMPCA:
    """Whitened principal coordinates of the columns of ``Phi``.

    Eigenpairs of the sample covariance with ``mu_i > tol * mu_max`` are kept;
    the rows of ``eta_d`` then have zero mean and identity sample covariance.
    """
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[None, :]
    n, N = Phi.shape
    if N < 2:
        raise ParameterError("PCA needs at least two columns")
    if not 0.0 < tol < 1.0:
        raise ParameterError(f"tol must lie in (0, 1), got {tol}")
    mean = Phi.mean(axis=1)
    Xc = Phi - mean[:, None]
    cov = Xc @ Xc.T / (N - 1)
    mu, psi = np.linalg.eigh(cov)
    mu, psi = mu[::-1], psi[:, ::-1]
    if not mu[0] > 0:
        raise DegenerateDataError("covariance has rank zero (all columns identical)")
    keep = mu > tol * mu[0]
    mu, psi = mu[keep], psi[:, keep]
    # Deterministic orientation of each principal direction.
    idx = np.argmax(np.abs(psi), axis=0)
    psi = psi * np.sign(psi[idx, np.arange(psi.shape[1])])
    eta = (psi.T @ Xc) / np.sqrt(mu)[:, None]
    return PLoMPCA(mean=mean, pca_eigvecs=psi, pca_eigvals=mu, eta_d=eta)


def pca_reconstruct(pca: PLoMPCA, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).reshape(pca.nu, -1)
    return pca.mean[:, None] + pca.pca_eigvecs @ (np.sqrt(pca.pca_eigvals)[:, None] * eta)


def silverman_params(N: int, nu: int):
    """Kernel-density bandwidths ``(s_nu, s_hat_nu)``.

    ``s_hat_nu = s_nu / sqrt(s_nu^2 + (N-1)/N)`` together with the centre
    shrinkage ``s_hat/s`` gives the mixture identity covariance.
    """
    if int(N) < 2 or int(nu) < 1:
        raise ParameterError(f"need N >= 2 and nu >= 1, got N={N}, nu={nu}")
    s = (4.0 / (N * (2.0 + nu))) ** (1.0 / (nu + 4.0))
    s_hat = s / np.sqrt(s * s + (N - 1.0) / N)
    return s, s_hat


def _mixture_gradient(U, C, s_hat2, chunk=64):
    """grad log q at the rows of U for an isotropic mixture centred at rows of C."""
    M = U.shape[0]
    out = np.empty_like(U)
    if M == 0:
        return out
    cc = np.einsum("ij,ij->i", C, C)
    uu = np.einsum("ij,ij->i", U, U)
    # Logits -|u - c|^2 / (2 s^2) as a single product of augmented matrices.
    B = np.hstack([C / s_hat2, np.ones((C.shape[0], 1)), -0.5 * cc[:, None] / s_hat2])
    A = np.hstack([U, -0.5 * uu[:, None] / s_hat2, np.ones((M, 1))])
    Caug = np.hstack([C, np.ones((C.shape[0], 1))])
    for s in range(0, M, chunk):
        L = A[s : s + chunk] @ B.T
        np.exp(L, out=L)
        R = L @ Caug
        z = R[:, -1]
        low = z < 1e-250
        if np.any(low):
            # Every centre is far away: redo those rows with the max subtracted.
            for r in np.flatnonzero(low):
                u = U[s + r]
                lg = -((C - u) ** 2).sum(axis=1) / (2.0 * s_hat2)
                w = np.exp(lg - lg.max())
                R[r] = w @ Caug
        out[s : s + chunk] = (R[:, :-1] / R[:, -1:] - U[s : s + chunk]) / s_hat2
    return out


def potential_gradient(eta_d, u, s_nu: float, s_hat_nu: float) -> np.ndarray:
    """Gradient of ``log q`` for the kernel-density mixture of ``eta_d``.

    Centres are ``(s_hat/s) eta_d^j`` with bandwidth ``s_hat``. ``u`` is one
    point of length nu or a (nu, M) matrix of column points.
    """
    eta_d = np.asarray(eta_d, dtype=float)
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    U = u[:, None] if single else u
    C = (s_hat_nu / s_nu) * eta_d.T
    g = _mixture_gradient(np.ascontiguousarray(U.T), C, s_hat_nu**2).T
    return g[:, 0] if single else g


def basis_size_from_gap(eigvals) -> int:
    """Basis size (constant vector included) at the largest ratio gap of the nontrivial spectrum."""
    lam = np.asarray(eigvals, dtype=float)[1:]
    lam = lam[lam > 0]
    if lam.size < 2:
        return lam.size + 1
    ratios = lam[:-1] / lam[1:]
    return int(np.argmax(ratios)) + 2


def dmaps_basis(eta_d, epsilon: float, m: Optional[int] = None, n_eig: int = 20):
    """Diffusion-Maps basis ``g`` over the N columns of ``eta_d`` and ``a = g (g^T g)^-1``.

    ``m`` defaults to the largest spectral gap. Returns ``(g, a, eigvals)``
    where ``eigvals`` holds the computed spectrum (at least ``m`` values).
    """
    eta_d = np.asarray(eta_d, dtype=float)
    N = eta_d.shape[1]
    if m is not None and not 1 <= int(m) <= N:
        raise ParameterError(f"basis size m must lie in [1, N={N}], got {m}")
    K = build_kernel(eta_d.T, epsilon)
    M, _, D = normalize_markov(K, 1.0)
    del K
    n_req = min(N, max(int(n_eig), int(m) if m is not None else 0))
    eigvals, eigvecs = eigendecompose_markov(M, D, n_req)
    if m is None:
        m = basis_size_from_gap(eigvals)
    g = eigvecs[:, : int(m)]
    gram = g.T @ g
    if np.linalg.cond(gram) > 1e12:
        raise BasisDegenerateError(f"g^T g is rank deficient (cond = {np.linalg.cond(gram):.3g})")
    a = scipy.linalg.solve(gram, g.T, assume_a="pos").T
    return g, a, eigvals


@dataclass(frozen=True)
class PLoMConfig:
    f0: float = 1.0
    delta_r: float = 5e-4
    pca_tol: float = 1e-6
    epsilon: float = 10.0
    m: Optional[int] = None
    n_eig: int = 20
    burn_in: Optional[int] = None
    thinning: Optional[int] = None

    def __post_init__(self):
        if not (self.f0 > 0 and self.delta_r > 0 and self.epsilon > 0):
            raise ParameterError("f0, delta_r and epsilon must be positive")
        if self.burn_in is not None and int(self.burn_in) < 0:
            raise ParameterError("burn_in must be nonnegative")
        if self.thinning is not None and int(self.thinning) < 1:
            raise ParameterError("thinning must be >= 1")


@dataclass(frozen=True)
class PLoMModel:
    pca: PLoMPCA
    s_nu: float
    s_hat_nu: float
    g: np.ndarray
    a: np.ndarray
    f0: float
    delta_r: float
    m: int
    burn_in: int
    thinning: int
    eigvals: np.ndarray
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "pca": self.pca.to_dict(),
            "s_nu": self.s_nu, "s_hat_nu": self.s_hat_nu,
            "g": self.g.tolist(), "a": self.a.tolist(),
            "f0": self.f0, "delta_r": self.delta_r, "m": self.m,
            "burn_in": self.burn_in, "thinning": self.thinning,
            "eigvals": self.eigvals.tolist(), "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PLoMModel":
        return cls(
            pca=PLoMPCA.from_dict(d["pca"]),
            s_nu=float(d["s_nu"]), s_hat_nu=float(d["s_hat_nu"]),
            g=np.asarray(d["g"], dtype=float), a=np.asarray(d["a"], dtype=float),
            f0=float(d["f0"]), delta_r=float(d["delta_r"]), m=int(d["m"]),
            burn_in=int(d["burn_in"]), thinning=int(d["thinning"]),
            eigvals=np.asarray(d["eigvals"], dtype=float), epsilon=float(d["epsilon"]),
        )


def plom_fit(Phi, cfg: Optional[PLoMConfig] = None) -> PLoMModel:
    cfg = cfg or PLoMConfig()
    pca = pca_reduce(Phi, cfg.pca_tol)
    N = pca.eta_d.shape[1]
    s, s_hat = silverman_params(N, pca.nu)
    g, a, eigvals = dmaps_basis(pca.eta_d, cfg.epsilon, cfg.m, cfg.n_eig)
    relax = 1.0 / (cfg.f0 * cfg.delta_r)
    burn_in = int(round(4.0 * relax)) if cfg.burn_in is None else int(cfg.burn_in)
    thinning = max(1, int(round(0.5 * relax))) if cfg.thinning is None else int(cfg.thinning)
    return PLoMModel(pca=pca, s_nu=s, s_hat_nu=s_hat, g=g, a=a, f0=cfg.f0, delta_r=cfg.delta_r,
                     m=g.shape[1], burn_in=burn_in, thinning=thinning, eigvals=eigvals, epsilon=cfg.epsilon)


def stormer_verlet_step(Z, Y, force, dW, f0: float, dr: float, a):
    """One Störmer–Verlet step of the damped reduced ISDE.

    ``force(Z_half)`` must return the (nu, m) projected force ``L(Z g^T) a``;
    ``dW`` is a (nu, N) Wiener increment with N(0, dr) entries (or ``None``
    for a noiseless step).
    """
    bh = 0.25 * f0 * dr
    Zh = Z + 0.5 * dr * Y
    Yn = ((1.0 - bh) / (1.0 + bh)) * Y
    if force is not None:
        Yn = Yn + (dr / (1.0 + bh)) * force(Zh)
    if dW is not None:
        Yn = Yn + (np.sqrt(f0) / (1.0 + bh)) * (dW @ a)
    return Zh + 0.5 * dr * Yn, Yn


def isde_run(model: PLoMModel, n_samples: int, seed=0, callback=None) -> np.ndarray:
    """Generate ``n_samples`` new columns of ``H`` (a (nu, n_samples) matrix).

    After ``burn_in`` steps the state is recorded every ``thinning`` steps;
    each record contributes the N columns of ``Z g^T``.
    """
    n_samples = int(n_samples)
    eta = model.pca.eta_d
    nu, N = eta.shape
    if n_samples <= 0:
        return np.empty((nu, 0))
    rng = np.random.default_rng(seed)
    g, a = model.g, model.a
    C = (model.s_hat_nu / model.s_nu) * eta.T
    s_hat2 = model.s_hat_nu**2

    def force(Zh):
        U = np.ascontiguousarray((Zh @ g.T).T)
        return _mixture_gradient(U, C, s_hat2).T @ a

    Z = eta @ a
    Y = rng.standard_normal((nu, N)) @ a
    out = []
    collected = 0
    step = 0
    dr = model.delta_r
    next_record = model.burn_in
    while collected < n_samples:
        if step == next_record:
            H = Z @ g.T
            out.append(H)
            collected += N
            next_record += model.thinning
            if callback is not None:
                callback(step, H)
            if collected >= n_samples:
                break
        dW = rng.standard_normal((nu, N)) * np.sqrt(dr)
        # Blow-up surfaces as non-finite state and is reported just below.
        with np.errstate(over="ignore", invalid="ignore"):
            Z, Y = stormer_verlet_step(Z, Y, force, dW, model.f0, dr, a)
        step += 1
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
            raise DivergenceError(step)
    return np.hstack(out)[:, :n_samples]


def plom_sample(Phi, n_samples: int, cfg: Optional[PLoMConfig] = None, seed=0, return_model: bool = False):
    """New realizations (columns) with the same law as the columns of ``Phi``."""
    model = plom_fit(Phi, cfg)
    H = isde_run(model, n_samples, seed)
    out = pca_reconstruct(model.pca, H)
    return (out, model) if return_model else out
