import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from dmsampler import plom
from dmsampler.errors import DegenerateDataError, DivergenceError, ParameterError


# PCA

def test_pca_full_rank_reconstruction():
    Phi = np.random.default_rng(0).normal(size=(4, 30))
    pca = plom.pca_reduce(Phi, 1e-12)
    assert pca.nu == 4
    np.testing.assert_allclose(plom.pca_reconstruct(pca, pca.eta_d), Phi, atol=1e-8)


def test_pca_line_keeps_one_component():
    t = np.random.default_rng(1).normal(size=50)
    Phi = np.outer([1.0, -2.0, 0.5], t) + np.array([[1.0], [2.0], [3.0]])
    pca = plom.pca_reduce(Phi)
    assert pca.nu == 1
    np.testing.assert_allclose(plom.pca_reconstruct(pca, pca.eta_d), Phi, atol=1e-8)


def test_pca_hand_matrix_against_dense_eigensolve():
    Phi = np.array([[1.0, 2.0, 0.0, 3.0],
                    [0.5, -1.0, 1.5, 0.0],
                    [2.0, 2.0, 1.0, -1.0]])
    pca = plom.pca_reduce(Phi, 1e-12)
    mean = Phi.sum(axis=1) / 4
    C = np.zeros((3, 3))
    for j in range(4):
        C += np.outer(Phi[:, j] - mean, Phi[:, j] - mean)
    C /= 3
    mu, psi = np.linalg.eig(C)  # general solver as an independent oracle
    order = np.argsort(mu.real)[::-1]
    mu, psi = mu.real[order], psi.real[:, order]
    keep = mu > 1e-12 * mu[0]
    assert pca.nu == keep.sum() == 3 - 1 + 1 or pca.nu == keep.sum()
    np.testing.assert_allclose(pca.pca_eigvals, mu[keep], rtol=1e-10)
    eta = np.diag(1 / np.sqrt(mu[keep])) @ psi[:, keep].T @ (Phi - mean[:, None])
    for i in range(pca.nu):
        s = np.sign(eta[i] @ pca.eta_d[i])
        np.testing.assert_allclose(pca.eta_d[i], s * eta[i], atol=1e-10)


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(10, 60))
def test_pca_whitening(seed, n, N):
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(n, n)) @ rng.normal(size=(n, N)) + rng.normal(size=(n, 1)) * 5
    pca = plom.pca_reduce(Phi)
    eta = pca.eta_d
    assert np.max(np.abs(eta.mean(axis=1))) <= 1e-10
    np.testing.assert_allclose(np.cov(eta), np.eye(pca.nu), atol=1e-8)
    assert np.all(pca.pca_eigvals > 1e-6 * pca.pca_eigvals[0])


def test_pca_errors():
    with pytest.raises(DegenerateDataError):
        plom.pca_reduce(np.ones((3, 10)))
    with pytest.raises(ParameterError):
        plom.pca_reduce(np.ones((3, 1)))
    with pytest.raises(ParameterError):
        plom.pca_reduce(np.random.default_rng(0).normal(size=(2, 5)), tol=1.0)


# Silverman bandwidths

def test_silverman_examples():
    s, sh = plom.silverman_params(100, 2)
    assert s == pytest.approx(0.01 ** (1 / 6), rel=1e-12)
    assert s == pytest.approx(0.46416, abs=1e-5)
    assert sh == pytest.approx(s / math.sqrt(s * s + 0.99), rel=1e-14)
    assert sh == pytest.approx(0.42278, abs=5e-5)
    assert plom.silverman_params(10**6, 2)[0] < 0.12


@given(st.integers(2, 100_000), st.integers(1, 10))
def test_mixture_has_unit_variance(N, nu):
    # Mixture variance per coordinate: (s_hat/s)^2 (N-1)/N + s_hat^2 must equal 1.
    s, sh = plom.silverman_params(N, nu)
    assert (sh / s) ** 2 * (N - 1) / N + sh**2 == pytest.approx(1.0, rel=1e-12)


def test_silverman_errors():
    with pytest.raises(ParameterError):
        plom.silverman_params(1, 2)
    with pytest.raises(ParameterError):
        plom.silverman_params(10, 0)


# potential gradient

def log_q(eta, u, s, sh):
    C = (sh / s) * eta.T
    return logsumexp(-np.sum((C - u) ** 2, axis=1) / (2 * sh**2)) - math.log(eta.shape[1])


def test_gradient_single_center():
    eta = np.array([[0.3], [-1.2]])
    s, sh = 0.5, 0.4
    u = np.array([1.0, 2.0])
    c = (sh / s) * eta[:, 0]
    np.testing.assert_allclose(plom.potential_gradient(eta, u, s, sh), (c - u) / sh**2, rtol=1e-13)


def test_gradient_symmetric_pair_is_zero():
    eta = np.array([[1.0, -1.0], [2.0, -2.0]])
    np.testing.assert_allclose(plom.potential_gradient(eta, np.zeros(2), 0.5, 0.4), 0.0, atol=1e-14)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    eta = rng.normal(size=(3, 5))
    s, sh = plom.silverman_params(5, 3)
    u = rng.normal(size=3) * 1.5
    g = plom.potential_gradient(eta, u, s, sh)
    h = 1e-6
    fd = np.array([(log_q(eta, u + h * e, s, sh) - log_q(eta, u - h * e, s, sh)) / (2 * h) for e in np.eye(3)])
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-6


def test_gradient_batch_and_far_points():
    rng = np.random.default_rng(3)
    eta = rng.normal(size=(2, 200))
    s, sh = plom.silverman_params(200, 2)
    U = np.hstack([rng.normal(size=(2, 100)), np.array([[60.0, -80.0], [0.0, 45.0]])])
    G = plom.potential_gradient(eta, U, s, sh)
    assert np.all(np.isfinite(G))
    for j in range(U.shape[1]):
        C = (sh / s) * eta.T
        lg = -np.sum((C - U[:, j]) ** 2, axis=1) / (2 * sh**2)
        w = np.exp(lg - logsumexp(lg))
        ref = (w @ C - U[:, j]) / sh**2
        np.testing.assert_allclose(G[:, j], ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


# Diffusion-Maps basis

def test_basis_right_inverse():
    eta = np.random.default_rng(0).normal(size=(2, 150))
    g, a, _ = plom.dmaps_basis(eta, 10.0, m=6)
    assert g.shape == a.shape == (150, 6)
    assert np.max(np.abs(g.T @ a - np.eye(6))) <= 1e-10
    np.testing.assert_allclose(g[:, 0], 1.0, atol=1e-8)


def test_full_basis_projector_is_identity():
    eta = np.random.default_rng(1).normal(size=(2, 12))
    g, a, _ = plom.dmaps_basis(eta, 1.0, m=12)
    H = np.random.default_rng(2).normal(size=(2, 12))
    np.testing.assert_allclose(H @ a @ g.T, H, atol=1e-8)


def test_basis_gap_picks_intrinsic_dimension():
    rng = np.random.default_rng(4)
    pca = plom.pca_reduce(rng.uniform(-1, 1, size=(2, 600)))
    g, a, lam = plom.dmaps_basis(pca.eta_d, 10.0)
    assert g.shape[1] == 3
    assert lam[2] / lam[3] >= 3


def test_basis_size_from_gap():
    assert plom.basis_size_from_gap([1.0, 0.5, 0.48, 0.05, 0.04]) == 3
    assert plom.basis_size_from_gap([1.0, 0.5, 0.01, 0.009]) == 2


def test_basis_degenerate(monkeypatch):
    def dup(M, D, n):
        v = np.ones((M.shape[0], 3))
        return np.array([1.0, 0.5, 0.4]), v
    monkeypatch.setattr(plom, "eigendecompose_markov", dup)
    with pytest.raises(plom.BasisDegenerateError):
        plom.dmaps_basis(np.random.default_rng(0).normal(size=(2, 10)), 1.0, m=3)
    with pytest.raises(ParameterError):
        plom.dmaps_basis(np.random.default_rng(0).normal(size=(2, 10)), 1.0, m=11)


# Störmer–Verlet / ISDE

def test_free_damped_motion_closed_form():
    rng = np.random.default_rng(5)
    Z0, Y0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    f0, dr = 1.5, 0.01
    bh = f0 * dr / 4
    q = (1 - bh) / (1 + bh)
    Z, Y = Z0, Y0
    for k in range(1, 4001):
        Z, Y = plom.stormer_verlet_step(Z, Y, None, None, f0, dr, np.eye(3))
        if k in (1, 10, 100):
            np.testing.assert_allclose(Y, q**k * Y0, rtol=1e-12)
    # Z_inf = Z0 + (dr/2) Y0 (1 + q) / (1 - q)
    np.testing.assert_allclose(Z, Z0 + 0.5 * dr * Y0 * (1 + q) / (1 - q), atol=1e-6)


def test_step_with_force_and_noise_matches_formula():
    rng = np.random.default_rng(6)
    Z, Y, dW = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 5))
    a = rng.normal(size=(5, 4))
    f0, dr = 1.0, 5e-4
    bh = f0 * dr / 4
    force = lambda z: np.sin(z)
    Zn, Yn = plom.stormer_verlet_step(Z, Y, force, dW, f0, dr, a)
    Zh = Z + dr / 2 * Y
    Yref = (1 - bh) / (1 + bh) * Y + dr / (1 + bh) * np.sin(Zh) + math.sqrt(f0) / (1 + bh) * dW @ a
    np.testing.assert_allclose(Yn, Yref, rtol=1e-14)
    np.testing.assert_allclose(Zn, Zh + dr / 2 * Yref, rtol=1e-14)


@pytest.fixture(scope="module")
def gaussian_model():
    Phi = np.random.default_rng(7).normal(size=(2, 500))
    return plom.plom_fit(Phi)


def test_model_defaults_and_invariants(gaussian_model):
    m = gaussian_model
    assert m.f0 == 1.0 and m.delta_r == 5e-4
    assert m.burn_in == 8000 and m.thinning == 1000
    assert m.m == 3
    assert np.max(np.abs(m.g.T @ m.a - np.eye(m.m))) <= 1e-10
    back = plom.PLoMModel.from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.a, m.a)
    assert back.burn_in == m.burn_in and back.m == m.m


def test_stationary_moments_full_basis():
    # With the full basis the invariant law is the product of N mixtures, each
    # with mean 0 and identity covariance.
    Phi = np.random.default_rng(7).normal(size=(2, 500))
    model = plom.plom_fit(Phi, plom.PLoMConfig(m=500))
    H = plom.isde_run(model, 5000, seed=1)
    assert H.shape == (2, 5000)
    assert np.all(np.abs(H.mean(axis=1)) <= 0.1)
    v = H.var(axis=1)
    assert np.all((v >= 0.85) & (v <= 1.15))


def test_reduced_force_on_gaussian_data_is_restoring(gaussian_model):
    # For a near-Gaussian mixture L(h) ~ -h, so the projected force L(Z g^T) a ~ -Z.
    m = gaussian_model
    Z0 = m.pca.eta_d @ m.a
    L = plom.potential_gradient(m.pca.eta_d, Z0 @ m.g.T, m.s_nu, m.s_hat_nu)
    np.testing.assert_allclose(L @ m.a, -Z0, atol=0.15)


def test_isde_seeded_and_records():
    Phi = np.random.default_rng(8).normal(size=(2, 60))
    m = plom.plom_fit(Phi, plom.PLoMConfig(burn_in=20, thinning=5))
    steps = []
    a = plom.isde_run(m, 150, seed=3, callback=lambda k, H: steps.append(k))
    b = plom.isde_run(m, 150, seed=3)
    np.testing.assert_array_equal(a, b)
    assert steps == [20, 25, 30]
    assert not np.array_equal(a, plom.isde_run(m, 150, seed=4))


def test_isde_divergence():
    Phi = np.random.default_rng(9).normal(size=(2, 40))
    m = plom.plom_fit(Phi, plom.PLoMConfig(delta_r=50.0, burn_in=5000, thinning=1))
    with pytest.raises(DivergenceError) as exc:
        plom.isde_run(m, 40, seed=0)
    assert exc.value.step >= 1


def test_plom_sample_empty_and_plane():
    rng = np.random.default_rng(10)
    basis = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
    Phi = basis @ rng.normal(size=(2, 80)) + np.array([[1.0], [2.0], [0.0]])
    cfg = plom.PLoMConfig(burn_in=50, thinning=10)
    assert plom.plom_sample(Phi, 0, cfg).shape == (3, 0)
    out = plom.plom_sample(Phi, 400, cfg, seed=2)
    normal = np.cross(basis[:, 0], basis[:, 1])
    offsets = normal @ (out - np.array([[1.0], [2.0], [0.0]]))
    assert np.max(np.abs(offsets)) <= 1e-8


def test_config_validation():
    with pytest.raises(ParameterError):
        plom.PLoMConfig(f0=0)
    with pytest.raises(ParameterError):
        plom.PLoMConfig(thinning=0)
