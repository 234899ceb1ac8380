import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmsampler import manifold_filter as mf
from dmsampler.errors import ParameterError


def brute_knn(points, queries, n):
    """Sort by (distance, index) over every point."""
    d = np.sqrt(((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    idx = np.array([np.lexsort((np.arange(len(points)), row))[:n] for row in d])
    return np.take_along_axis(d, idx, axis=1), idx


def test_single_point_index():
    idx = mf.build_index(np.array([[0.5, -1.0]]))
    d, i = idx.query(np.random.default_rng(0).normal(size=(5, 2)), 1)
    np.testing.assert_array_equal(i, 0)


def test_thousand_random_points_1nn_match_brute_force():
    rng = np.random.default_rng(1)
    pts, q = rng.uniform(size=(1000, 2)), rng.uniform(size=(300, 2))
    d, i = mf.build_index(pts).query(q, 1)
    bd, bi = brute_knn(pts, q, 1)
    np.testing.assert_array_equal(i, bi)
    np.testing.assert_allclose(d, bd, rtol=1e-12)


def test_duplicates_retrievable_in_index_order():
    pts = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    d, i = mf.build_index(pts).query(np.array([[1.0, 1.0]]), 3)
    np.testing.assert_array_equal(i[0], [0, 2, 3])
    d, i = mf.build_index(pts).query(np.array([[1.0, 1.0]]), 2)
    np.testing.assert_array_equal(i[0], [0, 2])


def test_ties_across_the_cut_use_lowest_index():
    # Grid points: many equidistant neighbours around the query.
    g = np.array([[x, y] for x in range(-3, 4) for y in range(-3, 4)], dtype=float)
    perm = np.random.default_rng(2).permutation(len(g))
    pts = g[perm]
    q = np.array([[0.0, 0.0], [0.5, 0.5], [0.5, 0.0]])
    for n in (1, 2, 3, 5, 9):
        d, i = mf.build_index(pts).query(q, n)
        bd, bi = brute_knn(pts, q, n)
        np.testing.assert_array_equal(i, bi)


@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 4))
def test_knn_matches_brute_force(seed, n, k):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(size=(200, k)), 1)  # coarse grid forces ties
    q = np.round(rng.uniform(size=(20, k)), 1)
    d, i = mf.build_index(pts).query(q, n)
    bd, bi = brute_knn(pts, q, n)
    np.testing.assert_array_equal(i, bi)
    np.testing.assert_allclose(d, bd, rtol=1e-12, atol=1e-15)


def test_select_ten_per_point_count():
    rng = np.random.default_rng(3)
    train, gen = rng.normal(size=(3000, 2)), rng.normal(size=(100000, 2))
    sel = mf.select_neighbors(mf.build_index(gen), train, 10)
    assert sel.shape == (30000, 2)


def test_select_self_with_one_neighbour_returns_training_set():
    train = np.random.default_rng(4).normal(size=(100, 3))
    np.testing.assert_array_equal(mf.select_neighbors(mf.build_index(train), train, 1), train)


@pytest.mark.parametrize("seed", range(3))
def test_select_matches_brute_force_on_500_points(seed):
    rng = np.random.default_rng(seed)
    gen, train = rng.normal(size=(500, 2)), rng.normal(size=(60, 2))
    n = 4
    sel_idx = mf.select_neighbor_indices(mf.build_index(gen), train, n)
    _, bi = brute_knn(gen, train, n)
    np.testing.assert_array_equal(sel_idx, bi.reshape(-1))
    np.testing.assert_array_equal(mf.select_neighbors(mf.build_index(gen), train, n), gen[bi.reshape(-1)])


def test_selection_never_increases_distance_to_data():
    rng = np.random.default_rng(5)
    train = rng.normal(size=(200, 2))
    gen = rng.normal(size=(5000, 2)) * 2.0
    sel = mf.select_neighbors(mf.build_index(gen), train, 10)
    dist = lambda p: mf.build_index(train).query(p, 1)[0].mean()
    assert dist(sel) <= dist(gen)


def test_dedup_keeps_first_occurrence_order():
    gen = np.array([[0.0], [1.0], [10.0]])
    train = np.array([[0.1], [0.2], [9.0]])
    sel = mf.select_neighbors(mf.build_index(gen), train, 1, dedup=True)
    np.testing.assert_array_equal(sel, [[0.0], [10.0]])
    assert mf.select_neighbors(mf.build_index(gen), train, 1).shape == (3, 1)


def test_errors():
    with pytest.raises(ParameterError):
        mf.build_index(np.empty((0, 2)))
    idx = mf.build_index(np.zeros((3, 2)))
    with pytest.raises(ParameterError):
        mf.select_neighbors(idx, np.zeros((2, 2)), 4)
    with pytest.raises(ParameterError):
        mf.select_neighbors(idx, np.zeros((2, 2)), 0)
