import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dmsampler.datasets import (
    distance_to_s_manifold,
    gen_s_curve,
    read_csv,
    s_curve_backbone,
    write_csv,
)
from dmsampler.errors import ParameterError
from dmsampler.metrics import distance_metrics, histogram_table, ks_statistic, marginal_metrics


# --- S-curve -----------------------------------------------------------------


@pytest.mark.parametrize(
    "t, expected",
    [(0.0, (0.0, 0.0)), (1.0, (1.0, 1.0)), (-1.0, (-1.0, -1.0)), (2.0, (0.0, 2.0)), (-2.0, (0.0, -2.0))],
)
def test_backbone_hand_values(t, expected):
    x, z = s_curve_backbone(t)
    assert x == pytest.approx(expected[0], abs=1e-15)
    assert z == pytest.approx(expected[1], abs=1e-15)


def test_gen_s_curve_places_points_on_backbone():
    X, t = gen_s_curve(500, seed=3)
    bx, bz = s_curve_backbone(t)
    np.testing.assert_allclose(X[:, 0], bx)
    np.testing.assert_allclose(X[:, 2], bz)
    assert X.shape == (500, 3)
    assert t.min() >= -3.0 and t.max() <= 3.0
    assert np.all(np.abs(X[:, 1]) <= 1.0)


def test_gen_s_curve_point_example():
    # t = 1, h = 0.5 lies at (1, 0.5, 1).
    x, z = s_curve_backbone(1.0)
    assert (float(x), 0.5, float(z)) == pytest.approx((1.0, 0.5, 1.0))
    assert distance_to_s_manifold(np.array([1.0, 0.5, 1.0])) < 1e-3


def test_gen_s_curve_seeded_and_range():
    a, ta = gen_s_curve(100, (0.5, 1.5), seed=7)
    b, tb = gen_s_curve(100, (0.5, 1.5), seed=7)
    np.testing.assert_array_equal(a, b)
    assert ta.min() >= 0.5 and ta.max() <= 1.5
    c, _ = gen_s_curve(100, (0.5, 1.5), seed=8)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("n, tr", [(0, (-3, 3)), (10, (1, 1)), (10, (2, -2))])
def test_gen_s_curve_rejects_bad_arguments(n, tr):
    with pytest.raises(ParameterError):
        gen_s_curve(n, tr)


def test_distance_of_surface_points_is_tiny():
    X, _ = gen_s_curve(2000, seed=1)
    assert distance_to_s_manifold(X).max() <= 1e-3


def test_distance_matches_refined_grid_oracle():
    p = np.array([0.0, 0.0, 10.0])
    coarse = distance_to_s_manifold(p)
    fine = distance_to_s_manifold(p, grid=200000)
    assert coarse == pytest.approx(fine, abs=1e-6)
    # The highest backbone point is t = 2, at (0, 2).
    assert fine == pytest.approx(8.0, abs=1e-9)


def test_distance_adds_width_excess_in_quadrature():
    base = np.array([0.3, 0.0, 0.7])
    d0 = distance_to_s_manifold(base)
    d = distance_to_s_manifold(base + np.array([0.0, 3.0, 0.0]))
    assert d == pytest.approx(np.hypot(d0, 2.0), rel=1e-12)


@given(st.floats(-1.0, 1.0), st.floats(-2.9, 2.9), st.floats(-0.5, 0.5))
def test_distance_is_invariant_in_y_inside_the_strip(y, t, off):
    x, z = s_curve_backbone(t)
    p0 = np.array([x + off, 0.0, z])
    p1 = np.array([x + off, y, z])
    assert distance_to_s_manifold(p0) == pytest.approx(distance_to_s_manifold(p1), abs=1e-12)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((17, 3)) * 1e3
    write_csv(tmp_path / "sub" / "a.csv", A, ["x", "y", "z"])
    B, header = read_csv(tmp_path / "sub" / "a.csv")
    assert header == ["x", "y", "z"]
    np.testing.assert_array_equal(A, B)


def test_read_csv_rejects_bad_files(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    (tmp_path / "text.csv").write_text("x,y\n1,abc\n")
    (tmp_path / "ragged.csv").write_text("x,y\n1,2,3\n")
    for name in ("empty.csv", "text.csv", "ragged.csv"):
        with pytest.raises(ParameterError):
            read_csv(tmp_path / name)


# --- metrics -----------------------------------------------------------------


def test_ks_of_identical_samples_is_zero():
    a = np.random.default_rng(0).standard_normal(300)
    assert ks_statistic(a, a) == 0.0
    assert ks_statistic(a, a[::-1]) == 0.0


def test_ks_of_disjoint_samples_is_one():
    assert ks_statistic(np.arange(10.0), np.arange(10.0) + 100) == 1.0


def test_ks_hand_example():
    # F_a - F_b peaks at x = 2: 2/3 - 0.
    assert ks_statistic([1, 2, 3], [2.5, 4]) == pytest.approx(2.0 / 3.0)


def test_ks_two_seeds_uniform_is_small():
    rng0, rng1 = np.random.default_rng(0), np.random.default_rng(1)
    assert ks_statistic(rng0.uniform(size=5000), rng1.uniform(size=5000)) < 0.04


@given(
    st.lists(st.integers(-5, 5), min_size=1, max_size=40),
    st.lists(st.integers(-5, 5), min_size=1, max_size=40),
)
@pytest.mark.filterwarnings("ignore:divide by zero:RuntimeWarning")
def test_ks_agrees_with_scipy(a, b):
    # Integer values exercise ties.
    ref = stats.ks_2samp(np.array(a, float), np.array(b, float), method="asymp").statistic
    assert ks_statistic(a, b) == pytest.approx(ref, abs=1e-12)


def test_ks_rejects_empty():
    with pytest.raises(ParameterError):
        ks_statistic([], [1.0])


def test_marginal_metrics_fields():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((400, 2))
    b = rng.standard_normal((300, 2)) * 2 + 1
    m = marginal_metrics(a, b)
    assert m["n_a"] == 400 and m["n_b"] == 300
    np.testing.assert_allclose(m["mean_delta"], np.abs(a.mean(0) - b.mean(0)))
    np.testing.assert_allclose(m["var_delta"], np.abs(a.var(0, ddof=1) - b.var(0, ddof=1)))
    assert m["ks_max"] == max(m["ks"])
    with pytest.raises(ParameterError):
        marginal_metrics(a, b[:, :1])
    with pytest.raises(ParameterError):
        marginal_metrics(a[:0], b)


def test_distance_metrics_summary():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
    d = distance_metrics(pts)
    assert d["count"] == 2
    # Grid resolution bounds the error of the oracle.
    assert d["max_distance"] == pytest.approx(2.0, abs=1e-3)
    assert d["mean_distance"] == pytest.approx(1.0, abs=1e-3)
    assert distance_metrics(np.empty((0, 3)))["count"] == 0


def test_histogram_table_integrates_to_one():
    s = np.random.default_rng(0).standard_normal((1000, 2))
    rows = histogram_table(s, bins=20)
    assert rows.shape == (40, 4)
    for j in range(2):
        r = rows[rows[:, 0] == j]
        assert np.sum((r[:, 2] - r[:, 1]) * r[:, 3]) == pytest.approx(1.0)
