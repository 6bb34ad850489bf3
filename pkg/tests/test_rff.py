"""Tests for the random Fourier feature map and path lifting."""

import numpy as np
import pytest

from sigres.paths import Path
from sigres.rff import LiftedPath, RFFSpec, lift_path, median_heuristic, rff_map


def test_spec_validation():
    with pytest.raises(ValueError, match="num_features"):
        RFFSpec(2, 0)
    with pytest.raises(ValueError, match="input_dim"):
        RFFSpec(0, 4)
    with pytest.raises(ValueError, match="frequency_scale"):
        RFFSpec(2, 4, 0.0)
    with pytest.raises(ValueError, match="drawn internally"):
        RFFSpec(2, 4, 1.0, 0, np.zeros((4, 2)))


def test_spec_frozen_draw():
    a = RFFSpec(3, 16, 0.5, seed=7)
    b = RFFSpec(3, 16, 0.5, seed=7)
    assert np.array_equal(a.frequencies, b.frequencies)
    c = RFFSpec(3, 16, 0.5, seed=8)
    assert not np.array_equal(a.frequencies, c.frequencies)
    assert a.frequencies.shape == (16, 3)
    assert a.lifted_dim == 32
    with pytest.raises(ValueError):
        a.frequencies[0, 0] = 1.0


def test_frequency_scale_multiplies_draw():
    a = RFFSpec(2, 8, 1.0, seed=1)
    b = RFFSpec(2, 8, 2.5, seed=1)
    assert np.allclose(b.frequencies, 2.5 * a.frequencies)


def test_row_norm_is_one():
    spec = RFFSpec(4, 33, 1.3, seed=0)
    x = np.random.default_rng(0).standard_normal((50, 4))
    feats = rff_map(spec, x)
    assert feats.shape == (50, 66)
    assert np.allclose(np.sum(feats**2, axis=1), 1.0, atol=1e-12)


def test_interleaved_layout():
    spec = RFFSpec(2, 3, 1.0, seed=5)
    x = np.array([0.7, -0.2])
    proj = spec.frequencies @ x
    feats = rff_map(spec, x)
    expected = np.empty(6)
    expected[0::2] = np.cos(proj) / np.sqrt(3)
    expected[1::2] = np.sin(proj) / np.sqrt(3)
    assert np.allclose(feats, expected, atol=1e-15)


def test_same_point_unit_inner_product():
    spec = RFFSpec(3, 11, 0.8, seed=2)
    x = np.array([1.0, -2.0, 0.5])
    assert rff_map(spec, x) @ rff_map(spec, x) == pytest.approx(1.0, abs=1e-12)


def test_shift_invariance_exact():
    # cos(a)cos(b) + sin(a)sin(b) = cos(a-b): the inner product sees only x-y
    spec = RFFSpec(3, 64, 1.0, seed=4)
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, 3))
    base = rff_map(spec, x) @ rff_map(spec, y)
    for _ in range(5):
        c = rng.standard_normal(3) * 10.0
        shifted = rff_map(spec, x + c) @ rff_map(spec, y + c)
        assert abs(shifted - base) <= 1e-12


def test_bochner_monte_carlo():
    # <phi(x), phi(y)> approximates exp(-|x-y|^2 / 2) within 3/sqrt(F)
    rng = np.random.default_rng(2024)
    x, y = rng.standard_normal((2, 3))
    target = np.exp(-np.sum((x - y) ** 2) / 2)
    spec = RFFSpec(3, 4096, 1.0, seed=0)
    est = rff_map(spec, x) @ rff_map(spec, y)
    assert abs(est - target) <= 3 / np.sqrt(4096)


def test_bochner_respects_frequency_scale():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, 2)) * 0.5
    sigma = 2.0
    target = np.exp(-(sigma**2) * np.sum((x - y) ** 2) / 2)
    spec = RFFSpec(2, 4096, sigma, seed=1)
    est = rff_map(spec, x) @ rff_map(spec, y)
    assert abs(est - target) <= 3 / np.sqrt(4096)


def test_lift_path_rows_and_times():
    spec = RFFSpec(2, 8, 1.0, seed=0)
    p = Path(np.array([0.0, 0.3, 1.0]), np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]))
    lifted = lift_path(spec, p)
    assert isinstance(lifted, LiftedPath) and isinstance(lifted, Path)
    assert np.array_equal(lifted.times, p.times)
    assert lifted.values.shape == (3, 16)
    assert np.allclose(np.sum(lifted.values**2, axis=1), 1.0, atol=1e-12)
    assert np.allclose(lifted.values, rff_map(spec, p.values))


def test_lift_constant_path_is_constant():
    spec = RFFSpec(2, 8, 1.0, seed=0)
    p = Path(np.array([0.0, 1.0, 2.0]), np.tile([0.3, -0.7], (3, 1)))
    lifted = lift_path(spec, p)
    assert np.allclose(np.diff(lifted.values, axis=0), 0.0)


def test_lift_dimension_mismatch():
    spec = RFFSpec(3, 8, 1.0, seed=0)
    p = Path.from_values(np.zeros((4, 2)) + np.arange(4.0)[:, None])
    with pytest.raises(ValueError, match="d=2"):
        lift_path(spec, p)


def test_lifted_increments_match_kernel_differences():
    # finite-difference version of the limiting inner product:
    # <dphi(x_u), dphi(y_v)> -> k(x_u,y_v) - k(x_u,y_{v-1}) - k(x_{u-1},y_v) + k(x_{u-1},y_{v-1})
    F = 8192
    spec = RFFSpec(2, F, 1.0, seed=3)
    t = np.linspace(0.0, 1.0, 6)
    xv = np.column_stack([np.sin(2 * t), t**2])
    yv = np.column_stack([np.cos(t), t])
    lx = rff_map(spec, xv)
    ly = rff_map(spec, yv)

    def k(a, b):
        return np.exp(-np.sum((a - b) ** 2) / 2)

    for u in range(1, 6):
        for v in range(1, 6):
            est = (lx[u] - lx[u - 1]) @ (ly[v] - ly[v - 1])
            exact = k(xv[u], yv[v]) - k(xv[u], yv[v - 1]) - k(xv[u - 1], yv[v]) + k(xv[u - 1], yv[v - 1])
            assert abs(est - exact) <= 6 / np.sqrt(F)


def test_rff_map_dim_check():
    spec = RFFSpec(3, 4, 1.0, seed=0)
    with pytest.raises(ValueError, match="point dim"):
        rff_map(spec, np.zeros(2))


def test_median_heuristic_hand_case():
    # distances {1, 1, 2} -> median 1
    assert median_heuristic(np.array([0.0, 1.0, 2.0])) == pytest.approx(1.0)


def test_median_heuristic_subsample_deterministic():
    pts = np.random.default_rng(8).standard_normal((5000, 2))
    a = median_heuristic(pts, max_points=200, seed=1)
    b = median_heuristic(pts, max_points=200, seed=1)
    assert a == b
    full = median_heuristic(pts[:1000])
    assert abs(a - full) / full < 0.2  # subsample tracks the population value


def test_median_heuristic_degenerate():
    with pytest.raises(ValueError, match="at least 2"):
        median_heuristic(np.array([1.0]))
    with pytest.raises(ValueError, match="degenerate"):
        median_heuristic(np.zeros((5, 2)))
