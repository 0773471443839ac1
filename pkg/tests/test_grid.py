import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbolza.grid import PLUS_INFINITY, Grid, clean, interpolate, is_inf, sat_add


def test_sentinel_saturates():
    assert sat_add(PLUS_INFINITY, 5.0) == PLUS_INFINITY
    assert sat_add(PLUS_INFINITY, PLUS_INFINITY) == PLUS_INFINITY
    assert is_inf(clean(np.array([2e29, np.inf, np.nan]))).all()


@pytest.mark.parametrize("counts", [(1,), (0, 3)])
def test_grid_rejects_degenerate_counts(counts):
    with pytest.raises(ValueError):
        Grid((0.0,) * len(counts), (1.0,) * len(counts), counts)


def test_from_spacing_and_points_order():
    g = Grid.from_spacing([0.0, 0.0], [1.0, 2.0], 0.5)
    assert g.shape == (3, 5)
    pts = g.points()
    assert np.allclose(pts[:5, 0], 0.0)
    assert np.allclose(pts[:5, 1], [0, 0.5, 1, 1.5, 2])


def test_nearest_index_ties_to_lower():
    g = Grid((0.0,), (1.0,), (11,))
    assert g.nearest_index(np.array([[0.05]]))[0] == 0
    assert g.nearest_index(np.array([[0.151]]))[0] == 2


def test_interpolation_exact_on_linear():
    g = Grid((0.0, -1.0), (1.0, 1.0), (5, 9))
    pts = g.points()
    vals = (2 * pts[:, 0] - pts[:, 1] + 0.5).reshape(g.shape)
    q = np.random.default_rng(1).uniform([0, -1], [1, 1], size=(50, 2))
    assert np.allclose(interpolate(g, vals, q), 2 * q[:, 0] - q[:, 1] + 0.5)


def test_interpolation_propagates_infinity_and_outside():
    g = Grid((0.0,), (1.0,), (3,))
    vals = np.array([0.0, PLUS_INFINITY, 1.0])
    out = interpolate(g, vals, np.array([[0.0], [0.25], [1.0], [1.5]]))
    assert out[0] == 0.0 and out[2] == 1.0
    assert is_inf(out[1]) and is_inf(out[3])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-1.0, 1.0))
def test_interpolation_within_corner_hull(a, b):
    g = Grid((0.0, -1.0), (1.0, 1.0), (4, 4))
    vals = np.random.default_rng(0).uniform(0, 1, size=g.shape)
    v = interpolate(g, vals, np.array([[a, b]]))[0]
    assert vals.min() - 1e-12 <= v <= vals.max() + 1e-12
