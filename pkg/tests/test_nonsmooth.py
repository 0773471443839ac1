import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbolza.grid import PLUS_INFINITY, Grid, interpolate
from hjbolza.nonsmooth import (
    NotInSet,
    OutOfDomain,
    PointCloudSet,
    ball_lattice,
    box_set,
    contingent_cone,
    contingent_derivative,
    differential_sample,
    epigraph,
    scale_sequence,
    sphere_directions,
    sphere_set,
    whole_space,
)


def square(pts):
    return pts[:, 0] ** 2


def absval(pts):
    return np.abs(pts[:, 0])


def test_scale_sequence_geometric():
    hs = scale_sequence(1e-3)
    assert hs[0] == 0.1 and np.allclose(hs[1:] / hs[:-1], 0.5)
    assert hs[-2] >= 2e-3 > hs[-1]


def test_ball_lattice_inside_radius():
    pts = ball_lattice(2, 0.3)
    assert np.all(np.linalg.norm(pts, axis=-1) <= 0.3 + 1e-12)
    assert np.any(np.all(pts == 0, axis=1))


@pytest.mark.parametrize("dim, count", [(1, 2), (2, 16), (3, 50)])
def test_sphere_directions_unit(dim, count):
    d = sphere_directions(dim, count)
    assert d.shape == (count, dim) and np.allclose(np.linalg.norm(d, axis=-1), 1.0)


# ------------------------------------------------------ contingent derivative


def test_derivative_smooth():
    est = contingent_derivative(square, [1.0], [1.0])
    assert est.value == pytest.approx(2.0, abs=1e-3)


def test_derivative_of_abs_at_kink():
    est = contingent_derivative(absval, [0.0], [-1.0])
    assert est.value == pytest.approx(1.0, abs=1e-3)


def test_derivative_outside_domain():
    with pytest.raises(OutOfDomain):
        contingent_derivative(lambda p: np.full(len(p), PLUS_INFINITY), [0.0], [1.0])


def ray_field():
    g = Grid((-1.0, -1.0), (1.0, 1.0), (201, 201))
    i, j = np.meshgrid(np.arange(201), np.arange(201), indexing="ij")
    vals = np.where((i == j) & (i >= 100), 0.0, PLUS_INFINITY)
    return g, vals


def brute_quotients(g, vals, x, u, hs):
    """Min of (W(x+d) - W(x))/h over every node displacement d with |d/h - u| <= sqrt(h)."""
    pts = g.points()
    w = vals.ravel()
    out = []
    for h in hs:
        v = (pts - x) / h
        near = np.linalg.norm(v - u, axis=-1) <= np.sqrt(h) + 1e-12
        out.append(np.min(w[near]) if near.any() else PLUS_INFINITY)
    return np.array(out)


@pytest.mark.parametrize("u, finite", [((1.0, 1.0), True), ((1.0, -1.0), False), ((0.0, 1.0), False)])
def test_derivative_on_ray_indicator(u, finite):
    g, vals = ray_field()
    W = lambda p: interpolate(g, vals, p)
    hs = [0.08, 0.04, 0.02, 0.01]
    est = contingent_derivative(W, [0.0, 0.0], u, h_sequence=hs)
    oracle = brute_quotients(g, vals, np.zeros(2), np.array(u), hs)
    assert (est.value < 1e29) == finite == (oracle[-1] < 1e29)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_smooth_consistency(a, b, x0, x1, u0):
    W = lambda p: a * p[:, 0] ** 2 + b * p[:, 0] * p[:, 1] + p[:, 1]
    x = np.array([x0, x1])
    grad = np.array([2 * a * x0 + b * x1, b * x0 + 1])
    u = np.array([u0, 0.5])
    est = contingent_derivative(W, x, u)
    assert abs(est.value - grad @ u) <= 1e-3 + 10 * 1e-3
    pg = Grid(tuple(grad - 0.3), tuple(grad + 0.3), (31, 31))
    s = differential_sample(W, x, "sub", radius=0.004, delta=0.01, p_grid=pg)
    assert len(s.accepted) and np.max(np.linalg.norm(s.accepted - grad, axis=-1)) <= 0.05


# ------------------------------------------------------ differential samples


def test_subdifferential_of_abs():
    pg = Grid((-2.0,), (2.0,), (41,))
    s = differential_sample(absval, [0.0], "sub", radius=0.2, delta=0.01, p_grid=pg)
    acc = np.round(s.accepted[:, 0], 6)
    assert set(np.round(np.linspace(-0.9, 0.9, 19), 6)) <= set(acc)
    assert np.all(np.abs(acc) < 1.1)


def test_subdifferential_of_square_is_singleton():
    pg = Grid((0.0,), (4.0,), (401,))
    s = differential_sample(square, [1.0], "sub", radius=0.2, delta=0.01, p_grid=pg)
    assert len(s.accepted)
    assert np.all(np.abs(s.accepted[:, 0] - 2.0) <= 0.05)
    assert np.all((s.accepted >= 1.8) & (s.accepted <= 2.2))


def test_superdifferential_of_negative_abs():
    pg = Grid((-2.0,), (2.0,), (41,))
    s = differential_sample(lambda p: -np.abs(p[:, 0]), [0.0], "super", radius=0.2, delta=0.01, p_grid=pg)
    acc = np.round(s.accepted[:, 0], 6)
    assert set(np.round(np.linspace(-0.9, 0.9, 19), 6)) <= set(acc)
    assert np.all(np.abs(acc) < 1.1)


def test_sub_of_negative_abs_is_empty():
    pg = Grid((-2.0,), (2.0,), (41,))
    assert differential_sample(lambda p: -np.abs(p[:, 0]), [0.0], "sub", 0.2, 0.01, pg).empty


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_super_is_negated_sub_of_negation(seed):
    rng = np.random.default_rng(seed)
    g = Grid((-1.0,), (1.0,), (21,))
    vals = rng.normal(size=21)
    W = lambda p: interpolate(g, vals, p)
    negW = lambda p: -interpolate(g, vals, p)
    pg = Grid((-5.0,), (5.0,), (101,))
    x = [g.axes[0][rng.integers(3, 18)]]
    sup = differential_sample(W, x, "super", 0.2, 0.05, pg)
    neg_grid = Grid((-5.0,), (5.0,), (101,))
    sub = differential_sample(negW, x, "sub", 0.2, 0.05, neg_grid)
    assert sorted(np.round(sup.accepted[:, 0], 9)) == sorted(np.round(-sub.accepted[:, 0], 9))


# ------------------------------------------------------------------- cones


def test_cone_of_interval_endpoint():
    c = contingent_cone(box_set([0.0], [1.0]), [0.0], [0.02, 0.01, 0.005], np.array([[1.0], [-1.0]]))
    assert c.inside.tolist() == [True, False]


def test_cone_of_circle_is_tangent_line():
    dirs = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0]])
    c = contingent_cone(sphere_set([0.0, 0.0], 1.0), [1.0, 0.0], [0.02, 0.01, 0.005], dirs)
    assert c.inside.tolist() == [True, True, False]


def test_cone_requires_point_in_set():
    with pytest.raises(NotInSet):
        contingent_cone(box_set([0.0], [1.0]), [2.0], [0.01], np.array([[1.0]]))


def brute_epi_abs_distance(z, s=np.linspace(-1, 1, 200001)):
    a, b = z
    if b >= abs(a):
        return 0.0
    return float(np.min(np.hypot(a - s, b - np.abs(s))))


def test_cone_of_abs_epigraph():
    K = epigraph(absval, Grid((-1.0,), (1.0,), (2001,)))
    dirs = np.array([[1.0, 1.0], [1.0, 0.5], [0.0, 1.0]])
    hs = [0.02, 0.01, 0.005]
    c = contingent_cone(K, [0.0, 0.0], hs, dirs)
    oracle = [min(brute_epi_abs_distance(h * d) / h for h in hs) <= 0.02 for d in dirs]
    assert c.inside.tolist() == oracle == [True, False, True]


def test_cone_epigraph_duality():
    W = lambda p: p[:, 0] ** 2 + 0.5 * np.abs(p[:, 0] - 0.3)
    K = epigraph(W, Grid((-1.0,), (1.0,), (4001,)))
    for x, u in [(0.3, 1.0), (0.3, -1.0), (-0.4, 0.7)]:
        d = contingent_derivative(W, [x], [u], h_sequence=[0.02, 0.01, 0.005]).value
        tol = 0.02
        c = contingent_cone(K, [x, float(W(np.array([[x]]))[0])], [0.02, 0.01, 0.005],
                            np.array([[u, d + 5 * tol]]), tol=tol)
        assert c.inside[0]


def test_polar_of_half_line():
    c = contingent_cone(box_set([0.0], [1.0]), [0.0], [0.01], np.array([[1.0], [-1.0]]))
    p = np.linspace(-2, 2, 9)[:, None]
    pol = polar_of(c, p)
    assert pol.inside.tolist() == (p[:, 0] <= 0).tolist()


def polar_of(cone, p):
    from hjbolza.nonsmooth import polar_cone

    return polar_cone(cone, p)


def test_polar_of_tangent_line_is_normal_line():
    dirs = sphere_directions(2, 64)
    c = contingent_cone(sphere_set([0.0, 0.0], 1.0), [1.0, 0.0], [0.004, 0.002, 0.001], dirs, tol=0.01)
    p = np.array([[1.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [1.0, 0.2]])
    assert polar_of(c, p).inside.tolist() == [True, True, False, False]


def test_polar_of_whole_space_is_origin():
    dirs = sphere_directions(2, 32)
    c = contingent_cone(whole_space(2), [0.3, 0.1], [0.01], dirs)
    p = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, -0.5]])
    assert polar_of(c, p).inside.tolist() == [True, False, False]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=16, max_size=16), st.lists(st.booleans(), min_size=16, max_size=16))
def test_polar_anti_monotone(m1, m2):
    from hjbolza.nonsmooth import ConeSample

    dirs = sphere_directions(2, 16)
    small = np.array(m1) & np.array(m2)
    big = np.array(m1)
    c1 = ConeSample(np.zeros(2), dirs, small)
    c2 = ConeSample(np.zeros(2), dirs, big)
    p = sphere_directions(2, 48) * 1.5
    assert np.all(polar_of(c2, p).inside <= polar_of(c1, p).inside)


# ---------------------------------------------------------------- sets


def test_epigraph_membership():
    dom = Grid((-1.0,), (1.0,), (201,))
    zero = epigraph(lambda p: np.zeros(len(p)), dom)
    assert zero.member(np.array([[0.5, 0.0], [0.5, 3.0]])).all()
    assert not zero.member(np.array([[0.5, -0.1]]))[0]
    K = epigraph(absval, dom)
    assert K.member(np.array([[0.0, 0.1]]))[0] and not K.member(np.array([[0.0, -0.1]]))[0]
    assert K.distance(np.array([[0.0, -0.1]]))[0] == pytest.approx(0.1, abs=1e-9)  # apex is nearest


def test_epigraph_of_point_indicator_is_vertical_ray():
    dom = Grid((-1.0,), (1.0,), (201,))
    vals = np.where(np.abs(dom.axes[0]) < 1e-12, 0.0, PLUS_INFINITY)
    K = epigraph(lambda p: interpolate(dom, vals, p), dom)
    assert K.member(np.array([[0.0, 0.0], [0.0, 0.5]])).all()
    assert not K.member(np.array([[0.05, 0.5]]))[0]
    assert K.distance(np.array([[0.05, 0.5]]))[0] == pytest.approx(0.05, abs=1e-9)


def test_hypograph_orientation():
    K = epigraph(absval, Grid((-1.0,), (1.0,), (201,)), orientation="hypo")
    assert K.member(np.array([[0.5, 0.2]]))[0] and not K.member(np.array([[0.5, 0.7]]))[0]


def test_point_cloud_ties_to_lowest_index():
    K = PointCloudSet(np.array([[1.0], [-1.0]]))
    d, nearest = K.nearest(np.array([[0.0]]))
    assert d[0] == 1.0 and nearest[0, 0] == 1.0
