import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbolza.grid import Grid, interpolate, is_inf
from hjbolza.transform import derived_witness
from hjbolza.problem import (
    BolzaProblem,
    box_indicator,
    sampled_lagrangian,
    eval_action,
    expression_cost,
    lagrange_reduction,
    quadratic_lagrangian,
    quartic_lagrangian,
    sampled_cost,
    validate_problem,
    zero_cost,
)
from hjbolza.value import (
    InfeasibleEverywhere,
    Stuck,
    VelocitySearchBox,
    default_search_box,
    direct_minimize,
    hopf_lax_field,
    hopf_lax_oracle,
    reconstruct_trajectory,
    solve_dp,
)

from conftest import DT, DX, hopf_lax_abs

# Frozen from solve_dp at dt = dx = 0.002 on [-1.5, 1.5], velocities 161 on [-2, 2]
# (analytic value sqrt(2) tanh(sqrt(2)) / 2 = 0.62818).
POTENTIAL_ORACLE = 0.62913


def brute_two_segment(L, phi, t, x, grid=np.linspace(-3, 3, 6001)):
    """min over y1 (midpoint) and y2 (endpoint) of the 2-segment action."""
    h = t / 2
    y1 = grid[:, None]
    y2 = grid[None, :]
    cost = h * L((y1 - x) / h) + h * L((y2 - y1) / h) + phi(y2)
    return float(np.min(cost))


def test_zero_cost_value_is_zero(quad_L):
    prob = validate_problem(quad_L, zero_cost())
    fld = solve_dp(prob, DT, 0.5, search=VelocitySearchBox(10.0, 40))
    assert np.max(np.abs(fld.values)) == 0.0


@pytest.mark.parametrize("t, x, expected", [(1.0, 2.0, 1.5), (1.0, 0.5, 0.125), (0.5, -1.0, 0.75)])
def test_abs_benchmark_points(bench1_field, t, x, expected):
    assert hopf_lax_abs(t, x) == pytest.approx(expected)
    assert bench1_field(np.array([[t, x]]))[0] == pytest.approx(expected, abs=0.05)


def test_point_target_benchmark(bench2_field):
    assert bench2_field(np.array([[1.0, 1.0]]))[0] == pytest.approx(0.5, abs=0.05)
    # brute force over 2-segment paths agrees with x^2/(2t)
    oracle = brute_two_segment(lambda v: v**2 / 2, lambda y: np.where(np.abs(y) < 1e-9, 0.0, np.inf), 1.0, 1.0)
    assert oracle == pytest.approx(0.5, abs=1e-9)


def test_hopf_lax_oracle(bench1, quad_L):
    assert hopf_lax_oracle(validate_problem(quad_L, zero_cost()), 1.0, [0.7]) == pytest.approx(0.0, abs=1e-12)
    assert hopf_lax_oracle(bench1, 1.0, [2.0]) == pytest.approx(1.5, abs=1e-12)


def test_hopf_lax_needs_x_independent(x_grid, u_grid):
    prob = validate_problem(quadratic_lagrangian(x_grid, u_grid, potential=1.0), zero_cost())
    with pytest.raises(ValueError):
        hopf_lax_oracle(prob, 1.0, [0.0])


def test_dp_matches_hopf_lax_oracle(bench1, bench1_field):
    times = bench1_field.times[10::10]
    xs = Grid((-2.0,), (2.0,), (41,))
    oracle = hopf_lax_field(bench1, times, xs)
    dp = np.array([bench1_field(np.column_stack([np.full(41, t), xs.axes[0]])) for t in times])
    assert np.max(np.abs(dp - oracle)) <= 2 * (DT + DX)


def test_dp_consistency_is_a_true_minimum(bench1, bench1_field):
    rng = np.random.default_rng(3)
    vel = bench1_field.velocities
    for _ in range(20):
        k = int(rng.integers(0, bench1_field.steps))
        i = int(rng.integers(50, 550))
        x = bench1.x_grid.axes[0][i]
        cand = DT * bench1.lagrangian(np.full((len(vel), 1), x), vel) + interpolate(
            bench1.x_grid, bench1_field.values[k], x + DT * vel)
        assert bench1_field.values[k + 1, i] <= cand.min() + 1e-12


def test_argmin_ties_go_to_first_velocity(quad_L):
    prob = validate_problem(quad_L, zero_cost())
    fld = solve_dp(prob, DT, 0.05, search=VelocitySearchBox(1.0, 4))
    # zero velocity is the unique minimizer; index m
    assert np.all(fld.controls == 4)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0, 3, allow_nan=False), min_size=21, max_size=21),
       st.lists(st.floats(0, 1, allow_nan=False), min_size=21, max_size=21))
def test_monotone_in_terminal_cost(base, bump):
    xg = Grid((-1.0,), (1.0,), (21,))
    L = quadratic_lagrangian(xg, Grid((-10.0,), (10.0,), (201,)))
    phi1 = np.array(base)
    phi2 = phi1 + np.array(bump)
    box = VelocitySearchBox(5.0, 10)
    v1 = solve_dp(validate_problem(L, sampled_cost(xg, phi1)), 0.1, 0.5, search=box).values
    v2 = solve_dp(validate_problem(L, sampled_cost(xg, phi2)), 0.1, 0.5, search=box).values
    assert np.all(v1 <= v2 + 1e-12)


def test_threads_do_not_change_values(bench1):
    box = VelocitySearchBox(10.0, 40)
    a = solve_dp(bench1, DT, 0.3, search=box, threads=1)
    for n in (3, 8):
        b = solve_dp(bench1, DT, 0.3, search=box, threads=n)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.controls, b.controls)


def test_default_search_box_records_derivation(bench1):
    box = default_search_box(bench1, DT)
    assert box.m == 40 and box.u_max == pytest.approx(10.0)
    assert {"u_from_theta", "u_box", "u_from_domain", "u_max"} <= set(box.derivation)


def test_oversized_search_and_infeasible(quad_L, x_grid):
    prob = validate_problem(quad_L, zero_cost())
    with pytest.raises(ValueError):
        solve_dp(prob, 0.5, 1.0, search=VelocitySearchBox(10.0, 4))
    # drift-only running cost (u in [1, 2]) cannot reach a target on the left edge
    xg = Grid((-1.0,), (1.0,), (21,))
    ug = Grid((-2.0,), (2.0,), (41,))
    u = ug.axes[0]
    drift = sampled_lagrangian(xg, ug, np.tile(np.where(u >= 1 - 1e-12, 0.0, np.inf), (21, 1)))
    forced = BolzaProblem(drift, box_indicator([-1.0], [-0.95]), derived_witness(quad_L))
    with pytest.warns(InfeasibleEverywhere):
        solve_dp(forced, 0.1, 0.1, search=VelocitySearchBox(2.0, 2))


# ---------------------------------------------------------------- direct


def test_direct_zero_cost_constant(quad_L):
    prob = validate_problem(quad_L, zero_cost())
    cost, path = direct_minimize(prob, 1.0, [0.4], segments=8, restarts=2)
    assert cost == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(path.nodes, 0.4, atol=1e-4)


def test_direct_quartic_point_target(x_grid):
    prob = validate_problem(quartic_lagrangian(x_grid, Grid((-4.0,), (4.0,), (801,))),
                            lagrange_reduction([0.0], x_grid))
    oracle = brute_two_segment(lambda v: v**4 / 4, lambda y: np.where(np.abs(y) < 1e-9, 0.0, np.inf), 1.0, 1.0)
    assert oracle == pytest.approx(0.25, abs=1e-9)
    cost, _ = direct_minimize(prob, 1.0, [1.0], segments=16, restarts=2)
    assert cost == pytest.approx(0.25, abs=1e-3)


def test_direct_point_target_straight_line(bench2):
    cost, path = direct_minimize(bench2, 1.0, [1.0], segments=16, restarts=2)
    assert cost == pytest.approx(0.5, abs=1e-3)
    assert np.max(np.abs(path.nodes[:, 0] - (1 - path.times))) <= 1e-3


def test_direct_potential_against_fine_dp(x_grid, u_grid):
    prob = validate_problem(quadratic_lagrangian(x_grid, u_grid, potential=1.0), zero_cost())
    cost, _ = direct_minimize(prob, 1.0, [1.0], segments=64, restarts=1)
    assert cost == pytest.approx(POTENTIAL_ORACLE, abs=1e-2)


@pytest.mark.parametrize("t, x", [(1.0, 2.0), (0.5, 0.3), (1.0, -0.8)])
def test_direct_upper_bounds_dp(bench1, bench1_field, t, x):
    cost, path = direct_minimize(bench1, t, [x], segments=16, restarts=2)
    assert cost == pytest.approx(eval_action(path, bench1))
    assert cost >= bench1_field(np.array([[t, x]]))[0] - 0.02


# --------------------------------------------------------- reconstruction


def test_reconstruct_point_target(bench2, bench2_field):
    path = reconstruct_trajectory(bench2_field, bench2, 1.0, [1.0])
    assert np.max(np.abs(path.nodes[:, 0] - (1 - path.times))) <= 0.05


def test_reconstruct_zero_cost_constant(quad_L):
    prob = validate_problem(quad_L, zero_cost())
    fld = solve_dp(prob, DT, 0.2, search=VelocitySearchBox(10.0, 40))
    path = reconstruct_trajectory(fld, prob, 0.2, [0.7])
    assert np.all(path.nodes == 0.7)


def test_reconstruct_stuck_on_infinite_value(quad_L, x_grid):
    prob = validate_problem(quad_L, lagrange_reduction([0.0], x_grid))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fld = solve_dp(prob, DT, 0.1, search=VelocitySearchBox(2.0, 4))
    assert is_inf(fld(np.array([[0.1, 2.5]]))[0])
    with pytest.raises(Stuck):
        reconstruct_trajectory(fld, prob, 0.1, [2.5])


def test_reconstruct_hypograph_inequality(bench1, bench1_field):
    eps = 10 * (DT + DX)
    for x in (-1.5, -0.3, 0.2, 1.1, 2.5):
        path = reconstruct_trajectory(bench1_field, bench1, 1.0, [x])
        w0 = bench1_field(np.array([[1.0, x]]))[0]
        run = np.concatenate([[0.0], np.cumsum(DT * bench1.lagrangian(path.nodes[:-1], path.velocities))])
        s = path.times
        w = bench1_field(np.column_stack([1.0 - s, path.nodes]))
        assert np.all(w >= w0 - run - eps * s - 1e-12)


def test_reconstructed_cost_matches_value(bench1, bench1_field):
    path = reconstruct_trajectory(bench1_field, bench1, 1.0, [0.6])
    # rollout re-optimizes off-grid, so it differs by interpolation error only
    assert eval_action(path, bench1) == pytest.approx(bench1_field(np.array([[1.0, 0.6]]))[0], abs=DT + DX)


def test_quartic_value_point(x_grid):
    prob = validate_problem(quartic_lagrangian(x_grid, Grid((-4.0,), (4.0,), (801,))),
                            expression_cost("0*x"))
    assert hopf_lax_oracle(prob, 1.0, [1.0]) == 0.0
