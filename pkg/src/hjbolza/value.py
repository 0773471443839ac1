"""Value functions by semi-Lagrangian dynamic programming, plus two oracles.

The DP recursion is

    V_0 = phi,   V_{k+1}(x) = min_v [ h L(x, v) + V_k(x + h v) ]

over a uniform velocity sample, with multilinear interpolation of ``V_k``
(+inf propagates, out-of-box queries are +inf). The oracles are a Hopf-Lax
grid minimum for x-independent Lagrangians and a direct minimization of the
discretized action over piecewise-linear paths.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY, Grid, interpolate, interpolation_plan, sat_add
from .problem import BolzaProblem, TrajectoryPath, eval_action

logger = logging.getLogger(__name__)


class EmptySearch(ValueError):
    """Every sampled velocity leaves the x-box from some node."""


class InfeasibleEverywhere(UserWarning):
    pass


class NoFiniteCost(ValueError):
    pass


class Stuck(ValueError):
    """No sampled velocity gives a finite cost-to-go."""


@dataclass(frozen=True)
class VelocitySearchBox:
    """Uniform velocity sample ``[-u_max, u_max]^n`` with ``2m+1`` points per axis."""

    u_max: float
    m: int
    dim: int = 1
    derivation: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.u_max) and self.u_max > 0):
            raise ValueError(f"u_max must be positive and finite, got {self.u_max}")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    def velocities(self) -> np.ndarray:
        """``(K, n)`` velocities in lexicographic index order."""
        axis = np.linspace(-self.u_max, self.u_max, 2 * self.m + 1)
        return Grid((-self.u_max,) * self.dim, (self.u_max,) * self.dim,
                    (2 * self.m + 1,) * self.dim).points() if self.dim > 1 else axis[:, None]


def default_search_box(problem: BolzaProblem, h: float, m: Optional[int] = None,
                       x_grid: Optional[Grid] = None) -> VelocitySearchBox:
    """Velocity bound from coercivity: largest U with ``theta(U) <= (sup phi + 1) / h``.

    Capped by the u-box of the Lagrangian and by the half-width of the x-box
    divided by ``h``.
    """
    x_grid = x_grid or problem.x_grid
    dim = x_grid.ndim
    if m is None:
        m = 40 if dim == 1 else 12
    phi = problem.terminal.on_grid(x_grid)
    finite = phi[phi < INFINITY_THRESHOLD]
    gap = float(finite.max()) if finite.size else 0.0
    bound = (gap + 1.0) / h
    r = problem.witness.theta.grid.axes[0]
    th = problem.witness.theta.values.ravel()
    ok = r[th <= bound]
    u_theta = float(ok.max()) if ok.size else float(r[1])
    u_box = float(np.min(np.abs(np.concatenate([problem.lagrangian.u_grid.lower,
                                                problem.lagrangian.u_grid.upper]))))
    half_width = float(np.min((np.array(x_grid.upper) - np.array(x_grid.lower)) / 2))
    u_max = min(u_theta, u_box, half_width / h)
    derivation = {
        "value_gap": gap,
        "theta_bound": bound,
        "u_from_theta": u_theta,
        "u_box": u_box,
        "u_from_domain": half_width / h,
        "u_max": u_max,
    }
    return VelocitySearchBox(u_max, m, dim, derivation)


@dataclass(frozen=True)
class ValueField:
    """``V_k(x)`` on a uniform time grid ``t_k = k h`` and an x-grid.

    ``values`` has shape ``(M+1, *x_grid.shape)``. Calling the field with
    points ``(N, 1+n)`` of ``(t, x)`` interpolates multilinearly.
    """

    h: float
    x_grid: Grid
    values: np.ndarray
    provenance: str = "dp"
    velocities: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def t_final(self) -> float:
        return self.h * self.steps

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.steps + 1)

    @property
    def grid(self) -> Grid:
        t_grid = Grid((0.0,), (self.t_final,), (self.steps + 1,))
        return t_grid.product(self.x_grid)

    @property
    def resolution(self) -> float:
        return float(min(self.h, *self.x_grid.spacing))

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return interpolate(self.grid, self.values, pts)

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    def time_index(self, t: float) -> int:
        k = int(round(t / self.h))
        if abs(k * self.h - t) > 1e-9 or not 0 <= k <= self.steps:
            raise ValueError(f"t={t} is not a node of the time grid (h={self.h})")
        return k


def _dp_step(prev: np.ndarray, plan, cost: np.ndarray, rows: slice):
    n_v = cost.shape[1]
    cand = plan.apply(prev).reshape(-1, n_v)
    total = sat_add(cost[rows], cand)
    arg = np.argmin(total, axis=1)
    best = total[np.arange(len(arg)), arg]
    return best, arg


def solve_dp(problem: BolzaProblem, h: float, t_final: float, x_grid: Optional[Grid] = None,
             search: Optional[VelocitySearchBox] = None, threads: int = 1) -> ValueField:
    """Semi-Lagrangian dynamic programming for the value function.

    Ties in the velocity minimization go to the smallest velocity index.
    Nodes are split into contiguous blocks for ``threads`` workers; each
    node's minimum is computed independently, so the output does not depend
    on the thread count.
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    x_grid = x_grid or problem.x_grid
    search = search or default_search_box(problem, h, x_grid=x_grid)
    half_width = float(np.min((np.array(x_grid.upper) - np.array(x_grid.lower)) / 2))
    if search.u_max * h > half_width * (1 + 1e-12):
        raise ValueError(f"u_max*h={search.u_max * h:g} exceeds the x-box half-width {half_width:g}")
    steps = int(round(t_final / h))
    if abs(steps * h - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of h={h}")

    x = x_grid.points()
    vel = search.velocities()
    n_x, n_v = len(x), len(vel)
    feet = (x[:, None, :] + h * vel[None, :, :]).reshape(-1, x_grid.ndim)
    inside = x_grid.contains(feet, tol=1e-9 * max(x_grid.spacing)).reshape(n_x, n_v)
    if np.any(~inside.any(axis=1)):
        raise EmptySearch("every sampled velocity leaves the x-box from some node")

    xx = np.repeat(x[:, None, :], n_v, axis=1)
    vv = np.repeat(vel[None, :, :], n_x, axis=0)
    cost = h * problem.lagrangian(xx, vv)

    n_blocks = max(1, min(threads, n_x))
    bounds = np.linspace(0, n_x, n_blocks + 1).astype(int)
    blocks = [slice(bounds[i], bounds[i + 1]) for i in range(n_blocks)]
    plans = [interpolation_plan(x_grid, feet[b.start * n_v:b.stop * n_v]) for b in blocks]

    values = np.empty((steps + 1, n_x))
    controls = np.empty((steps, n_x), dtype=np.int32)
    values[0] = problem.terminal.on_grid(x_grid).ravel()
    pool = ThreadPoolExecutor(max_workers=n_blocks) if n_blocks > 1 else None
    try:
        for k in range(steps):
            prev = values[k]
            if pool is None:
                parts = [_dp_step(prev, plans[0], cost, blocks[0])]
            else:
                parts = list(pool.map(lambda i: _dp_step(prev, plans[i], cost, blocks[i]),
                                      range(n_blocks)))
            values[k + 1] = np.concatenate([p[0] for p in parts])
            controls[k] = np.concatenate([p[1] for p in parts])
    finally:
        if pool is not None:
            pool.shutdown()
    values[values >= INFINITY_THRESHOLD] = PLUS_INFINITY
    if np.all(values[-1] >= INFINITY_THRESHOLD):
        warnings.warn("value function is +inf at every node at the final time", InfeasibleEverywhere,
                      stacklevel=2)
    return ValueField(h, x_grid, values.reshape(steps + 1, *x_grid.shape), "dp", vel,
                      controls.reshape(steps, *x_grid.shape))


def hopf_lax_oracle(problem: BolzaProblem, t: float, x, y_grid: Optional[Grid] = None) -> float:
    """``min_y [ t L((y - x)/t) + phi(y) ]`` over the nodes of ``y_grid``.

    Exact for x-independent convex Lagrangians, where straight lines are
    optimal.
    """
    L = problem.lagrangian
    if not L.x_independent:
        raise ValueError("the Hopf-Lax oracle needs an x-independent Lagrangian")
    if t <= 0:
        raise ValueError("t must be positive")
    y_grid = y_grid or problem.x_grid
    y = y_grid.points()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    running = t * L(np.zeros_like(y), (y - x) / t)
    total = sat_add(running, problem.terminal(y))
    return float(np.min(total))


def hopf_lax_field(problem: BolzaProblem, times, x_grid: Grid, y_grid: Optional[Grid] = None):
    """Hopf-Lax oracle on a whole ``(t, x)`` grid, shape ``(len(times), n_x)``."""
    y_grid = y_grid or x_grid
    y = y_grid.points()
    phi = problem.terminal(y)
    x = x_grid.points()
    out = np.empty((len(times), len(x)))
    L = problem.lagrangian
    for k, t in enumerate(times):
        if t <= 0:
            out[k] = problem.terminal(x)
            continue
        for i in range(len(x)):
            running = t * L(np.zeros_like(y), (y - x[i]) / t)
            out[k, i] = np.min(sat_add(running, phi))
    return out


# ---------------------------------------------------------------- direct


def _node_cost(nodes: np.ndarray, j: int, problem: BolzaProblem, h: float, last_free: bool) -> float:
    """Action terms that depend on node ``j``."""
    L = problem.lagrangian
    total = 0.0
    prev_v = (nodes[j] - nodes[j - 1]) / h
    total += h * float(L(nodes[j - 1][None, :], prev_v[None, :])[0])
    if j + 1 < len(nodes):
        next_v = (nodes[j + 1] - nodes[j]) / h
        total += h * float(L(nodes[j][None, :], next_v[None, :])[0])
    elif last_free:
        total += float(problem.terminal(nodes[j][None, :])[0])
    return total


def direct_minimize(problem: BolzaProblem, t: float, x, segments: int = 32, restarts: int = 4,
                    seed: int = 0, sweeps: int = 20) -> tuple[float, TrajectoryPath]:
    """Minimize the discretized action over piecewise-linear paths from ``x``.

    Coordinate descent over the free nodes (bounded scalar searches inside
    the x-box), a joint quasi-Newton polish, and a last descent sweep.
    With a point-indicator terminal cost the endpoint is pinned to the
    target node. The returned cost is an upper bound on the true value.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    h = t / segments
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = problem.x_grid
    lo, hi = np.array(grid.lower), np.array(grid.upper)
    terminal = problem.terminal
    pinned = None
    if terminal.kind == "point":
        pinned = grid.points()[grid.nearest_index(terminal.point[None, :])[0]]
    rng = np.random.default_rng(seed)
    n = len(x)
    free = slice(1, segments) if pinned is not None else slice(1, segments + 1)

    def action(nodes):
        path = TrajectoryPath(0.0, t, h, nodes)
        return eval_action(path, problem)

    def flat_action(z, base):
        nodes = base.copy()
        nodes[free] = z.reshape(-1, n)
        val = action(nodes)
        return val if val < INFINITY_THRESHOLD else 1e12

    best_cost, best_nodes = PLUS_INFINITY, None
    for r in range(max(1, restarts)):
        end = pinned if pinned is not None else x
        s = np.linspace(0.0, 1.0, segments + 1)[:, None]
        nodes = x + s * (end - x)
        if r > 0:
            scale = 0.25 * (hi - lo) / 2
            nodes[free] += rng.normal(0.0, 1.0, nodes[free].shape) * scale * np.sin(np.pi * s[free])
        nodes = np.clip(nodes, lo, hi)
        nodes[0] = x
        if pinned is not None:
            nodes[-1] = pinned
        last_free = pinned is None
        for _ in range(sweeps):
            for j in range(1, segments + (1 if last_free else 0)):
                for a in range(n):
                    def f(val, j=j, a=a):
                        trial = nodes.copy()
                        trial[j, a] = val
                        return _node_cost(trial, j, problem, h, last_free)

                    res = minimize_scalar(f, bounds=(lo[a], hi[a]), method="bounded",
                                          options={"xatol": 1e-10})
                    if res.fun <= f(nodes[j, a]):
                        nodes[j, a] = res.x
        z0 = nodes[free].ravel()
        if z0.size:
            bounds = [(lo[a], hi[a]) for _ in range(len(z0) // n) for a in range(n)]
            res = minimize(flat_action, z0, args=(nodes,), method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10})
            if res.fun <= flat_action(z0, nodes):
                nodes[free] = res.x.reshape(-1, n)
        cost = action(nodes)
        logger.debug("direct_minimize restart %d: cost %.6g", r, cost)
        if cost < best_cost:
            best_cost, best_nodes = cost, nodes.copy()
    if best_nodes is None or best_cost >= INFINITY_THRESHOLD:
        raise NoFiniteCost("every restart ended with infinite action")
    return best_cost, TrajectoryPath(0.0, t, h, best_nodes)


# ---------------------------------------------------------- reconstruction


def reconstruct_trajectory(field: ValueField, problem: BolzaProblem, t: float, x) -> TrajectoryPath:
    """Greedy rollout of the DP minimization from ``(t, x)`` down to time 0.

    At each step the argmin over the stored velocity sample is recomputed at
    the current (possibly off-grid) position.
    """
    if field.velocities is None:
        raise ValueError("field carries no velocity sample (not a DP field)")
    k = field.time_index(t)
    y = np.atleast_1d(np.asarray(x, dtype=float))
    start = field(np.concatenate([[t], y])[None, :])[0]
    if start >= INFINITY_THRESHOLD:
        raise Stuck(f"V({t}, {y.tolist()}) is +inf")
    vel = field.velocities
    h = field.h
    nodes = [y.copy()]
    chosen = []
    grid = field.x_grid
    for j in range(k, 0, -1):
        feet = y[None, :] + h * vel
        cost = h * problem.lagrangian(np.repeat(y[None, :], len(vel), axis=0), vel)
        total = sat_add(cost, interpolate(grid, field.values[j - 1], feet))
        i = int(np.argmin(total))
        if total[i] >= INFINITY_THRESHOLD:
            raise Stuck(f"no finite continuation at step {k - j} from {y.tolist()}")
        y = feet[i]
        chosen.append(i)
        nodes.append(y.copy())
    if k == 0:
        nodes.append(y.copy())
        path = TrajectoryPath(0.0, h, h, np.array(nodes))
    else:
        path = TrajectoryPath(0.0, t, h, np.array(nodes))
    path.info["velocity_indices"] = chosen
    return path
