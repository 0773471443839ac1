"""Bolza problem instances: Lagrangians, terminal costs, trajectories and actions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY, Grid, clean, interpolate, sat_add
from .transform import (
    CoercivityWitness,
    SampledFunction,
    biconjugate,
    check_coercivity,
    derived_witness,
)


class ValidationFailed(ValueError):
    """A problem invariant does not hold; ``invariant`` names which one."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class OutOfDomain(ValueError):
    pass


_NUMPY_NAMES = {
    name: getattr(np, name)
    for name in (
        "abs", "sqrt", "exp", "log", "sin", "cos", "tan", "tanh", "cosh", "sinh",
        "minimum", "maximum", "where", "pi", "sign", "floor", "ceil", "clip", "inf",
    )
}


def compile_expression(expr: str, variables: tuple[str, ...]) -> Callable:
    """Compile a numpy expression such as ``"0.5*u**2 + x**2"``.

    Multi-dimensional arguments are exposed as ``x`` (first component) and
    ``x1, x2, ...``; ``norm2(v)`` is the squared Euclidean norm.
    """
    code = compile(expr, "<expression>", "eval")

    def func(*args):
        env = dict(_NUMPY_NAMES)
        env["norm2"] = lambda v: np.sum(np.atleast_1d(v) ** 2, axis=0)
        for name, arr in zip(variables, args):
            arr = np.asarray(arr, dtype=float)
            if arr.ndim >= 2:
                comps = np.moveaxis(arr, -1, 0)
                env[name] = comps[0] if comps.shape[0] == 1 else comps
                for i, c in enumerate(comps, start=1):
                    env[f"{name}{i}"] = c
            else:
                env[name] = arr
        with np.errstate(all="ignore"):
            out = eval(code, {"__builtins__": {}}, env)
        shape = np.broadcast(*[np.asarray(a)[..., 0] if np.ndim(a) >= 2 else np.asarray(a)
                               for a in args]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).astype(float)

    func.expression = expr
    return func


@dataclass(frozen=True)
class LagrangianModel:
    """Running cost ``L(x, u)`` with its sampling boxes.

    ``func`` takes arrays of shape ``(..., n)`` for ``x`` and ``u`` and
    returns ``(...)``. ``x_independent`` enables the Hopf-Lax oracle.
    """

    kind: str
    func: Callable
    x_grid: Grid
    u_grid: Grid
    x_independent: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if u.ndim == 0:
            u = u.reshape(1)
        return clean(self.func(x, u))

    @property
    def dim(self) -> int:
        return self.x_grid.ndim

    def slice(self, x) -> SampledFunction:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        u = self.u_grid.points()
        return SampledFunction(self.u_grid, self(np.repeat(x, len(u), axis=0), u))

    def table(self) -> np.ndarray:
        """``L`` at every (x-node, u-node) pair, shape ``(n_x, n_u)``."""
        x = self.x_grid.points()
        u = self.u_grid.points()
        xx = np.repeat(x[:, None, :], len(u), axis=1)
        uu = np.repeat(u[None, :, :], len(x), axis=0)
        return self(xx, uu)


def quadratic_lagrangian(x_grid: Grid, u_grid: Grid, scale: float = 1.0, potential: float = 0.0,
                         offset: float = 0.0) -> LagrangianModel:
    """``scale*|u|^2/2 + potential*|x|^2 + offset``."""

    def func(x, u):
        return scale * 0.5 * np.sum(u ** 2, axis=-1) + potential * np.sum(x ** 2, axis=-1) + offset

    return LagrangianModel("quadratic", func, x_grid, u_grid, x_independent=(potential == 0.0),
                           params={"scale": scale, "potential": potential, "offset": offset})


def quartic_lagrangian(x_grid: Grid, u_grid: Grid, potential: float = 0.0,
                       offset: float = 0.0) -> LagrangianModel:
    """``|u|^4/4 + potential*|x|^2 + offset``."""

    def func(x, u):
        return 0.25 * np.sum(u ** 2, axis=-1) ** 2 + potential * np.sum(x ** 2, axis=-1) + offset

    return LagrangianModel("quartic", func, x_grid, u_grid, x_independent=(potential == 0.0),
                           params={"potential": potential, "offset": offset})


def expression_lagrangian(expr: str, x_grid: Grid, u_grid: Grid,
                          x_independent: Optional[bool] = None) -> LagrangianModel:
    func = compile_expression(expr, ("x", "u"))
    if x_independent is None:
        x_independent = "x" not in compile(expr, "<expression>", "eval").co_names
    return LagrangianModel("expression", func, x_grid, u_grid, x_independent=x_independent,
                           params={"expression": expr})


def sampled_lagrangian(x_grid: Grid, u_grid: Grid, values: np.ndarray) -> LagrangianModel:
    """Lagrangian given by samples on ``x_grid x u_grid`` (multilinear in between)."""
    prod = x_grid.product(u_grid)
    vals = clean(values).reshape(prod.shape)
    n = x_grid.ndim

    def func(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x, u = np.broadcast_arrays(x, u)
        shape = x.shape[:-1]
        pts = np.concatenate([x.reshape(-1, n), u.reshape(-1, n)], axis=-1)
        return interpolate(prod, vals, pts).reshape(shape)

    indep = bool(np.all(vals == vals[(slice(0, 1),) * n]))
    return LagrangianModel("sampled", func, x_grid, u_grid, x_independent=indep)


# ----------------------------------------------------------- terminal costs


@dataclass(frozen=True)
class TerminalCost:
    """Extended-real terminal cost ``phi >= 0``.

    kinds: ``analytic`` (``func``), ``sampled`` (``grid``/``values``),
    ``point`` (indicator of the node nearest ``point`` on ``grid``) and
    ``box`` (indicator of the closed box ``[lower, upper]``).
    """

    kind: str
    func: Optional[Callable] = None
    grid: Optional[Grid] = None
    values: Optional[np.ndarray] = None
    point: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    label: str = ""

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim <= 1:
            pts = pts.reshape(-1, 1) if self._dim() == 1 else pts.reshape(1, -1)
        if self.kind == "analytic":
            return clean(self.func(pts))
        if self.kind in ("sampled", "point"):
            return interpolate(self.grid, self.values, pts)
        if self.kind == "box":
            inside = np.all((pts >= self.lower - 1e-12) & (pts <= self.upper + 1e-12), axis=-1)
            return np.where(inside, 0.0, PLUS_INFINITY)
        raise ValueError(f"unknown terminal cost kind {self.kind!r}")

    def _dim(self) -> int:
        if self.grid is not None:
            return self.grid.ndim
        if self.lower is not None:
            return len(self.lower)
        return 1

    def on_grid(self, grid: Grid) -> np.ndarray:
        return self(grid.points()).reshape(grid.shape)

    def shifted(self, offset: float) -> "TerminalCost":
        """``phi + offset`` (infinite values stay infinite)."""
        base = self

        def func(pts):
            return sat_add(base(pts), offset)

        return TerminalCost("analytic", func=func, label=f"{self.label}+{offset:g}")


def analytic_cost(func: Callable, label: str = "") -> TerminalCost:
    return TerminalCost("analytic", func=func, label=label)


def expression_cost(expr: str) -> TerminalCost:
    f = compile_expression(expr, ("x",))
    return TerminalCost("analytic", func=f, label=expr)


def zero_cost() -> TerminalCost:
    return TerminalCost("analytic", func=lambda pts: np.zeros(len(pts)), label="0")


def sampled_cost(grid: Grid, values) -> TerminalCost:
    return TerminalCost("sampled", grid=grid, values=clean(values).reshape(grid.shape), label="sampled")


def box_indicator(lower, upper) -> TerminalCost:
    return TerminalCost("box", lower=np.atleast_1d(np.asarray(lower, float)),
                        upper=np.atleast_1d(np.asarray(upper, float)), label="box")


def lagrange_reduction(z, grid: Grid) -> TerminalCost:
    """Fixed-endpoint constraint ``y(t) = z`` as a terminal cost.

    0 at the grid node nearest ``z`` (ties to the lowest index), +inf at every
    other node.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not grid.contains(z[None, :])[0]:
        raise OutOfDomain(f"target {z.tolist()} outside the x-domain")
    vals = np.full(grid.size, PLUS_INFINITY)
    vals[grid.nearest_index(z[None, :])[0]] = 0.0
    return TerminalCost("point", grid=grid, values=vals.reshape(grid.shape), point=z,
                        label=f"indicator{z.tolist()}")


def check_lsc(phi: TerminalCost, points, radii=(0.1, 0.05, 0.025, 0.0125), samples: int = 41,
              tol: float = 1e-9) -> np.ndarray:
    """Refinement test of lower semicontinuity at ``points``.

    At each shrinking radius the minimum of ``phi`` over a lattice around the
    point is taken; ``phi(x)`` must not exceed the finest-radius minimum.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ok = np.ones(len(points), dtype=bool)
    base = phi(points)
    for k, x in enumerate(points):
        mins = []
        for r in radii:
            axes = [np.linspace(-r, r, samples)] * len(x)
            offs = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
            mins.append(np.min(phi(x + offs)))
        finest = mins[-1]
        ok[k] = base[k] <= finest + tol or finest >= INFINITY_THRESHOLD
    return ok


# ------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class TrajectoryPath:
    """Piecewise-linear path with uniform step ``h``; ``nodes`` is ``(N+1, n)``."""

    t_start: float
    t_end: float
    h: float
    nodes: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if self.h <= 0:
            raise ValueError("time step must be positive")
        if len(nodes) < 2:
            raise ValueError("a path needs at least two nodes")
        expected = self.t_start + self.h * (len(nodes) - 1)
        if abs(expected - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError(f"t_end={self.t_end} inconsistent with {len(nodes)} nodes of step {self.h}")
        object.__setattr__(self, "nodes", nodes)

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.nodes, axis=0) / self.h

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(len(self.nodes))

    def concat(self, other: "TrajectoryPath") -> "TrajectoryPath":
        if not np.allclose(self.nodes[-1], other.nodes[0]) or abs(self.h - other.h) > 1e-15:
            raise ValueError("paths do not share an endpoint and step")
        return TrajectoryPath(self.t_start, self.t_end + (other.t_end - other.t_start), self.h,
                              np.concatenate([self.nodes, other.nodes[1:]]))


@dataclass(frozen=True)
class BolzaProblem:
    lagrangian: LagrangianModel
    terminal: TerminalCost
    witness: CoercivityWitness

    @property
    def x_grid(self) -> Grid:
        return self.lagrangian.x_grid

    @property
    def dim(self) -> int:
        return self.lagrangian.dim

    def with_terminal(self, terminal: TerminalCost) -> "BolzaProblem":
        return BolzaProblem(self.lagrangian, terminal, self.witness)


def running_cost(path: TrajectoryPath, L: LagrangianModel) -> np.ndarray:
    """Left-endpoint running costs ``h * L(y_k, u_k)`` per segment."""
    return path.h * L(path.nodes[:-1], path.velocities)


def eval_action(path: TrajectoryPath, problem: BolzaProblem) -> float:
    """``sum_k h L(y_k, u_k) + phi(y_end)`` with saturating +inf."""
    total = float(np.sum(running_cost(path, problem.lagrangian)))
    end = float(problem.terminal(path.nodes[-1][None, :])[0])
    return float(sat_add(total, end))


def validate_problem(L: LagrangianModel, phi: TerminalCost,
                     witness: Optional[CoercivityWitness] = None) -> BolzaProblem:
    """Check nonnegativity, convexity in u and coercivity; raise :class:`ValidationFailed`."""
    table = L.table()
    if np.any(table < 0):
        i, j = np.unravel_index(np.argmin(table), table.shape)
        raise ValidationFailed(
            "nonnegativity",
            f"L={table[i, j]:.6g} < 0 at x={L.x_grid.points()[i].tolist()}, u={L.u_grid.points()[j].tolist()}",
        )
    x_pts = L.x_grid.points()
    for i in range(len(x_pts)):
        sl = L.slice(x_pts[i])
        if sl.grid.ndim == 1:
            env = biconjugate(sl)
            scale = max(1.0, float(np.max(np.abs(sl.values[sl.finite]))))
            if np.max(np.abs(np.where(sl.finite, sl.values - env.values, 0.0))) > 1e-8 * scale:
                raise ValidationFailed("convexity", f"L(x,.) not convex at x={x_pts[i].tolist()}")
        else:
            from .transform import is_midpoint_convex

            if not is_midpoint_convex(sl, tol=1e-9):
                raise ValidationFailed("convexity", f"L(x,.) not convex at x={x_pts[i].tolist()}")
    witness = witness or derived_witness(L)
    report = check_coercivity(L, witness)
    if not report.passed:
        raise ValidationFailed("coercivity", report.summary())
    phi_vals = phi.on_grid(L.x_grid)
    if np.any(phi_vals < 0):
        raise ValidationFailed("nonnegativity", "terminal cost takes negative values")
    if np.all(phi_vals >= INFINITY_THRESHOLD):
        raise ValidationFailed("terminal", "terminal cost is +inf on the whole x-grid")
    return BolzaProblem(L, phi, witness)


def _vec(values, name: str) -> tuple:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"'{name}' must be a list of numbers") from exc


def build_problem(desc: Mapping) -> BolzaProblem:
    """Validated problem from a plain description.

    Keys: ``lagrangian`` (quadratic | quartic | expression) with ``scale``,
    ``potential``, ``offset`` or ``expression``; the boxes ``x_lower``,
    ``x_upper``, ``dx``, ``u_lower``, ``u_upper``, ``u_points``; and a
    ``terminal`` table with ``kind`` (expression | zero | point | box) and an
    optional ``offset``.

    Raises:
        ValidationFailed: a problem invariant does not hold.
        ValueError: the description is malformed.
    """
    lo, hi = _vec(desc.get("x_lower", [-3.0]), "x_lower"), _vec(desc.get("x_upper", [3.0]), "x_upper")
    ulo, uhi = _vec(desc.get("u_lower", [-10.0]), "u_lower"), _vec(desc.get("u_upper", [10.0]), "u_upper")
    if not len(lo) == len(hi) == len(ulo) == len(uhi):
        raise ValueError("x and u bounds must have the same dimension")
    x_grid = Grid.from_spacing(lo, hi, float(desc.get("dx", 0.01)))
    u_grid = Grid(ulo, uhi, (int(desc.get("u_points", 401)),) * len(lo))
    kind = desc.get("lagrangian", "quadratic")
    if kind == "quadratic":
        L = quadratic_lagrangian(x_grid, u_grid, desc.get("scale", 1.0), desc.get("potential", 0.0),
                                 desc.get("offset", 0.0))
    elif kind == "quartic":
        L = quartic_lagrangian(x_grid, u_grid, desc.get("potential", 0.0), desc.get("offset", 0.0))
    elif kind == "expression":
        if "expression" not in desc:
            raise ValueError("an expression Lagrangian needs 'expression'")
        L = expression_lagrangian(desc["expression"], x_grid, u_grid, desc.get("x_independent"))
    else:
        raise ValueError(f"unknown lagrangian kind {kind!r}")
    t = dict(desc.get("terminal", {}))
    tk = t.get("kind", "zero")
    if tk == "expression":
        phi = expression_cost(t.get("expression", "0*x"))
    elif tk == "zero":
        phi = zero_cost()
    elif tk == "point":
        phi = lagrange_reduction(_vec(t.get("point", [0.0] * x_grid.ndim), "terminal.point"), x_grid)
    elif tk == "box":
        phi = box_indicator(_vec(t["lower"], "terminal.lower"), _vec(t["upper"], "terminal.upper"))
    else:
        raise ValueError(f"unknown terminal kind {tk!r}")
    if t.get("offset", 0.0):
        phi = phi.shifted(t["offset"])
    return validate_problem(L, phi)
