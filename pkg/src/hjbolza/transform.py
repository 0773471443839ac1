"""Discrete Legendre-Fenchel conjugation and Hamiltonian tables.

The 1D conjugate is computed on the lower convex hull of the finite samples
(linear-time hull, then a sorted merge of the dual points against the hull
slopes). Separable N-D functions factor per axis; anything else falls back
to a direct max over the sample.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY, Grid, clean, interpolate

if TYPE_CHECKING:
    from .problem import LagrangianModel

CONVEXITY_TOL = 1e-9


class AllInfinite(ValueError):
    """The sampled function is identically +inf."""


class NotConvexInU(ValueError):
    """A Lagrangian slice failed the biconjugate equality test."""


class UnboundedConjugate(UserWarning):
    """The conjugate's maximizer sits on the edge of the sampled box."""


@dataclass(frozen=True)
class SampledFunction:
    """Extended-real function sampled on a uniform grid.

    ``factors`` marks a separable function ``f(u) = sum_i f_i(u_i)``; when
    present the conjugate factorizes per axis.
    """

    grid: Grid
    values: np.ndarray
    factors: Optional[tuple["SampledFunction", ...]] = None

    def __post_init__(self):
        vals = clean(self.values).reshape(self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, func, grid: Grid) -> "SampledFunction":
        pts = grid.points()
        arg = pts[:, 0] if grid.ndim == 1 else pts
        return cls(grid, np.asarray(func(arg), dtype=float).reshape(grid.shape))

    @classmethod
    def separable(cls, factors) -> "SampledFunction":
        factors = tuple(factors)
        grid = factors[0].grid
        total = factors[0].values.ravel()
        for f in factors[1:]:
            grid = grid.product(f.grid)
            total = np.add.outer(total, f.values.ravel()).ravel()
        total = np.where(total >= INFINITY_THRESHOLD, PLUS_INFINITY, total)
        return cls(grid, total.reshape(grid.shape), factors)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.grid.ndim == 1 and pts.ndim <= 1:
            pts = pts.reshape(-1, 1)
        return interpolate(self.grid, self.values, pts)

    @property
    def finite(self) -> np.ndarray:
        return self.values < INFINITY_THRESHOLD


@dataclass(frozen=True)
class Conjugate(SampledFunction):
    """Conjugate on a dual grid, with the maximizing primal node per dual node."""

    maximizer: np.ndarray = field(default=None)
    truncated: np.ndarray = field(default=None)


def lower_hull(u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by ``u`` (monotone chain)."""
    hull: list[int] = []
    uu = u.tolist()
    ff = f.tolist()
    for i in range(len(uu)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b unless it lies strictly below the chord a -> i
            cross = (uu[b] - uu[a]) * (ff[i] - ff[a]) - (ff[b] - ff[a]) * (uu[i] - uu[a])
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull, dtype=int)


def _legendre_1d(u: np.ndarray, f: np.ndarray, p: np.ndarray):
    """Conjugate of the points ``(u_i, f_i)`` (finite only) at arbitrary ``p``.

    Returns values and the index (into ``u``) of the maximizer; ties pick the
    smaller ``u``.
    """
    hull = lower_hull(u, f)
    hu, hf = u[hull], f[hull]
    if len(hull) == 1:
        k = np.zeros(p.shape, dtype=int)
    else:
        slopes = np.diff(hf) / np.diff(hu)
        k = np.searchsorted(slopes, p, side="left")
    return p * hu[k] - hf[k], hull[k]


def _conjugate_1d(f: SampledFunction, p_grid: Grid) -> Conjugate:
    u = f.grid.axes[0]
    finite = f.finite.ravel()
    if not finite.any():
        raise AllInfinite("function is identically +inf")
    idx = np.flatnonzero(finite)
    p = p_grid.axes[0]
    vals, arg = _legendre_1d(u[idx], f.values.ravel()[idx], p)
    arg = idx[arg]
    truncated = (arg == 0) | (arg == len(u) - 1)
    return Conjugate(p_grid, vals, maximizer=arg, truncated=truncated)


def _conjugate_direct(f: SampledFunction, p_grid: Grid, chunk: int = 512) -> Conjugate:
    finite = f.finite.ravel()
    if not finite.any():
        raise AllInfinite("function is identically +inf")
    idx = np.flatnonzero(finite)
    u = f.grid.points()[idx]
    fu = f.values.ravel()[idx]
    p = p_grid.points()
    vals = np.empty(len(p))
    arg = np.empty(len(p), dtype=int)
    for start in range(0, len(p), chunk):
        block = p[start:start + chunk] @ u.T - fu
        a = np.argmax(block, axis=1)
        arg[start:start + chunk] = a
        vals[start:start + chunk] = block[np.arange(len(a)), a]
    arg = idx[arg]
    multi = np.array(np.unravel_index(arg, f.grid.shape)).T
    truncated = np.any((multi == 0) | (multi == np.array(f.grid.counts) - 1), axis=1)
    return Conjugate(p_grid, vals.reshape(p_grid.shape), maximizer=arg,
                     truncated=truncated.reshape(p_grid.shape))


def conjugate(f: SampledFunction, p_grid: Grid, warn: bool = True) -> Conjugate:
    """Discrete conjugate ``f*(p) = max_u (<p, u> - f(u))`` over the grid nodes.

    Emits :class:`UnboundedConjugate` when some maximizer lies on the edge of
    the u-box, meaning the box truncates the supremum there.
    """
    if p_grid.ndim != f.grid.ndim:
        raise ValueError("dual grid dimension differs from the primal grid")
    if f.grid.ndim == 1:
        out = _conjugate_1d(f, p_grid)
    elif f.factors is not None:
        parts = []
        for i, fac in enumerate(f.factors):
            sub = Grid((p_grid.lower[i],), (p_grid.upper[i],), (p_grid.counts[i],))
            parts.append(_conjugate_1d(fac, sub))
        vals = parts[0].values.ravel()
        trunc = parts[0].truncated.ravel()
        for part in parts[1:]:
            vals = np.add.outer(vals, part.values.ravel()).ravel()
            trunc = np.logical_or.outer(trunc, part.truncated.ravel()).ravel()
        arg_multi = np.meshgrid(*[part.maximizer for part in parts], indexing="ij")
        arg = np.ravel_multi_index(tuple(a.ravel() for a in arg_multi), f.grid.shape)
        out = Conjugate(p_grid, vals.reshape(p_grid.shape), maximizer=arg,
                        truncated=trunc.reshape(p_grid.shape))
    else:
        out = _conjugate_direct(f, p_grid)
    if warn and np.any(out.truncated):
        warnings.warn(
            f"conjugate maximizer on the u-box edge at {int(np.sum(out.truncated))} dual nodes; "
            "enlarge the u-box",
            UnboundedConjugate,
            stacklevel=2,
        )
    return out


def biconjugate(f: SampledFunction, p_grid: Optional[Grid] = None) -> SampledFunction:
    """Convex envelope of the samples, evaluated at the primal nodes.

    In 1D (and per factor of a separable function) the intermediate dual
    sample is the set of hull slopes, which makes the round trip exact. A
    non-separable N-D input needs an explicit ``p_grid``.
    """
    if f.grid.ndim == 1:
        u = f.grid.axes[0]
        finite = f.finite.ravel()
        if not finite.any():
            raise AllInfinite("function is identically +inf")
        idx = np.flatnonzero(finite)
        uf, ff = u[idx], f.values.ravel()[idx]
        hull = lower_hull(uf, ff)
        if len(hull) == 1:
            dual_p = np.array([0.0])
        else:
            dual_p = np.diff(ff[hull]) / np.diff(uf[hull])
        dual_vals, _ = _legendre_1d(uf, ff, dual_p)
        inside = (u >= uf[0]) & (u <= uf[-1])
        out = np.full(u.shape, PLUS_INFINITY)
        if len(hull) == 1:
            out[idx] = ff
        else:
            # conjugate of the dual points (p_k, f*(p_k)) at every primal node
            back, _ = _legendre_1d(dual_p, dual_vals, u[inside])
            out[inside] = back
        return SampledFunction(f.grid, out)
    if f.factors is not None:
        return SampledFunction.separable(biconjugate(fac) for fac in f.factors)
    if p_grid is None:
        raise ValueError("non-separable N-D biconjugate needs an explicit p_grid")
    fstar = _conjugate_direct(f, p_grid)
    back = _conjugate_direct(SampledFunction(p_grid, fstar.values), f.grid)
    return SampledFunction(f.grid, back.values)


def is_midpoint_convex(f: SampledFunction, tol: float = CONVEXITY_TOL) -> bool:
    """``f(u_{i+1}) <= (f(u_i) + f(u_{i+2})) / 2 + tol`` along every axis."""
    vals = f.values
    for axis in range(vals.ndim):
        n = vals.shape[axis]
        a = np.take(vals, range(0, n - 2), axis=axis)
        m = np.take(vals, range(1, n - 1), axis=axis)
        b = np.take(vals, range(2, n), axis=axis)
        ends_finite = (a < INFINITY_THRESHOLD) & (b < INFINITY_THRESHOLD)
        if np.any(ends_finite & (m > 0.5 * (a + b) + tol)):
            return False
    return True


# ---------------------------------------------------------------- coercivity


@dataclass(frozen=True)
class CoercivityWitness:
    """Radial minorant ``theta(|u|)`` of the Lagrangian, sampled on ``[0, r_max]``."""

    theta: SampledFunction
    horizon: float = 0.0

    @classmethod
    def from_callable(cls, func, r_max: float, n: int = 401, horizon: float = 0.0):
        return cls(SampledFunction.from_callable(func, Grid((0.0,), (r_max,), (n,))), horizon)

    @property
    def r_max(self) -> float:
        return self.theta.grid.upper[0]

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        if np.any(r > self.r_max * (1 + 1e-12)):
            raise ValueError(f"witness sampled up to {self.r_max}, queried at {float(r.max())}")
        return np.interp(r, self.theta.grid.axes[0], self.theta.values.ravel())

    def conjugate_at(self, p) -> np.ndarray:
        """``theta*(p) = sup_u <p,u> - theta(|u|)`` for the radial extension."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        norms = np.linalg.norm(p, axis=-1)
        r = self.theta.grid.axes[0]
        th = self.theta.values.ravel()
        vals, _ = _legendre_1d(r, th, norms)
        return vals


@dataclass
class CoercivityReport:
    passed: bool
    violations: list
    tail_radii: list
    tail_ratios: list
    ratio_increasing: bool

    def summary(self) -> str:
        if self.passed:
            return "coercivity ok"
        parts = []
        if self.violations:
            x, u, gap = self.violations[0]
            parts.append(f"{len(self.violations)} nodes with L < theta (first x={x}, u={u}, gap={gap:.3g})")
        if not self.ratio_increasing:
            parts.append("theta(r)/r does not increase at the tail (growth is not superlinear)")
        return "; ".join(parts)


def check_coercivity(L: "LagrangianModel", witness: CoercivityWitness, tol: float = 1e-12,
                     tail: int = 5) -> CoercivityReport:
    """Check ``L(x,u) >= theta(|u|)`` on the shared u-grid and superlinear tail growth."""
    table = L.table()  # (n_x, n_u)
    u_pts = L.u_grid.points()
    theta = witness(np.linalg.norm(u_pts, axis=-1))
    gap = table - theta[None, :]
    bad = np.argwhere(gap < -tol)
    x_pts = L.x_grid.points()
    violations = [
        (x_pts[i].tolist(), u_pts[j].tolist(), float(gap[i, j])) for i, j in bad[:100]
    ]
    r = witness.theta.grid.axes[0]
    th = witness.theta.values.ravel()
    keep = (r > 0) & (r >= witness.horizon)
    radii = r[keep][-tail:]
    ratios = th[keep][-tail:] / radii
    increasing = bool(len(ratios) >= 2 and np.all(np.diff(ratios) > 1e-12))
    passed = not violations and increasing
    return CoercivityReport(passed, violations, radii.tolist(), ratios.tolist(), increasing)


def derived_witness(L: "LagrangianModel", n: Optional[int] = None) -> CoercivityWitness:
    """Best radial convex minorant visible on the samples.

    ``theta(r) = min {L(x,u) : |u| >= r}`` (a nondecreasing minorant), then
    convexified by the biconjugate. The default radial grid has half the
    u-spacing so 1D u-nodes are radial nodes; any residual overshoot of the
    interpolated witness above ``L`` is removed by a downward shift.
    """
    table = L.table()
    norms = np.linalg.norm(L.u_grid.points(), axis=-1)
    col_min = table.min(axis=0)
    r_max = float(np.max(np.abs(np.concatenate([L.u_grid.lower, L.u_grid.upper]))))
    if n is None:
        n = max(201, int(round(2 * r_max / float(np.min(L.u_grid.spacing)))) + 1)
    radii = np.linspace(0.0, r_max, n)
    order = np.argsort(norms)
    sorted_norms = norms[order]
    # suffix minima over |u| >= r
    suffix = np.minimum.accumulate(col_min[order][::-1])[::-1]
    pos = np.searchsorted(sorted_norms, radii - 1e-12, side="left")
    vals = np.where(pos < len(suffix), suffix[np.minimum(pos, len(suffix) - 1)], PLUS_INFINITY)
    vals = np.maximum(vals, 0.0)
    theta = biconjugate(SampledFunction(Grid((0.0,), (r_max,), (n,)), vals))
    fin = col_min < INFINITY_THRESHOLD
    over = np.interp(norms[fin], radii, theta.values.ravel()) - col_min[fin]
    shift = float(max(0.0, over.max())) if over.size else 0.0
    if shift > 0:
        theta = SampledFunction(theta.grid, np.where(theta.finite, theta.values - shift, theta.values))
    return CoercivityWitness(theta, horizon=0.0)


# --------------------------------------------------------------- Hamiltonian


class OutOfTable(ValueError):
    """A Hamiltonian query left the tabulated p-box."""


@dataclass(frozen=True)
class HamiltonianTable:
    """``H(x, p)`` on ``x_grid x p_grid``; ``values`` has shape ``(n_x, n_p)`` (flat axes)."""

    x_grid: Grid
    p_grid: Grid
    values: np.ndarray
    lipschitz: np.ndarray
    truncated: bool = False

    @property
    def product_grid(self) -> Grid:
        return self.x_grid.product(self.p_grid)

    def __call__(self, x, p) -> np.ndarray:
        """Multilinear query; raises ``OutOfTable`` when ``p`` leaves the p-box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if len(x) == 1 and len(p) > 1:
            x = np.repeat(x, len(p), axis=0)
        elif len(p) == 1 and len(x) > 1:
            p = np.repeat(p, len(x), axis=0)
        if not np.all(self.p_grid.contains(p, tol=1e-9)):
            raise OutOfTable(f"p outside the tabulated box {self.p_grid.lower}..{self.p_grid.upper}")
        pts = np.concatenate([x, p], axis=-1)
        vals = self.values.reshape(self.product_grid.shape)
        return interpolate(self.product_grid, vals, pts)

    def check_invariants(self, L: "LagrangianModel", witness: Optional[CoercivityWitness] = None,
                         tol: float = 1e-9) -> dict:
        n_x = self.x_grid.size
        per_x = self.values.reshape(n_x, *self.p_grid.shape)
        convex = all(
            is_midpoint_convex(SampledFunction(self.p_grid, per_x[i]), tol=tol) for i in range(n_x)
        )
        l0 = L(self.x_grid.points(), np.zeros((n_x, L.u_grid.ndim)))
        lower_ok = bool(np.all(self.values >= -l0[:, None] - tol))
        upper_ok = True
        if witness is not None:
            tstar = witness.conjugate_at(self.p_grid.points())
            upper_ok = bool(np.all(self.values <= tstar[None, :] + tol))
        return {"convex_in_p": convex, "lower_bound": lower_ok, "upper_bound": upper_ok}


def hamiltonian_table(L: "LagrangianModel", x_grid: Optional[Grid] = None, p_grid: Optional[Grid] = None,
                      threads: int = 1, convexity_tol: float = 1e-8) -> HamiltonianTable:
    """Tabulate ``H(x, p) = max_u <p,u> - L(x,u)`` slice by slice.

    Each slice is validated by the biconjugate equality before conjugation.
    Slices are independent, so the thread count never changes the result.
    """
    x_grid = x_grid or L.x_grid
    if p_grid is None:
        raise ValueError("p_grid is required")
    x_pts = x_grid.points()

    def one(i):
        sl = L.slice(x_pts[i])
        env = biconjugate(sl) if sl.grid.ndim == 1 or sl.factors is not None else None
        if env is not None:
            diff = np.abs(np.where(sl.finite, sl.values - env.values, 0.0))
            if np.max(diff) > convexity_tol * max(1.0, float(np.max(np.abs(sl.values[sl.finite])))):
                raise NotConvexInU(f"L(x,.) is not convex at x={x_pts[i].tolist()}")
        elif not is_midpoint_convex(sl):
            raise NotConvexInU(f"L(x,.) is not convex at x={x_pts[i].tolist()}")
        conj = conjugate(sl, p_grid, warn=False)
        return conj.values.ravel(), bool(np.any(conj.truncated))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(x_pts))))
    else:
        rows = [one(i) for i in range(len(x_pts))]
    values = np.stack([r[0] for r in rows])
    truncated = any(r[1] for r in rows)
    if truncated:
        warnings.warn("Hamiltonian table: some maximizers sit on the u-box edge", UnboundedConjugate,
                      stacklevel=2)
    per_x = values.reshape(len(x_pts), *p_grid.shape)
    lips = []
    for i in range(len(x_pts)):
        slopes = [np.max(np.abs(np.diff(per_x[i], axis=a))) / p_grid.spacing[a]
                  for a in range(p_grid.ndim)]
        lips.append(max(slopes))
    return HamiltonianTable(x_grid, p_grid, values, np.array(lips), truncated)
