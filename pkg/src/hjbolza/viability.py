"""Viability checks for set-valued velocity maps on sampled closed sets.

Velocity maps expose a truncated sample of ``G(y) ∩ B_R`` and a support
function ``sigma(y, p) = sup_{g in G(y)} <p, g>``. The checks compare the
contingent-cone form of viability against the polar (normal-cone) form and
against the distance-descent estimate ``dist(x + h u_h, K) / h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY
from .nonsmooth import DiscreteSet, contingent_cone, polar_cone, sphere_directions
from .problem import LagrangianModel, TrajectoryPath
from .transform import HamiltonianTable


class EmptyValue(ValueError):
    pass


class TruncationViolated(ValueError):
    pass


class Escaped(RuntimeError):
    def __init__(self, message: str, step: int, path: np.ndarray):
        super().__init__(message)
        self.step = step
        self.path = path


def default_scales(h0: float = 0.1, count: int = 8) -> np.ndarray:
    return h0 * 2.0 ** -np.arange(count)


# ------------------------------------------------------------ velocity maps


class VelocityMap:
    """Set-valued map ``y -> G(y)`` with convex values."""

    dim: int
    radius: float = np.inf

    def sample(self, y: np.ndarray, radius: Optional[float] = None) -> np.ndarray:
        raise NotImplementedError

    def support(self, y, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        g = self.sample(np.asarray(y, dtype=float), radius=np.inf)
        return np.max(p @ g.T, axis=1)


class FieldMap(VelocityMap):
    """Single-valued map ``G(y) = {f(y)}``."""

    def __init__(self, func: Callable, dim: int, label: str = ""):
        self.func = func
        self.dim = dim
        self.label = label

    def sample(self, y, radius=None):
        g = np.atleast_2d(np.asarray(self.func(np.asarray(y, dtype=float)), dtype=float))
        if radius is not None and np.isfinite(radius):
            g = g[np.linalg.norm(g, axis=-1) <= radius * (1 + 1e-12)]
        return g


class SampledMap(VelocityMap):
    """``G(y)`` = convex hull of the points ``func(y)`` (shape ``(K, dim)``)."""

    def __init__(self, func: Callable, dim: int, label: str = ""):
        self.func = func
        self.dim = dim
        self.label = label

    def sample(self, y, radius=None):
        g = np.atleast_2d(np.asarray(self.func(np.asarray(y, dtype=float)), dtype=float))
        if radius is not None and np.isfinite(radius):
            g = g[np.linalg.norm(g, axis=-1) <= radius * (1 + 1e-12)]
        return g


def rotation_map() -> FieldMap:
    return FieldMap(lambda y: np.array([-y[1], y[0]]), 2, "rotation")


def outward_map() -> FieldMap:
    return FieldMap(lambda y: np.array(y, dtype=float), 2, "outward")


class EpigraphVelocityMap(VelocityMap):
    """``G(x) = {(-1, u, -L(x,u) - rho) : rho >= 0, u}`` acting on points ``(t, x, r)``.

    ``sample`` enumerates the u-grid of the Lagrangian times a rho-grid on
    ``[0, R]`` and keeps vectors of norm at most ``R``. ``support`` is exact
    in the unbounded directions: with probe ``(p_t, p_x, q)``,

    * ``q > 0``: ``-p_t + q H(x, p_x / q)``, the sup over the sampled u;
    * ``q = 0``: ``-p_t`` if ``p_x = 0``, otherwise +inf;
    * ``q < 0``: +inf (the rho-ray is unbounded in that direction).
    """

    def __init__(self, L: LagrangianModel, radius: float, rho_samples: int = 21):
        self.L = L
        self.radius = float(radius)
        self.rho_samples = rho_samples
        self.dim = L.dim + 2

    def _generators(self, y):
        x = np.asarray(y, dtype=float)[1:-1]
        u = self.L.u_grid.points()
        cost = self.L(np.repeat(x[None, :], len(u), axis=0), u)
        return u, cost

    def sample(self, y, radius=None):
        radius = self.radius if radius is None else radius
        u, cost = self._generators(y)
        rho_max = self.radius if np.isfinite(self.radius) else 1.0
        rho = np.linspace(0.0, rho_max, self.rho_samples)
        n = len(u)
        g = np.empty((n * len(rho), self.dim))
        g[:, 0] = -1.0
        g[:, 1:-1] = np.repeat(u, len(rho), axis=0)
        g[:, -1] = -(np.repeat(cost, len(rho)) + np.tile(rho, n))
        if np.isfinite(radius):
            g = g[np.linalg.norm(g, axis=-1) <= radius * (1 + 1e-12)]
        if len(g) == 0:
            raise EmptyValue(f"G(y) ∩ B_{radius} has no samples at y={np.asarray(y).tolist()}")
        return g

    def support(self, y, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        u, cost = self._generators(y)
        p_t, p_x, q = p[:, 0], p[:, 1:-1], p[:, -1]
        out = np.full(len(p), PLUS_INFINITY)
        pos = q > 0
        if np.any(pos):
            vals = p_x[pos] @ u.T - q[pos, None] * cost[None, :]
            out[pos] = -p_t[pos] + np.max(vals, axis=1)
        zero = (q == 0) & np.all(p_x == 0, axis=1)
        out[zero] = -p_t[zero]
        return out


def epigraph_velocity_map(L: LagrangianModel, radius: float, rho_samples: int = 21) -> EpigraphVelocityMap:
    return EpigraphVelocityMap(L, radius, rho_samples)


# ------------------------------------------------------------------ reports


@dataclass
class PointVerdict:
    point: list
    verdict: str
    value: float
    witness: Optional[list] = None


@dataclass
class ViabilityReport:
    name: str
    verdict: str
    tol: float
    points: list = field(default_factory=list)

    @property
    def worst(self) -> Optional[PointVerdict]:
        if not self.points:
            return None
        return max(self.points, key=lambda pv: pv.value)

    def all(self, verdict: str) -> bool:
        return all(pv.verdict == verdict for pv in self.points)

    def to_dict(self) -> dict:
        worst = self.worst
        return {
            "name": self.name,
            "verdict": self.verdict,
            "tol": self.tol,
            "worst_residual": None if worst is None else _num(worst.value),
            "witness": None if worst is None else {"point": worst.point, "detail": worst.witness},
            "per_point": [pv.verdict for pv in self.points],
        }


def _num(v: float):
    v = float(v)
    if v >= INFINITY_THRESHOLD or v == np.inf:
        return "inf"
    return v


def _summary(points: list) -> str:
    return "PASS" if all(pv.verdict == "PASS" for pv in points) else "FAIL"


def check_viability_domain(K: DiscreteSet, G: VelocityMap, points, tol: float = 0.02,
                           h_sequence: Optional[Sequence[float]] = None,
                           radius: Optional[float] = None) -> ViabilityReport:
    """``min_{u in G(x) ∩ B_R} min_j dist(x + h_j u, K) / h_j <= tol`` at every point."""
    hs = np.asarray(h_sequence if h_sequence is not None else default_scales(), dtype=float)
    out = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        g = G.sample(x, radius=radius if radius is not None else G.radius)
        if len(g) == 0:
            raise EmptyValue(f"G(x) ∩ B_R empty at {x.tolist()}")
        member = getattr(K, "member", None)
        if member is not None:
            hit = [np.flatnonzero(member(x + h * g)) for h in hs]
            hit = [ix for ix in hit if len(ix)]
            if hit:
                out.append(PointVerdict(x.tolist(), "PASS", 0.0, g[hit[0][0]].tolist()))
                continue
        best = np.full(len(g), np.inf)
        for h in hs:
            best = np.minimum(best, K.distance(x + h * g, window=3 * h * max(1.0, np.max(np.linalg.norm(g, axis=-1)))) / h)
        k = int(np.argmin(best))
        out.append(PointVerdict(x.tolist(), "PASS" if best[k] <= tol else "FAIL", float(best[k]),
                                g[k].tolist()))
    return ViabilityReport("viability_domain", _summary(out), tol, out)


def polar_condition(K: DiscreteSet, G: VelocityMap, points, tol: float = 0.02,
                    h_sequence: Optional[Sequence[float]] = None, directions: Optional[np.ndarray] = None,
                    p_sample: Optional[np.ndarray] = None, cone_tol: Optional[float] = None,
                    radius: Optional[float] = None) -> ViabilityReport:
    """``inf_{u in G(x)} <p, u> <= tol |p|`` for every sampled ``p`` in the polar of the contingent cone."""
    hs = np.asarray(h_sequence if h_sequence is not None else default_scales(), dtype=float)
    cone_tol = tol if cone_tol is None else cone_tol
    out = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        dirs = directions if directions is not None else sphere_directions(len(x), 256)
        ps = p_sample if p_sample is not None else dirs
        cone = contingent_cone(K, x, hs, dirs, tol=cone_tol)
        polar = polar_cone(cone, ps, tol=cone_tol)
        g = G.sample(x, radius=radius if radius is not None else G.radius)
        if len(g) == 0:
            raise EmptyValue(f"G(x) ∩ B_R empty at {x.tolist()}")
        normals = polar.directions[polar.inside]
        normals = normals[np.linalg.norm(normals, axis=-1) > 0]
        if len(normals) == 0:
            out.append(PointVerdict(x.tolist(), "PASS", -np.inf, None))
            continue
        inf_vals = np.min(normals @ g.T, axis=1) / np.linalg.norm(normals, axis=-1)
        k = int(np.argmax(inf_vals))
        out.append(PointVerdict(x.tolist(), "PASS" if inf_vals[k] <= tol else "FAIL", float(inf_vals[k]),
                                normals[k].tolist()))
    return ViabilityReport("polar_condition", _summary(out), tol, out)


@dataclass
class DescentTrace:
    """Per-scale record of the distance-descent construction at ``base``."""

    base: np.ndarray
    scales: np.ndarray
    u: np.ndarray
    nearest: np.ndarray
    normals: np.ndarray
    g: np.ndarray
    ratios: np.ndarray
    bound_ok: np.ndarray
    h_eps: Optional[float]
    normal_in_polar: np.ndarray
    normal_touches: np.ndarray
    verdict: str


def distance_descent(K: DiscreteSet, G: VelocityMap, x, radius: float, h_sequence: Optional[Sequence[float]] = None,
                     eps: float = 0.01, tol: float = 1e-6, cone_tol: float = 0.02, min_tail: int = 3,
                     truncation_factor: float = 4.0, directions: Optional[np.ndarray] = None) -> DescentTrace:
    """Track ``g(h) = dist(x + h G(x), K)^2 / 2`` over a scale sequence.

    PASS iff ``g(h) <= R h^2 eps / 2 (1 + tol)`` at every scale below the
    reported ``h_eps`` and that holds for at least ``min_tail`` scales,
    i.e. ``dist(x + h u_h, K) / h <= sqrt(R eps)``. Side checks per scale:
    ``p_h = x + h u_h - x_h`` lies in the sampled polar of the contingent
    cone at ``x_h`` and ``-p_h`` touches the velocity sample at ``u_h``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hs = np.sort(np.asarray(h_sequence if h_sequence is not None else default_scales(), dtype=float))[::-1]
    g_r = G.sample(x, radius=radius)
    if len(g_r) == 0:
        raise EmptyValue(f"G(x) ∩ B_R empty at {x.tolist()}")
    g_wide = G.sample(x, radius=truncation_factor * radius)
    dirs = directions if directions is not None else (
        sphere_directions(len(x), 256) if len(x) > 1 else sphere_directions(1, 2))
    rec_u, rec_x, rec_p, rec_g, rec_ratio, rec_polar, rec_touch = [], [], [], [], [], [], []
    for h in hs:
        window = 3 * h * max(1.0, radius)
        d_r, near_r = K.nearest(x + h * g_r, window)
        d_w = K.distance(x + h * g_wide, window=3 * h * max(1.0, truncation_factor * radius))
        if d_w.min() < d_r.min() - max(tol, 1e-12) * h:
            raise TruncationViolated(
                f"dist(x+hG(x),K) < dist(x+h(G(x)∩B_R),K) at h={h}: {d_w.min():.3g} < {d_r.min():.3g}")
        k = int(np.argmin(d_r))
        u_h, x_h = g_r[k], near_r[k]
        p_h = x + h * u_h - x_h
        rec_u.append(u_h)
        rec_x.append(x_h)
        rec_p.append(p_h)
        rec_g.append(0.5 * d_r[k] ** 2)
        rec_ratio.append(d_r[k] / h)
        if np.linalg.norm(p_h) > 0:
            cone = contingent_cone(K, x_h, default_scales(h, 4), dirs, tol=cone_tol)
            in_polar = bool(polar_cone(cone, p_h[None, :], tol=cone_tol).inside[0])
        else:
            in_polar = True
        sigma = float(np.max(g_r @ (-p_h)))
        touch = abs(sigma - float(-p_h @ u_h)) <= max(tol, 1e-9) * max(1.0, float(np.linalg.norm(p_h)))
        rec_polar.append(in_polar)
        rec_touch.append(touch)
    rec_g = np.array(rec_g)
    bound_ok = rec_g <= radius * hs ** 2 * eps / 2 * (1 + tol)
    # largest h such that the bound holds at every smaller scale
    h_eps = None
    tail_len = 0
    for i in range(len(hs) - 1, -1, -1):
        if not bound_ok[i]:
            break
        h_eps = float(hs[i])
        tail_len += 1
    verdict = "PASS" if tail_len >= min(min_tail, len(hs)) else "FAIL"
    return DescentTrace(x, hs, np.array(rec_u), np.array(rec_x), np.array(rec_p), rec_g,
                        np.array(rec_ratio), bound_ok, h_eps, np.array(rec_polar), np.array(rec_touch), verdict)


def descent_report(K: DiscreteSet, G: VelocityMap, points, radius: float, eps: float = 0.01, **kwargs) -> ViabilityReport:
    out = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        tr = distance_descent(K, G, x, radius, eps=eps, **kwargs)
        out.append(PointVerdict(x.tolist(), tr.verdict, float(tr.ratios[-1]),
                                {"h_eps": tr.h_eps, "ratios": tr.ratios.tolist()}))
    return ViabilityReport("distance_descent", _summary(out), float(np.sqrt(radius * eps)), out)


def viable_euler(K: DiscreteSet, G: VelocityMap, x0, h: float, horizon: float, radius: Optional[float] = None,
                 tol_escape: float = 0.5) -> TrajectoryPath:
    """Euler steps with selection ``u_k = argmin_u dist(y_k + h u, K)``, then projection onto K.

    Raises :class:`Escaped` once a pre-projection distance exceeds
    ``h * tol_escape``. ``path.info['drift_constant']`` is the largest
    pre-projection distance divided by ``h^2``.
    """
    y = np.atleast_1d(np.asarray(x0, dtype=float))
    steps = int(round(horizon / h))
    nodes = [y.copy()]
    drift = 0.0
    radius = radius if radius is not None else G.radius
    for k in range(steps):
        g = G.sample(y, radius=radius)
        if len(g) == 0:
            raise EmptyValue(f"G(y) ∩ B_R empty at {y.tolist()}")
        d, near = K.nearest(y + h * g, 3 * h * max(1.0, float(np.max(np.linalg.norm(g, axis=-1)))))
        i = int(np.argmin(d))
        if d[i] > h * tol_escape:
            raise Escaped(f"left K at step {k}: distance {d[i]:.3g} > {h * tol_escape:.3g}", k, np.array(nodes))
        drift = max(drift, float(d[i]) / h ** 2)
        y = near[i]
        nodes.append(y.copy())
    path = TrajectoryPath(0.0, steps * h, h, np.array(nodes))
    path.info["drift_constant"] = drift
    return path


def usc_margin(H: HamiltonianTable, x, eps: float, p_bound: float) -> float:
    """Largest sampled radius ``r`` with ``H(x,p) + eps > H(y,p)`` for all nodes ``|y-x| <= r``, ``|p| <= M``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xs = H.x_grid.points()
    i = int(H.x_grid.nearest_index(x[None, :])[0])
    p = H.p_grid.points()
    pmask = np.linalg.norm(p, axis=-1) <= p_bound + 1e-12
    ref = H.values[i, pmask]
    dist = np.linalg.norm(xs - xs[i], axis=-1)
    ok = np.all(ref[None, :] + eps > H.values[:, pmask], axis=1)
    if np.all(ok):
        return float(dist.max())
    # every node strictly closer than the nearest violator passes
    first_bad = float(dist[~ok].min())
    closer = dist[dist < first_bad]
    return float(closer.max()) if closer.size else 0.0


def check_map_values(G: VelocityMap, y, probes: Optional[np.ndarray] = None) -> dict:
    """Spot checks: nonempty sample, support positively homogeneous and convex in ``p``."""
    y = np.asarray(y, dtype=float)
    g = G.sample(y, radius=G.radius)
    if probes is None:
        probes = sphere_directions(G.dim, 16) if G.dim <= 3 else np.eye(G.dim)
    s1 = G.support(y, probes)
    s2 = G.support(y, 2.0 * probes)
    finite = (s1 < INFINITY_THRESHOLD) & (s2 < INFINITY_THRESHOLD)
    homogeneous = bool(np.allclose(s2[finite], 2.0 * s1[finite], rtol=1e-9, atol=1e-9))
    a, b = probes[:-1], probes[1:]
    mid = G.support(y, 0.5 * (a + b))
    sa, sb = G.support(y, a), G.support(y, b)
    fin = (sa < INFINITY_THRESHOLD) & (sb < INFINITY_THRESHOLD)
    convex = bool(np.all(mid[fin] <= 0.5 * (sa[fin] + sb[fin]) + 1e-9))
    return {"nonempty": len(g) > 0, "homogeneous": homogeneous, "convex": convex}
