"""Numerical nonsmooth analysis on sampled functions and sets.

Functions are plain callables mapping points ``(N, d)`` to extended reals
``(N,)`` (a :class:`~hjbolza.value.ValueField` qualifies). Limits are
replaced by finite scale sequences; every estimate keeps its per-scale
profile so a reader can see whether it settled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY, Grid, clean


class OutOfDomain(ValueError):
    pass


class NotInSet(ValueError):
    pass


class AllInfinite(ValueError):
    pass


def scale_sequence(resolution: float, h0: float = 0.1, floor: float = 2.0) -> np.ndarray:
    """``h_j = h0 2^-j`` down to the first value below ``floor * resolution``."""
    hs = [h0]
    while hs[-1] >= floor * resolution:
        hs.append(hs[-1] / 2)
    return np.array(hs)


def ball_lattice(dim: int, radius: float, per_axis: int = 9) -> np.ndarray:
    """Lattice points of ``[-radius, radius]^dim`` inside the closed ball (endpoints included)."""
    axis = np.linspace(-radius, radius, per_axis)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([axis] * dim), indexing="ij")], axis=-1)
    keep = np.linalg.norm(pts, axis=-1) <= radius * (1 + 1e-12)
    # keep the extreme points of every axis so 1D windows include both ends
    return pts[keep]


def sphere_directions(dim: int, count: int) -> np.ndarray:
    """Unit directions: ``+-1`` in 1D, equally spaced angles in 2D, a Fibonacci lattice in 3D."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if dim == 3:
        i = np.arange(count) + 0.5
        phi = np.arccos(1 - 2 * i / count)
        theta = np.pi * (1 + 5 ** 0.5) * i
        return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1)
    raise ValueError("directions supported up to dimension 3")


def _eval(W: Callable, pts) -> np.ndarray:
    return clean(W(np.atleast_2d(np.asarray(pts, dtype=float))))


# ------------------------------------------------------------- derivatives


@dataclass
class DerivativeEstimate:
    """Contingent directional derivative estimate and its per-scale profile."""

    value: float
    profile: np.ndarray
    scales: np.ndarray
    stable: bool

    @property
    def finite(self) -> bool:
        return self.value < INFINITY_THRESHOLD and self.value > -INFINITY_THRESHOLD


def contingent_derivative(W: Callable, x, u, h_sequence: Optional[Sequence[float]] = None,
                          resolution: float = 1e-7, per_axis: int = 9,
                          stable_tol: float = 1e-2) -> DerivativeEstimate:
    """Liminf of ``(W(x + h v) - W(x)) / h`` as ``h -> 0+``, ``v -> u``.

    For each scale ``h_j`` the quotient is minimized over a lattice of ``v``
    with ``|v - u| <= sqrt(h_j)``. The estimate is the value at the finest
    scale; ``stable`` says whether the last three scales agree within
    ``stable_tol`` (or all diverge past the infinity threshold).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    wx = float(_eval(W, x[None, :])[0])
    if wx >= INFINITY_THRESHOLD:
        raise OutOfDomain(f"W(x)=+inf at x={x.tolist()}")
    hs = np.asarray(h_sequence if h_sequence is not None else scale_sequence(resolution), dtype=float)
    profile = np.empty(len(hs))
    for j, h in enumerate(hs):
        v = u + ball_lattice(len(x), np.sqrt(h), per_axis)
        vals = _eval(W, x + h * v)
        q = np.where(vals >= INFINITY_THRESHOLD, PLUS_INFINITY, (vals - wx) / h)
        profile[j] = np.min(q)
    tail = profile[-3:]
    if np.all(tail >= INFINITY_THRESHOLD):
        stable = True
    else:
        stable = bool(np.all(tail < INFINITY_THRESHOLD) and np.ptp(tail) <= stable_tol)
    return DerivativeEstimate(float(profile[-1]), profile, hs, stable)


@dataclass
class DifferentialSample:
    """Accepted sub- (or super-) gradients at ``base`` from a finite-radius test."""

    base: np.ndarray
    accepted: np.ndarray
    sign: str
    radius: float
    delta: float
    touches_boundary: bool = False

    @property
    def empty(self) -> bool:
        return len(self.accepted) == 0


def _sub_accept(W: Callable, x: np.ndarray, p: np.ndarray, offsets: np.ndarray, delta: float):
    wx = float(_eval(W, x[None, :])[0])
    wy = _eval(W, x + offsets)
    dist = np.linalg.norm(offsets, axis=-1)
    # W(y) - W(x) - <p, y - x> >= -delta |y - x|; +inf neighbours never violate
    lhs = (wy - wx)[None, :] - p @ offsets.T + delta * dist[None, :]
    lhs = np.where((wy >= INFINITY_THRESHOLD)[None, :], np.inf, lhs)
    return np.all(lhs >= 0.0, axis=1)


def differential_sample(W: Callable, x, sign: str = "sub", radius: float = 0.05, delta: float = 0.01,
                        p_grid: Optional[Grid] = None, spacing: Optional[float] = None,
                        offsets: Optional[np.ndarray] = None) -> DifferentialSample:
    """Sample the sub- or superdifferential of ``W`` at ``x``.

    ``p`` is accepted as a subgradient when ``W(y) - W(x) - <p, y-x> >=
    -delta |y-x|`` for every sampled ``y`` with ``0 < |y-x| <= radius``. The
    superdifferential is ``-(sub of -W)`` computed through the same test.
    Sampled ``y`` lie on a lattice of step ``spacing`` (default ``radius/20``)
    unless ``offsets`` is given.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = len(x)
    if float(_eval(W, x[None, :])[0]) >= INFINITY_THRESHOLD:
        raise OutOfDomain(f"W(x)=+inf at x={x.tolist()}")
    if p_grid is None:
        p_grid = Grid((-5.0,) * d, (5.0,) * d, (101,) * d)
    if offsets is None:
        spacing = spacing or radius / 20
        k = int(np.floor(radius / spacing + 1e-9))
        axis = spacing * np.arange(-k, k + 1)
        offsets = np.stack([m.ravel() for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
        norms = np.linalg.norm(offsets, axis=-1)
        offsets = offsets[(norms > 0) & (norms <= radius * (1 + 1e-12))]
    p = p_grid.points()
    if sign == "sub":
        ok = _sub_accept(W, x, p, offsets, delta)
        accepted = p[ok]
    elif sign == "super":
        neg = lambda pts: -np.where(_eval(W, pts) >= INFINITY_THRESHOLD, PLUS_INFINITY, _eval(W, pts))
        ok = _sub_accept(neg, x, -p, offsets, delta)
        accepted = p[ok]
    else:
        raise ValueError(f"sign must be 'sub' or 'super', got {sign!r}")
    on_edge = np.any(np.isclose(accepted, np.array(p_grid.lower)) |
                     np.isclose(accepted, np.array(p_grid.upper))) if len(accepted) else False
    return DifferentialSample(x, accepted, sign, radius, delta, bool(on_edge))


# ------------------------------------------------------------------- sets


class DiscreteSet:
    """Closed set with a distance query. Subclasses implement :meth:`nearest`."""

    dim: int

    def nearest(self, z: np.ndarray, window: float) -> tuple[np.ndarray, np.ndarray]:
        """Distances ``(N,)`` and nearest points ``(N, dim)`` for queries ``(N, dim)``."""
        raise NotImplementedError

    def distance(self, z, window: float = 0.3) -> np.ndarray:
        return self.nearest(np.atleast_2d(np.asarray(z, dtype=float)), window)[0]

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        return self.distance(z, window=max(tol, 1e-9) * 3) <= tol


class PointCloudSet(DiscreteSet):
    """Finite set of points; nearest by k-d tree, ties to the lowest index."""

    def __init__(self, points):
        from scipy.spatial import cKDTree

        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(self.points) == 0:
            raise ValueError("empty point cloud")
        self.dim = self.points.shape[1]
        self._tree = cKDTree(self.points)

    def nearest(self, z, window=None):
        k = min(4, len(self.points))
        dist, idx = self._tree.query(z, k=k)
        dist = np.atleast_2d(dist).reshape(len(z), k)
        idx = np.atleast_2d(idx).reshape(len(z), k)
        best = np.empty(len(z), dtype=int)
        for i in range(len(z)):
            ties = idx[i][dist[i] <= dist[i, 0] * (1 + 1e-12) + 1e-15]
            best[i] = ties.min()
        pts = self.points[best]
        return np.linalg.norm(z - pts, axis=-1), pts


class ProjectionSet(DiscreteSet):
    """Set given by an exact projection map (disks, boxes, the whole space)."""

    def __init__(self, dim: int, project: Callable, label: str = ""):
        self.dim = dim
        self.project = project
        self.label = label

    def nearest(self, z, window=None):
        pts = self.project(z)
        return np.linalg.norm(z - pts, axis=-1), pts


def ball_set(center, radius: float) -> ProjectionSet:
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def project(z):
        d = z - center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(n > radius, radius / np.where(n > 0, n, 1.0), 1.0)
        return center + d * scale

    return ProjectionSet(len(center), project, f"ball(r={radius})")


def box_set(lower, upper) -> ProjectionSet:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    return ProjectionSet(len(lower), lambda z: np.clip(z, lower, upper), "box")


def whole_space(dim: int) -> ProjectionSet:
    return ProjectionSet(dim, lambda z: np.array(z, dtype=float), "whole space")


def sphere_set(center, radius: float) -> ProjectionSet:
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def project(z):
        d = z - center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        fallback = np.zeros_like(d)
        fallback[..., 0] = 1.0
        d = np.where(n > 0, d / np.where(n > 0, n, 1.0), fallback)
        return center + radius * d

    return ProjectionSet(len(center), project, f"sphere(r={radius})")


class ImplicitSet(DiscreteSet):
    """Set given by a membership predicate; distances by scanning a local lattice.

    The lattice is anchored at ``lower`` with step ``resolution``; a query
    scans the nodes within ``window`` of the query point (ties to the lowest
    lattice index). Without a member in the window the distance is +inf.
    """

    def __init__(self, predicate: Callable, lower, upper, resolution: float):
        self.predicate = predicate
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.dim = len(self.lower)
        self.resolution = float(resolution)

    def nearest(self, z, window=0.3):
        dists = np.empty(len(z))
        pts = np.empty_like(z)
        inside = self.predicate(z)
        res = self.resolution
        for i, q in enumerate(z):
            if inside[i]:
                dists[i], pts[i] = 0.0, q
                continue
            lo = np.maximum(np.ceil((q - window - self.lower) / res), 0)
            hi = np.minimum(np.floor((q + window - self.lower) / res),
                            np.floor((self.upper - self.lower) / res + 1e-9))
            axes = [self.lower[a] + res * np.arange(lo[a], hi[a] + 1) for a in range(self.dim)]
            if any(len(ax) == 0 for ax in axes):
                dists[i], pts[i] = PLUS_INFINITY, q
                continue
            cand = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
            cand = cand[self.predicate(cand)]
            if len(cand) == 0:
                dists[i], pts[i] = PLUS_INFINITY, q
                continue
            dd = np.linalg.norm(cand - q, axis=-1)
            k = int(np.argmin(dd))
            dists[i], pts[i] = dd[k], cand[k]
        return dists, pts


class EpigraphSet(DiscreteSet):
    """Epigraph ``{(x, r): r >= W(x)}`` or hypograph ``{(x, r): r <= W(x)}`` of a sampled function.

    Distances scan a lattice of step ``resolution`` in ``x`` (within the
    window) and use the exact vertical gap to the graph above each scanned
    ``x``. ``r`` is confined to ``[min W - pad, max W + pad]`` over the
    finite samples.
    """

    def __init__(self, W: Callable, domain: Grid, orientation: str = "epi", resolution: Optional[float] = None,
                 pad: float = 1.0):
        if orientation not in ("epi", "hypo"):
            raise ValueError("orientation must be 'epi' or 'hypo'")
        self.W = W
        self.domain = domain
        self.orientation = orientation
        self.dim = domain.ndim + 1
        self.resolution = float(resolution or min(domain.spacing))
        vals = _eval(W, domain.points())
        finite = vals[vals < INFINITY_THRESHOLD]
        if finite.size == 0:
            raise AllInfinite("W is +inf at every sample")
        self.r_window = (float(finite.min()) - pad, float(finite.max()) + pad)

    def _gap(self, wv: np.ndarray, r: np.ndarray) -> np.ndarray:
        if self.orientation == "epi":
            return np.where(wv >= INFINITY_THRESHOLD, PLUS_INFINITY, np.maximum(wv - r, 0.0))
        return np.where(wv >= INFINITY_THRESHOLD, 0.0, np.maximum(r - wv, 0.0))

    def member(self, z, tol: float = 1e-9) -> np.ndarray:
        z = np.atleast_2d(z)
        return self._gap(_eval(self.W, z[:, :-1]), z[:, -1]) <= tol

    def nearest(self, z, window=0.3):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        d = self.dim - 1
        res = self.resolution
        lower = np.array(self.domain.lower)
        upper = np.array(self.domain.upper)
        dists = np.empty(len(z))
        pts = np.empty_like(z)
        base_gap = self._gap(_eval(self.W, z[:, :-1]), z[:, -1])
        for i, q in enumerate(z):
            xq, rq = q[:-1], q[-1]
            if base_gap[i] <= 0.0 and np.all(xq >= lower - 1e-12) and np.all(xq <= upper + 1e-12):
                dists[i], pts[i] = 0.0, q
                continue
            lo = np.maximum(np.ceil((xq - window - lower) / res), 0)
            hi = np.minimum(np.floor((xq + window - lower) / res), np.floor((upper - lower) / res + 1e-9))
            axes = [lower[a] + res * np.arange(lo[a], hi[a] + 1) for a in range(d)]
            cand = [xq[None, :]] if np.all(xq >= lower) and np.all(xq <= upper) else []
            if all(len(ax) for ax in axes):
                cand.append(np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1))
            if not cand:
                dists[i], pts[i] = PLUS_INFINITY, q
                continue
            cand = np.concatenate(cand)
            wv = _eval(self.W, cand)
            gap = self._gap(wv, np.full(len(cand), rq))
            dd = np.sqrt(np.sum((cand - xq) ** 2, axis=-1) + np.where(gap >= INFINITY_THRESHOLD, np.inf, gap) ** 2)
            k = int(np.argmin(dd))
            if not np.isfinite(dd[k]):
                dists[i], pts[i] = PLUS_INFINITY, q
                continue
            r_near = rq + gap[k] if self.orientation == "epi" else rq - gap[k]
            dists[i] = dd[k]
            pts[i] = np.concatenate([cand[k], [r_near]])
        return dists, pts


def epigraph(W: Callable, domain: Grid, orientation: str = "epi", resolution: Optional[float] = None,
             pad: float = 1.0) -> EpigraphSet:
    return EpigraphSet(W, domain, orientation, resolution, pad)


# ------------------------------------------------------------------ cones


@dataclass
class ConeSample:
    """Unit directions marked IN/OUT at ``base``, with the scales used."""

    base: np.ndarray
    directions: np.ndarray
    inside: np.ndarray
    scales: np.ndarray = field(default_factory=lambda: np.array([]))
    tol: float = 0.0
    ratios: Optional[np.ndarray] = None

    @property
    def in_directions(self) -> np.ndarray:
        return self.directions[self.inside]


def contingent_cone(K: DiscreteSet, x, h_sequence: Sequence[float], directions: np.ndarray,
                    tol: float = 0.02) -> ConeSample:
    """Mark ``v`` IN when ``min_j dist(x + h_j v, K) / h_j <= tol``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if K.distance(x[None, :], window=3 * max(h_sequence))[0] > tol:
        raise NotInSet(f"x={x.tolist()} is not within {tol} of the set")
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    ratios = np.full(len(dirs), np.inf)
    for h in h_sequence:
        d = K.distance(x + h * dirs, window=3 * h)
        ratios = np.minimum(ratios, d / h)
    return ConeSample(x, dirs, ratios <= tol, np.asarray(h_sequence, dtype=float), tol, ratios)


def polar_cone(cone: ConeSample, p_sample: np.ndarray, tol: float = 1e-9) -> ConeSample:
    """Mark ``p`` IN when ``<p/|p|, w> <= tol`` for every IN direction ``w`` (``p = 0`` always IN)."""
    p = np.atleast_2d(np.asarray(p_sample, dtype=float))
    norms = np.linalg.norm(p, axis=-1)
    unit = p / np.where(norms > 0, norms, 1.0)[:, None]
    w = cone.in_directions
    if len(w) == 0:
        inside = np.ones(len(p), dtype=bool)
    else:
        inside = np.all(unit @ w.T <= tol, axis=1)
    inside |= norms == 0
    return ConeSample(cone.base, p, inside, cone.scales, tol)
