"""Uniform rectangular grids, extended-real arithmetic and multilinear interpolation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PLUS_INFINITY = 1e30
# anything at or above this threshold is reported as +inf
INFINITY_THRESHOLD = 1e29

_SNAP = 1e-9


def is_inf(values) -> np.ndarray:
    return np.asarray(values, dtype=float) >= INFINITY_THRESHOLD


def clean(values) -> np.ndarray:
    """Map every value at or above the threshold (including ``np.inf``) to the sentinel."""
    arr = np.array(values, dtype=float)
    arr[arr >= INFINITY_THRESHOLD] = PLUS_INFINITY
    arr[np.isnan(arr)] = PLUS_INFINITY
    return arr


def sat_add(a, b) -> np.ndarray:
    """Saturating sum: ``x + INF = INF``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = a + b
    return np.where(is_inf(a) | is_inf(b), PLUS_INFINITY, out)


def to_float(value) -> float:
    """Sentinel-aware conversion for reporting (``inf`` for the sentinel)."""
    value = float(value)
    return float("inf") if value >= INFINITY_THRESHOLD else value


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid over a bounded box.

    Attributes:
        lower: per-axis lower bounds.
        upper: per-axis upper bounds.
        counts: per-axis node counts (at least 2).
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)):
            raise ValueError("lower, upper and counts must have the same length")
        if any(c < 2 for c in counts):
            raise ValueError(f"node count must be >= 2 per axis, got {counts}")
        if any(u <= lo for lo, u in zip(lower, upper)):
            raise ValueError(f"empty box: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_spacing(cls, lower: Sequence[float], upper: Sequence[float], spacing) -> "Grid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lower.shape)
        counts = np.rint((upper - lower) / spacing).astype(int) + 1
        return cls(tuple(lower), tuple(upper), tuple(counts))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.counts) - 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, up, n) for lo, up, n in zip(self.lower, self.upper, self.counts)]

    def points(self) -> np.ndarray:
        """All nodes as an ``(size, ndim)`` array in C (row-major) order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def product(self, other: "Grid") -> "Grid":
        return Grid(self.lower + other.lower, self.upper + other.upper, self.counts + other.counts)

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = np.array(self.lower) - tol
        up = np.array(self.upper) + tol
        return np.all((pts >= lo) & (pts <= up), axis=-1)

    def nearest_index(self, pts) -> np.ndarray:
        """Flat index of the nearest node; ties go to the lower index."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = (pts - np.array(self.lower)) / self.spacing
        # round half down so that ties pick the lowest index
        idx = np.ceil(s - 0.5 - 1e-12).astype(int)
        idx = np.clip(idx, 0, np.array(self.counts) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.counts)

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.lower, self.upper, tuple((n - 1) * factor + 1 for n in self.counts))

    def same_as(self, other: "Grid", tol: float = 1e-12) -> bool:
        return (
            self.counts == other.counts
            and np.allclose(self.lower, other.lower, atol=tol, rtol=0)
            and np.allclose(self.upper, other.upper, atol=tol, rtol=0)
        )


@dataclass(frozen=True)
class InterpolationPlan:
    """Precomputed corner indices and weights for repeated multilinear queries."""

    corners: np.ndarray  # (n_corners, N) flat node indices
    weights: np.ndarray  # (n_corners, N)
    outside: np.ndarray  # (N,) bool

    def apply(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values, dtype=float).ravel()
        vals = flat[self.corners]
        active = self.weights > 0.0
        blocked = np.any(active & (vals >= INFINITY_THRESHOLD), axis=0)
        out = np.sum(np.where(active, vals, 0.0) * self.weights, axis=0)
        out[blocked | self.outside] = PLUS_INFINITY
        return out


def interpolation_plan(grid: Grid, pts) -> InterpolationPlan:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[-1] != grid.ndim:
        raise ValueError(f"points have dimension {pts.shape[-1]}, grid has {grid.ndim}")
    n = np.array(grid.counts)
    s = (pts - np.array(grid.lower)) / grid.spacing
    outside = np.any((s < -_SNAP) | (s > n - 1 + _SNAP), axis=-1)
    i0 = np.clip(np.floor(s), 0, n - 2).astype(int)
    w = np.clip(s - i0, 0.0, 1.0)
    w[w < _SNAP] = 0.0
    w[w > 1.0 - _SNAP] = 1.0
    corners, weights = [], []
    for offs in itertools.product((0, 1), repeat=grid.ndim):
        offs = np.array(offs)
        idx = i0 + offs
        weight = np.prod(np.where(offs == 1, w, 1.0 - w), axis=-1)
        corners.append(np.ravel_multi_index(tuple(idx.T), grid.counts))
        weights.append(weight)
    return InterpolationPlan(np.array(corners), np.array(weights), outside)


def interpolate(grid: Grid, values: np.ndarray, pts) -> np.ndarray:
    """Multilinear interpolation of an extended-real field.

    A query is +inf if it lies outside the box or if any corner carrying a
    nonzero weight is +inf. Queries within 1e-9 cells of a node only touch
    that node.
    """
    return interpolation_plan(grid, pts).apply(values)
