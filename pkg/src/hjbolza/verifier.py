"""Numerical certificates for candidate solutions ``W(t, x)`` of the HJ equation

    W_t + H(x, -W_x) = 0,    W(0, .) = phi.

Every check samples points, evaluates a residual and returns a
:class:`CheckResult`. :func:`run_certificate` assembles them, compares the
candidate against a freshly computed DP value function and states which
comparison or uniqueness statement the evidence is consistent with.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import INFINITY_THRESHOLD, Grid, to_float
from .nonsmooth import (
    OutOfDomain,
    contingent_derivative,
    differential_sample,
    epigraph,
    scale_sequence,
)
from .problem import BolzaProblem, TerminalCost, compile_expression
from .transform import HamiltonianTable, OutOfTable, hamiltonian_table
from .value import ValueField, VelocitySearchBox, solve_dp

logger = logging.getLogger(__name__)

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"

# statement each check speaks to
TAGS = {
    "supersolution": "viscosity supersolution inequality; comparison W >= V",
    "subsolution": "viscosity subsolution inequality (superdifferential)",
    "equation": "equality on subdifferentials; uniqueness among lsc functions",
    "lower_subsolution": "subsolution on subdifferentials; comparison W <= V",
    "initial": "initial condition as a liminf",
    "technical": "contingent conditions D(0,0)=0 and D(-1,u)<inf",
    "viability": "epigraph viability for the Bolza velocity map",
    "compare_geq": "comparison W >= V",
    "compare_leq": "comparison W <= V",
    "compare_eq": "uniqueness W = V",
}

MODES = {
    # mode: (differential, residual test)
    "supersolution": "sub",
    "subsolution": "super",
    "equation": "sub",
    "lower_subsolution": "sub",
}


class GridMismatch(ValueError):
    pass


class CandidateFunction:
    """Vectorized ``W(points)`` for points ``(N, 1+n)`` = ``(t, x)``.

    ``spacing`` is the sampling step used for local tests; analytic
    candidates default to ``1e-4``.
    """

    def __init__(self, func: Callable, name: str = "candidate", spacing: float = 1e-4):
        self.func = func
        self.name = name
        self.spacing = float(spacing)

    def __call__(self, pts) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(np.asarray(pts, dtype=float))), dtype=float)

    @classmethod
    def from_expression(cls, expr: str, spacing: float = 1e-4) -> "CandidateFunction":
        f = compile_expression(expr, ("t", "x"))

        def func(pts):
            return f(pts[:, 0], pts[:, 1:])

        return cls(func, expr, spacing)

    @classmethod
    def from_field(cls, fld: ValueField, name: str = "field") -> "CandidateFunction":
        return cls(fld, name, fld.resolution)

    def shifted(self, slope: float, name: Optional[str] = None) -> "CandidateFunction":
        """``W + slope * t``."""
        base = self.func

        def func(pts):
            vals = np.asarray(base(pts), dtype=float)
            return np.where(vals >= INFINITY_THRESHOLD, vals, vals + slope * pts[:, 0])

        return CandidateFunction(func, name or f"{self.name}{slope:+g}*t", self.spacing)


def as_candidate(W) -> CandidateFunction:
    if isinstance(W, CandidateFunction):
        return W
    if isinstance(W, ValueField):
        return CandidateFunction.from_field(W)
    return CandidateFunction(W)


@dataclass
class CheckResult:
    name: str
    verdict: str
    tol: float
    worst_residual: Optional[float] = None
    witness: Optional[dict] = None
    per_point: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def tag(self) -> str:
        return TAGS.get(self.name, "")

    def count(self, verdict: str) -> int:
        return sum(v == verdict for v in self.per_point)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "verdict": self.verdict,
            "worst_residual": _jsonable(self.worst_residual),
            "witness": _jsonable(self.witness),
            "tol": self.tol,
            "tag": self.tag,
        }
        if self.per_point:
            out["points"] = len(self.per_point)
            out["passed"] = self.count(PASS)
        if self.details:
            out["details"] = _jsonable(self.details)
        return out


def _jsonable(obj):
    if obj is None:
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v >= INFINITY_THRESHOLD or v == np.inf:
            return "inf"
        if v <= -INFINITY_THRESHOLD or v == -np.inf:
            return "-inf"
        return v
    return obj


# ---------------------------------------------------------------- sampling


def detect_kinks(values: np.ndarray, spacing: Sequence[float], jump: float = 0.5) -> np.ndarray:
    """Nodes whose second difference along some axis exceeds ``jump * spacing`` (slope jump > ``jump``)."""
    kinks = np.zeros(values.shape, dtype=bool)
    finite = values < INFINITY_THRESHOLD
    for axis in range(values.ndim):
        n = values.shape[axis]
        if n < 3:
            continue
        a = np.take(values, range(0, n - 2), axis=axis)
        m = np.take(values, range(1, n - 1), axis=axis)
        b = np.take(values, range(2, n), axis=axis)
        fin = np.take(finite, range(0, n - 2), axis=axis) & np.take(finite, range(2, n), axis=axis) \
            & np.take(finite, range(1, n - 1), axis=axis)
        d2 = np.where(fin, np.abs(a - 2 * m + b), np.inf)
        bad = d2 > jump * spacing[axis]
        idx = [slice(None)] * values.ndim
        idx[axis] = slice(1, n - 1)
        kinks[tuple(idx)] |= bad
    return kinks


def sample_points(W, grid: Grid, count: int = 200, t_min: float = 0.1, margin: float = 0.05,
                  seed: int = 0, kink_jump: float = 0.5, kink_pad: int = 3) -> np.ndarray:
    """Interior ``(t, x)`` nodes of ``grid`` for residual checks.

    Skips ``t < t_min``, nodes within ``margin`` of the box, nodes where
    ``W`` is +inf and a ``kink_pad``-node neighbourhood of detected kinks.
    Deterministic for a given seed.
    """
    W = as_candidate(W)
    pts = grid.points()
    vals = W(pts).reshape(grid.shape)
    kinks = detect_kinks(vals, grid.spacing, kink_jump)
    if kink_pad > 0 and kinks.any():
        from scipy.ndimage import binary_dilation

        kinks = binary_dilation(kinks, iterations=kink_pad)
    lo = np.array(grid.lower)
    hi = np.array(grid.upper)
    ok = (pts[:, 0] >= t_min - 1e-12) & (pts[:, 0] <= hi[0] - margin)
    ok &= np.all((pts[:, 1:] >= lo[1:] + margin) & (pts[:, 1:] <= hi[1:] - margin), axis=1)
    ok &= vals.ravel() < INFINITY_THRESHOLD
    ok &= ~kinks.ravel()
    cand = pts[ok]
    if len(cand) <= count:
        return cand
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(cand), size=count, replace=False))
    return cand[pick]


def boundary_samples(x_grid: Grid, count: int = 21, margin: float = 0.5) -> np.ndarray:
    lo = np.array(x_grid.lower) + margin
    hi = np.array(x_grid.upper) - margin
    axes = [np.linspace(l, h, count) for l, h in zip(lo, hi)]
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)


# ------------------------------------------------------------------ checks


def _gradient(W: CandidateFunction, z: np.ndarray, step: float) -> np.ndarray:
    g = np.empty(len(z))
    w0 = W(z[None, :])[0]
    for a in range(len(z)):
        e = np.zeros(len(z))
        e[a] = step
        wp, wm = W(np.stack([z + e, z - e]))
        if wp < INFINITY_THRESHOLD and wm < INFINITY_THRESHOLD:
            g[a] = (wp - wm) / (2 * step)
        elif wp < INFINITY_THRESHOLD:
            g[a] = (wp - w0) / step
        elif wm < INFINITY_THRESHOLD:
            g[a] = (w0 - wm) / step
        else:
            g[a] = 0.0
    return g


def _local_sample(W: CandidateFunction, z, sign, radius, delta, spacing, width, per_axis=41, expand=3):
    center = _gradient(W, z, spacing)
    half = width
    for _ in range(expand + 1):
        pg = Grid(tuple(center - half), tuple(center + half), (per_axis,) * len(z))
        s = differential_sample(W, z, sign, radius, delta, pg, spacing=spacing)
        if not s.touches_boundary:
            return s
        half *= 2
    return s


def _violation(mode: str, res: np.ndarray, tol: float) -> tuple[float, float]:
    """(amount by which the mode inequality is violated, the offending residual)."""
    if mode == "supersolution":
        k = int(np.argmin(res))
        return -tol - res[k], res[k]
    if mode in ("subsolution", "lower_subsolution"):
        k = int(np.argmax(res))
        return res[k] - tol, res[k]
    k = int(np.argmax(np.abs(res)))
    return abs(res[k]) - tol, res[k]


def check_hj(W, H: HamiltonianTable, mode: str, points, tol: float, radius: Optional[float] = None,
             delta: Optional[float] = None, spacing: Optional[float] = None,
             p_width: Optional[float] = None, vacuity_limit: float = 0.5, threads: int = 1) -> CheckResult:
    """Residual ``p_t + H(x, -p_x)`` over sampled (sub/super)gradients ``(p_t, p_x)``.

    Modes: ``supersolution`` (subgradients, residual >= -tol),
    ``subsolution`` (supergradients, residual <= tol), ``equation``
    (subgradients, |residual| <= tol) and ``lower_subsolution``
    (subgradients, residual <= tol). A point with an empty sample passes
    vacuously; more than ``vacuity_limit`` vacuous points make the verdict
    INCONCLUSIVE.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    W = as_candidate(W)
    spacing = spacing or W.spacing
    radius = radius or 3 * spacing
    delta = delta if delta is not None else tol / 4
    p_width = p_width or 4 * delta
    sign = MODES[mode]
    points = np.atleast_2d(np.asarray(points, dtype=float))

    def one(z):
        s = _local_sample(W, z, sign, radius, delta, spacing, p_width)
        if s.empty:
            return None
        p = s.accepted
        try:
            hv = H(np.repeat(z[None, 1:], len(p), axis=0), -p[:, 1:])
        except OutOfTable as exc:
            raise OutOfTable(f"{exc} at point {z.tolist()}") from exc
        res = p[:, 0] + hv
        amount, offending = _violation(mode, res, tol)
        return amount, float(offending), p[int(np.argmin(np.abs(res - offending)))]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(z) for z in points]
    per_point, worst, witness, vacuous = [], -np.inf, None, 0
    for z, r in zip(points, results):
        if r is None:
            vacuous += 1
            per_point.append(PASS)
            continue
        amount, offending, p = r
        per_point.append(PASS if amount <= 0 else FAIL)
        if amount > worst:
            worst = amount
            witness = {"point": z.tolist(), "residual": offending, "p": p.tolist()}
    frac = vacuous / max(1, len(points))
    if FAIL in per_point:
        verdict = FAIL
    elif frac > vacuity_limit:
        verdict = INCONCLUSIVE
    else:
        verdict = PASS
    return CheckResult(mode, verdict, tol, None if witness is None else witness["residual"], witness, per_point,
                       {"vacuous_fraction": frac, "radius": radius, "delta": delta})


def _stable(profile: np.ndarray, tol: float) -> bool:
    tail = profile[-3:]
    return bool(np.all(tail < INFINITY_THRESHOLD) and np.ptp(tail) <= tol)


def _diverging_down(profile: np.ndarray) -> bool:
    tail = profile[-3:]
    return bool(len(tail) == 3 and np.all(np.diff(tail) < 0))


def _diverging_up(profile: np.ndarray) -> bool:
    tail = profile[-3:]
    return bool(len(tail) == 3 and np.all(np.diff(tail) > 0))


def check_initial(W, phi: TerminalCost, xs, tol: float, h_sequence: Optional[Sequence[float]] = None,
                  spacing: Optional[float] = None) -> CheckResult:
    """``liminf_{h->0+, y->x} W(h, y) = phi(x)`` at each ``x``.

    Per scale ``h_j`` the minimum of ``W(h_j, y)`` over ``|y - x| <= sqrt(h_j)``
    is taken; the finest scale is the estimate. A grid minimum bounds the
    true liminf from above, so a PASS is one-sided evidence. Finite
    ``phi(x)``: PASS iff the estimate is within ``tol`` and the last three
    scales agree within ``tol``. Infinite ``phi(x)``: PASS iff the estimate
    exceeds ``1/tol``.
    """
    W = as_candidate(W)
    spacing = spacing or W.spacing
    hs = np.asarray(h_sequence if h_sequence is not None else scale_sequence(spacing), dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    phis = phi(xs)
    per_point, worst, witness, profiles = [], -np.inf, None, []
    for x, ph in zip(xs, phis):
        profile = np.empty(len(hs))
        for j, h in enumerate(hs):
            r = np.sqrt(h)
            step = min(spacing, r / 10)
            k = int(np.floor(r / step + 1e-9))
            axis = step * np.arange(-k, k + 1)
            offs = np.stack([m.ravel() for m in np.meshgrid(*([axis] * len(x)), indexing="ij")], axis=-1)
            offs = offs[np.linalg.norm(offs, axis=-1) <= r * (1 + 1e-12)]
            pts = np.concatenate([np.full((len(offs), 1), h), x + offs], axis=1)
            profile[j] = np.min(W(pts))
        est = profile[-1]
        if ph >= INFINITY_THRESHOLD:
            if est >= 1.0 / tol:
                verdict, gap = PASS, 0.0
            else:
                verdict = INCONCLUSIVE if _diverging_up(profile) else FAIL
                gap = 1.0 / tol - est
        else:
            gap = abs(est - ph) - tol if est < INFINITY_THRESHOLD else np.inf
            if not _stable(profile, tol):
                verdict = INCONCLUSIVE
            else:
                verdict = PASS if gap <= 0 else FAIL
        per_point.append(verdict)
        profiles.append(profile.tolist())
        if gap > worst:
            worst = gap
            witness = {"x": x.tolist(), "estimate": to_float(est), "phi": to_float(ph)}
    verdict = FAIL if FAIL in per_point else INCONCLUSIVE if INCONCLUSIVE in per_point else PASS
    return CheckResult("initial", verdict, tol, float(worst), witness, per_point,
                       {"scales": hs.tolist(), "one_sided": "grid minimum bounds the liminf from above"})


def check_technical(W, points, tol: float, u_sample: Optional[np.ndarray] = None,
                    spacing: Optional[float] = None) -> CheckResult:
    """``D W(t,x)(0,0) = 0`` and ``D W(t,x)(-1,u) < +inf`` for some sampled ``u``.

    The first condition fails when the finest-scale quotient is below
    ``-tol`` and still decreasing (the profile dives to -inf); an
    undecided profile is INCONCLUSIVE.
    """
    W = as_candidate(W)
    spacing = spacing or W.spacing
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[1] - 1
    if u_sample is None:
        axis = np.linspace(-5.0, 5.0, 21)
        grid = np.stack([m.ravel() for m in np.meshgrid(*([axis] * n), indexing="ij")], axis=-1)
        u_sample = grid[np.argsort(np.linalg.norm(grid, axis=-1), kind="stable")]
    per_point, worst, witness = [], -np.inf, None
    for z in points:
        try:
            d0 = contingent_derivative(W, z, np.zeros(n + 1), resolution=spacing, stable_tol=tol)
        except OutOfDomain:
            per_point.append(FAIL)
            witness = {"point": z.tolist(), "reason": "outside dom(W)"}
            worst = np.inf
            continue
        if d0.value >= -tol:
            v9 = PASS if (d0.stable or d0.value <= tol) else INCONCLUSIVE
        else:
            v9 = FAIL if (d0.stable or _diverging_down(d0.profile)) else INCONCLUSIVE
        finite_u = None
        for u in u_sample:
            est = contingent_derivative(W, z, np.concatenate([[-1.0], u]), resolution=spacing)
            if est.value < INFINITY_THRESHOLD:
                finite_u = u
                break
        v10 = PASS if finite_u is not None else FAIL
        verdict = FAIL if FAIL in (v9, v10) else INCONCLUSIVE if INCONCLUSIVE in (v9, v10) else PASS
        per_point.append(verdict)
        gap = -tol - d0.value
        if v10 == FAIL:
            gap = np.inf
        if gap > worst:
            worst = gap
            witness = {"point": z.tolist(), "D(0,0)": to_float(d0.value),
                       "profile": [to_float(v) for v in d0.profile],
                       "finite_direction": None if finite_u is None else finite_u.tolist()}
    verdict = FAIL if FAIL in per_point else INCONCLUSIVE if INCONCLUSIVE in per_point else PASS
    return CheckResult("technical", verdict, tol, float(worst), witness, per_point)


def compare_fields(W, V_ref: ValueField, relation: str, tol: float, t_min: float = 0.0) -> CheckResult:
    """Nodewise ``W >= V``, ``W <= V`` or ``|W - V| <= tol`` on the nodes of ``V_ref`` with ``t >= t_min``.

    A field ``W`` on another grid is interpolated when its box covers the
    reference box; otherwise :class:`GridMismatch`.
    """
    if relation not in ("geq", "leq", "eq"):
        raise ValueError(f"relation must be geq, leq or eq, got {relation!r}")
    pts = V_ref.grid.points()
    if isinstance(W, ValueField) and not W.grid.same_as(V_ref.grid):
        if not np.all(W.grid.contains(pts, tol=1e-9)):
            raise GridMismatch("candidate grid does not cover the reference grid")
    keep = pts[:, 0] >= t_min - 1e-12
    pts = pts[keep]
    ref = V_ref.values.ravel()[keep]
    w = as_candidate(W)(pts)
    w_inf = w >= INFINITY_THRESHOLD
    r_inf = ref >= INFINITY_THRESHOLD
    both = ~w_inf & ~r_inf
    diff = np.where(both, w - ref, 0.0)
    if relation == "geq":
        viol = np.where(both, -diff - tol, np.where(~w_inf & r_inf, np.inf, -np.inf))
    elif relation == "leq":
        viol = np.where(both, diff - tol, np.where(w_inf & ~r_inf, np.inf, -np.inf))
    else:
        viol = np.where(both, np.abs(diff) - tol, np.where(w_inf ^ r_inf, np.inf, -np.inf))
    k = int(np.argmax(viol)) if len(viol) else 0
    verdict = PASS if len(viol) == 0 or viol[k] <= 0 else FAIL
    witness = None
    if verdict == FAIL:
        witness = {"node": pts[k].tolist(), "W": to_float(w[k]), "V": to_float(ref[k])}
    stats = {
        "max_abs_diff": float(np.max(np.abs(diff))) if len(diff) else 0.0,
        "max_diff": float(np.max(diff)) if len(diff) else 0.0,
        "min_diff": float(np.min(diff)) if len(diff) else 0.0,
        "infinite_mismatch": int(np.sum(w_inf ^ r_inf)),
    }
    worst = float(diff[k]) if len(diff) else 0.0
    return CheckResult(f"compare_{relation}", verdict, tol, worst, witness, [], stats)


def check_epigraph_viability(W: ValueField, problem: BolzaProblem, points, tol: float, radius: float = 20.0,
                             multiples: Sequence[int] = (4, 2, 1)) -> CheckResult:
    """Viability of ``Epi(W)`` for the Bolza velocity map at ``(t, x, W(t, x))``.

    Scales are multiples of the field's time step so that DP transitions
    land on the graph.
    """
    from .viability import check_viability_domain, epigraph_velocity_map

    K = epigraph(W, W.grid, "epi", resolution=W.resolution)
    G = epigraph_velocity_map(problem.lagrangian, radius)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    z = np.concatenate([points, W(points)[:, None]], axis=1)
    rep = check_viability_domain(K, G, z, tol=tol, h_sequence=[m * W.h for m in multiples], radius=radius)
    worst = rep.worst
    return CheckResult("viability", rep.verdict, tol, None if worst is None else worst.value,
                       None if worst is None else {"point": worst.point, "velocity": worst.witness},
                       [pv.verdict for pv in rep.points])


def lipschitz_estimate(W, points, spacing: Optional[float] = None) -> float:
    W = as_candidate(W)
    spacing = spacing or W.spacing
    grads = [_gradient(W, z, spacing) for z in np.atleast_2d(points)]
    return float(np.max(np.linalg.norm(grads, axis=-1))) if grads else 0.0


# ------------------------------------------------------------ certificate


@dataclass
class CertificateConfig:
    h: float = 0.01
    t_final: float = 1.0
    search: Optional[VelocitySearchBox] = None
    p_max: float = 5.0
    p_points: int = 401
    tol: Optional[float] = None
    compare_tol: Optional[float] = None
    sample_count: int = 200
    boundary_count: int = 21
    t_min: Optional[float] = None
    radius: Optional[float] = None
    delta: Optional[float] = None
    checks: tuple = ("supersolution", "subsolution", "equation", "lower_subsolution", "initial",
                     "technical", "compare")
    viability_points: int = 8
    seed: int = 0
    threads: int = 1

    def resolved_tol(self, dx: float) -> float:
        return self.tol if self.tol is not None else 10 * (self.h + dx)


@dataclass
class CertificateReport:
    candidate: str
    checks: list
    tolerances: dict
    conclusion: str
    lipschitz_estimate: float
    sample_points: int

    def verdict(self, name: str) -> Optional[str]:
        for c in self.checks:
            if c.name == name:
                return c.verdict
        return None

    @property
    def any_fail(self) -> bool:
        return any(c.verdict == FAIL for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "checks": [c.to_dict() for c in self.checks],
            "tolerances": _jsonable(self.tolerances),
            "lipschitz_estimate": _jsonable(self.lipschitz_estimate),
            "lipschitz_note": "estimate only; local Lipschitz continuity is not decided from samples",
            "sample_points": self.sample_points,
            "conclusion": self.conclusion,
        }


def conclude(v: dict) -> str:
    """Turn verdicts into the statement the evidence supports."""
    ok = lambda k: v.get(k) == PASS
    if v.get("initial") == FAIL:
        return "initial condition violated: the uniqueness hypotheses fail, no identification with V"
    hyp = ok("initial") and ok("technical")
    if hyp and ok("supersolution") and ok("subsolution") and ok("compare_eq") and v.get("equation") != FAIL:
        return "consistent with W = V: unique viscosity solution"
    if ok("supersolution") and v.get("equation") == FAIL and ok("compare_geq"):
        return "supersolution strictly above V: consistent with the supersolution comparison W >= V, not a solution"
    if ok("lower_subsolution") and v.get("equation") == FAIL and ok("compare_leq"):
        return "subsolution below V: consistent with the subsolution comparison W <= V, not a solution"
    if hyp and ok("supersolution") and not ok("compare_geq"):
        return "supersolution hypotheses hold but W >= V fails: comparison violated at grid scale"
    if FAIL not in v.values():
        return "no check failed but some are inconclusive at grid scale: W = V is not certified"
    return "not a solution: some checks failed or were inconclusive"


def run_certificate(problem: BolzaProblem, candidate, config: Optional[CertificateConfig] = None,
                    reference: Optional[ValueField] = None, H: Optional[HamiltonianTable] = None) -> CertificateReport:
    """Run the requested checks on ``candidate`` and compare with a DP reference."""
    config = config or CertificateConfig()
    W = as_candidate(candidate)
    x_grid = problem.x_grid
    dx = float(min(x_grid.spacing))
    tol = config.resolved_tol(dx)
    compare_tol = config.compare_tol if config.compare_tol is not None else config.h + dx
    t_min = config.t_min if config.t_min is not None else 10 * config.h
    if reference is None:
        reference = solve_dp(problem, config.h, config.t_final, x_grid, config.search, threads=config.threads)
    if H is None:
        n = x_grid.ndim
        p_grid = Grid((-config.p_max,) * n, (config.p_max,) * n, (config.p_points,) * n)
        H = hamiltonian_table(problem.lagrangian, x_grid, p_grid, threads=config.threads)
    points = sample_points(W, reference.grid, config.sample_count, t_min, seed=config.seed,
                           margin=max(0.05, 5 * W.spacing))
    logger.info("certificate for %s: %d sample points, tol=%g", W.name, len(points), tol)
    checks = []
    for mode in ("supersolution", "subsolution", "equation", "lower_subsolution"):
        if mode in config.checks:
            checks.append(check_hj(W, H, mode, points, tol, config.radius, config.delta, threads=config.threads))
    if "initial" in config.checks:
        xs = boundary_samples(x_grid, config.boundary_count)
        hs = scale_sequence(reference.h if W.spacing >= reference.h else W.spacing)
        checks.append(check_initial(W, problem.terminal, xs, tol, hs))
    if "technical" in config.checks:
        checks.append(check_technical(W, points, tol))
    if "viability" in config.checks and isinstance(candidate, ValueField):
        step = max(1, len(points) // max(1, config.viability_points))
        checks.append(check_epigraph_viability(candidate, problem, points[::step][:config.viability_points], tol))
    if "compare" in config.checks:
        for rel in ("geq", "leq", "eq"):
            checks.append(compare_fields(W, reference, rel, compare_tol, t_min))
    verdicts = {c.name: c.verdict for c in checks}
    return CertificateReport(
        W.name,
        checks,
        {"residual": tol, "compare": compare_tol, "t_min": t_min,
         "radius": config.radius or 3 * W.spacing,
         "delta": config.delta if config.delta is not None else tol / 4},
        conclude(verdicts),
        lipschitz_estimate(W, points[: min(len(points), 50)]),
        len(points),
    )
