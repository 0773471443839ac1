"""Command-line entry point: ``hjbolza {conjugate,solve,verify,compare,viability}``.

Runs are described by a TOML file::

    [problem]
    lagrangian = "quadratic"        # quadratic | quartic | expression
    scale = 1.0
    potential = 0.0
    t_final = 1.0
    x_lower = [-3.0]
    x_upper = [3.0]
    u_lower = [-10.0]
    u_upper = [10.0]
    u_points = 401

    [problem.terminal]
    kind = "expression"             # expression | zero | point | box
    expression = "abs(x)"

    [discretization]
    dt = 0.01
    dx = 0.01
    u_max = 10.0                    # optional override of the derived bound
    velocity_samples = 40

Infinite values in CSV output are written as ``inf``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from .grid import INFINITY_THRESHOLD, PLUS_INFINITY, Grid
from .problem import BolzaProblem
from .problem import build_problem as problem_from_description
from .transform import HamiltonianTable, hamiltonian_table
from .value import ValueField, VelocitySearchBox, default_search_box, reconstruct_trajectory, solve_dp

logger = logging.getLogger("hjbolza")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

SCHEMA: dict[str, Any] = {
    "problem": {
        "lagrangian": str, "scale": float, "potential": float, "offset": float, "expression": str,
        "x_independent": bool, "t_final": float, "x_lower": list, "x_upper": list,
        "u_lower": list, "u_upper": list, "u_points": int,
        "terminal": {"kind": str, "expression": str, "point": list, "lower": list, "upper": list,
                     "offset": float},
    },
    "discretization": {
        "dt": float, "dx": float, "u_max": float, "velocity_samples": int, "p_max": float, "p_points": int,
    },
    "verification": {
        "candidate": str, "shift": float, "terminal_offset": float, "tol": float, "compare_tol": float,
        "sample_count": int, "boundary_count": int, "t_min": float, "checks": list, "seed": int,
    },
    "trajectory": {"t": float, "x": list},
    "viability": {
        "set": str, "center": list, "radius": float, "lower": list, "upper": list, "map": str,
        "samples": int, "tol": float, "eps": float, "velocity_radius": float, "scales": list,
        "euler_h": float, "horizon": float,
    },
    "output": {
        "field": str, "hamiltonian": str, "report": str, "trajectory": str, "viability": str, "compare": str,
    },
}

POSITIVE = {
    "problem.scale", "problem.t_final", "problem.u_points", "discretization.dt", "discretization.dx",
    "discretization.u_max", "discretization.velocity_samples", "discretization.p_max", "discretization.p_points",
    "verification.tol", "verification.compare_tol", "verification.sample_count", "verification.boundary_count",
    "viability.radius", "viability.samples", "viability.tol", "viability.eps", "viability.velocity_radius",
    "viability.euler_h", "viability.horizon", "trajectory.t",
}

DEFAULTS = {
    "problem": {"lagrangian": "quadratic", "scale": 1.0, "potential": 0.0, "offset": 0.0, "t_final": 1.0,
                "x_lower": [-3.0], "x_upper": [3.0], "u_lower": [-10.0], "u_upper": [10.0], "u_points": 401,
                "terminal": {"kind": "expression", "expression": "abs(x)", "offset": 0.0}},
    "discretization": {"dt": 0.01, "dx": 0.01, "velocity_samples": 40, "p_max": 5.0, "p_points": 401},
    "verification": {"candidate": "field", "shift": 0.0, "terminal_offset": 0.0, "sample_count": 200,
                     "boundary_count": 21, "seed": 0,
                     "checks": ["supersolution", "subsolution", "equation", "lower_subsolution", "initial",
                                "technical", "compare"]},
    "viability": {"set": "ball", "center": [0.0, 0.0], "radius": 1.0, "map": "rotation", "samples": 32,
                  "tol": 0.02, "eps": 0.1, "velocity_radius": 2.0,
                  "scales": [0.02, 0.01, 0.005, 0.0025, 0.00125, 0.000625], "euler_h": 0.01,
                  "horizon": 2 * np.pi},
    "output": {"field": "value.csv", "hamiltonian": "hamiltonian.csv", "report": "report.json",
               "trajectory": "trajectory.csv", "viability": "viability.json", "compare": "compare.json"},
}


def _key_line(text: str, path: str) -> Optional[int]:
    """1-based line of dotted ``path`` (``table.key``) in TOML ``text``."""
    table, _, key = path.rpartition(".")
    header = re.compile(r"^[ \t]*\[+[ \t]*([^\]]+?)[ \t]*\]+")
    assign = re.compile(rf"^[ \t]*{re.escape(key)}[ \t]*=")
    current = ""
    for n, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if current == path:
                return n
        elif current == table and assign.match(line):
            return n
    return None


def _check(section: dict, schema: dict, prefix: str, text: str) -> None:
    for key, value in section.items():
        path = f"{prefix}{key}"
        if key not in schema:
            line = _key_line(text, path)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"unknown key '{path}'{where}")
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}' must be a table")
            _check(value, kind, path + ".", text)
            continue
        ok = isinstance(value, kind) or (kind is float and isinstance(value, int) and not isinstance(value, bool))
        if kind is int and isinstance(value, bool):
            ok = False
        if not ok:
            line = _key_line(text, path)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"'{path}' must be {kind.__name__}, got {type(value).__name__}{where}")
        if path in POSITIVE and not value > 0:
            raise ConfigError(f"'{path}' must be positive, got {value}")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


@dataclass
class RunConfig:
    problem: dict
    discretization: dict
    verification: dict
    trajectory: dict
    viability: dict
    output: dict
    source: Optional[Path] = None

    @classmethod
    def from_text(cls, text: str, source: Optional[Path] = None) -> "RunConfig":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        _check(raw, SCHEMA, "", text)
        merged = _merge({**DEFAULTS, "trajectory": {}}, raw)
        return cls(**{k: merged.get(k, {}) for k in SCHEMA}, source=source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), path)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_text("")


def _vec(values, name: str) -> tuple:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' must be a list of numbers") from exc


def build_problem(cfg: RunConfig, terminal_offset: float = 0.0) -> BolzaProblem:
    """Validated Bolza problem from the ``[problem]`` section and ``dx``."""
    desc = dict(cfg.problem, dx=cfg.discretization["dx"])
    desc["terminal"] = dict(desc["terminal"])
    desc["terminal"]["offset"] = desc["terminal"].get("offset", 0.0) + terminal_offset
    return problem_from_description(desc)


def search_box(cfg: RunConfig, problem: BolzaProblem) -> VelocitySearchBox:
    d = cfg.discretization
    box = default_search_box(problem, d["dt"], d["velocity_samples"])
    if "u_max" in d:
        derivation = dict(box.derivation, u_max=d["u_max"], override=True)
        box = VelocitySearchBox(d["u_max"], box.m, box.dim, derivation)
    return box


def p_grid_for(cfg: RunConfig, dim: int) -> Grid:
    d = cfg.discretization
    return Grid((-d["p_max"],) * dim, (d["p_max"],) * dim, (d["p_points"],) * dim)


# -------------------------------------------------------------- serializers


def fmt(v: float) -> str:
    v = float(v)
    if v >= INFINITY_THRESHOLD or v == np.inf:
        return "inf"
    if v <= -INFINITY_THRESHOLD or v == -np.inf:
        return "-inf"
    return "%.17g" % v


def _parse(s: str) -> float:
    v = float(s)
    return PLUS_INFINITY if v == np.inf else v


def _coord_names(prefix: str, dim: int) -> list[str]:
    return [prefix] if dim == 1 else [f"{prefix}{i}" for i in range(1, dim + 1)]


def write_field_csv(fld: ValueField, path) -> None:
    pts = fld.grid.points()
    vals = fld.values.ravel()
    header = ["t"] + _coord_names("x", fld.x_grid.ndim) + ["V"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row, v in zip(pts, vals):
            fh.write(",".join(fmt(c) for c in row) + "," + fmt(v) + "\n")


def read_field_csv(path) -> ValueField:
    """Inverse of :func:`write_field_csv` for long-form uniform grids."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[_parse(c) for c in r] for r in reader if r])
    if header[0] != "t" or header[-1] != "V":
        raise ValueError(f"{path}: expected header t,x...,V")
    coords = rows[:, :-1]
    axes = [np.unique(coords[:, a]) for a in range(coords.shape[1])]
    grid = Grid(tuple(ax[0] for ax in axes), tuple(ax[-1] for ax in axes), tuple(len(ax) for ax in axes))
    if grid.size != len(rows):
        raise ValueError(f"{path}: rows do not form a full grid")
    order = np.lexsort(coords.T[::-1])
    values = rows[order, -1].reshape(grid.shape)
    h = (axes[0][-1] - axes[0][0]) / (len(axes[0]) - 1)
    x_grid = Grid(grid.lower[1:], grid.upper[1:], grid.counts[1:])
    return ValueField(h, x_grid, values, provenance=f"csv:{Path(path).name}")


def write_hamiltonian_csv(H: HamiltonianTable, path) -> None:
    xs = H.x_grid.points()
    ps = H.p_grid.points()
    header = _coord_names("x", H.x_grid.ndim) + _coord_names("p", H.p_grid.ndim) + ["H"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, x in enumerate(xs):
            xs_txt = ",".join(fmt(c) for c in x)
            for j, p in enumerate(ps):
                fh.write(xs_txt + "," + ",".join(fmt(c) for c in p) + "," + fmt(H.values[i, j]) + "\n")


def write_trajectory_csv(path_obj, L, path) -> None:
    n = path_obj.nodes.shape[1]
    vel = path_obj.velocities
    costs = path_obj.h * L(path_obj.nodes[:-1], vel)
    header = ["s"] + _coord_names("y", n) + _coord_names("u", n) + ["running_cost"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for j, (s, y) in enumerate(zip(path_obj.times, path_obj.nodes)):
            if j < len(vel):
                tail = ",".join(fmt(c) for c in vel[j]) + "," + fmt(costs[j])
            else:
                tail = ",".join([""] * n) + ","
            fh.write(fmt(s) + "," + ",".join(fmt(c) for c in y) + "," + tail + "\n")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------- commands


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("HJBOLZA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HJBOLZA_THREADS must be an integer, got {env!r}")
    return 1


def _solve(cfg: RunConfig, problem: BolzaProblem, threads: int) -> ValueField:
    d = cfg.discretization
    return solve_dp(problem, d["dt"], cfg.problem["t_final"], search=search_box(cfg, problem), threads=threads)


def cmd_conjugate(cfg: RunConfig, out: Path, args) -> int:
    problem = build_problem(cfg)
    H = hamiltonian_table(problem.lagrangian, problem.x_grid, p_grid_for(cfg, problem.dim), threads=_threads(args))
    write_hamiltonian_csv(H, out / cfg.output["hamiltonian"])
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path, args) -> int:
    problem = build_problem(cfg)
    fld = _solve(cfg, problem, _threads(args))
    write_field_csv(fld, out / cfg.output["field"])
    if cfg.trajectory:
        tr = cfg.trajectory
        path = reconstruct_trajectory(fld, problem, tr.get("t", fld.t_final), _vec(tr.get("x", [0.0]), "trajectory.x"))
        write_trajectory_csv(path, problem.lagrangian, out / cfg.output["trajectory"])
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    from .verifier import CandidateFunction, CertificateConfig, run_certificate

    threads = _threads(args)
    problem = build_problem(cfg)
    v = cfg.verification
    d = cfg.discretization
    reference = _solve(cfg, problem, threads)
    candidate_spec = v["candidate"]
    if candidate_spec == "field":
        if v["terminal_offset"]:
            cand = CandidateFunction.from_field(_solve(cfg, build_problem(cfg, v["terminal_offset"]), threads),
                                                f"field(phi{v['terminal_offset']:+g})")
        else:
            cand = CandidateFunction.from_field(reference, "field")
    else:
        cand = CandidateFunction.from_expression(candidate_spec)
    if v["shift"]:
        cand = cand.shifted(v["shift"])
    tol = args.tol if args.tol is not None else v.get("tol")
    config = CertificateConfig(
        h=d["dt"], t_final=cfg.problem["t_final"], search=search_box(cfg, problem), p_max=d["p_max"],
        p_points=d["p_points"], tol=tol, compare_tol=v.get("compare_tol"), sample_count=v["sample_count"],
        boundary_count=v["boundary_count"], t_min=v.get("t_min"), checks=tuple(v["checks"]), seed=v["seed"],
        threads=threads)
    H = hamiltonian_table(problem.lagrangian, problem.x_grid, p_grid_for(cfg, problem.dim), threads=threads)
    report = run_certificate(problem, cand, config, reference=reference, H=H)
    write_json(report.to_dict(), out / cfg.output["report"])
    for c in report.checks:
        print(f"{c.name:18s} {c.verdict}")
    print(report.conclusion)
    return EXIT_FAIL if report.any_fail else EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path, args) -> int:
    from .verifier import compare_fields

    a = read_field_csv(args.fields[0])
    b = read_field_csv(args.fields[1])
    tol = args.tol if args.tol is not None else cfg.verification.get("compare_tol", 0.0)
    res = compare_fields(b, a, "eq", tol, cfg.verification.get("t_min", 0.0))
    payload = {"reference": str(args.fields[0]), "candidate": str(args.fields[1]), **res.to_dict()}
    write_json(payload, out / cfg.output["compare"])
    print(f"max_abs_diff {fmt(res.details['max_abs_diff'])} {res.verdict}")
    return EXIT_OK if res.verdict == "PASS" else EXIT_FAIL


def build_viability(cfg: RunConfig):
    """Set, velocity map and boundary sample from the ``[viability]`` section."""
    from .nonsmooth import ball_set, box_set
    from .viability import outward_map, rotation_map

    v = cfg.viability
    if v["set"] == "ball":
        center = np.array(_vec(v["center"], "viability.center"))
        K = ball_set(center, v["radius"])
        ang = 2 * np.pi * np.arange(v["samples"]) / v["samples"]
        points = center + v["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    elif v["set"] == "box":
        lo, hi = np.array(_vec(v["lower"], "viability.lower")), np.array(_vec(v["upper"], "viability.upper"))
        K = box_set(lo, hi)
        s = np.linspace(0, 1, v["samples"] // 4, endpoint=False)
        edges = [np.stack([lo[0] + (hi[0] - lo[0]) * s, np.full_like(s, lo[1])], -1),
                 np.stack([np.full_like(s, hi[0]), lo[1] + (hi[1] - lo[1]) * s], -1),
                 np.stack([hi[0] - (hi[0] - lo[0]) * s, np.full_like(s, hi[1])], -1),
                 np.stack([np.full_like(s, lo[0]), hi[1] - (hi[1] - lo[1]) * s], -1)]
        points = np.concatenate(edges)
    else:
        raise ConfigError(f"unknown viability set {v['set']!r}")
    maps = {"rotation": rotation_map, "outward": outward_map}
    if v["map"] not in maps:
        raise ConfigError(f"unknown velocity map {v['map']!r}")
    return K, maps[v["map"]](), points


def cmd_viability(cfg: RunConfig, out: Path, args) -> int:
    from .viability import Escaped, check_viability_domain, descent_report, polar_condition, viable_euler

    v = cfg.viability
    tol = args.tol if args.tol is not None else v["tol"]
    K, G, points = build_viability(cfg)
    scales = [float(s) for s in v["scales"]]
    reports = [
        check_viability_domain(K, G, points, tol, scales, v["velocity_radius"]),
        polar_condition(K, G, points, tol, scales, radius=v["velocity_radius"]),
        descent_report(K, G, points, v["velocity_radius"], v["eps"], h_sequence=scales),
    ]
    payload = {"checks": [r.to_dict() for r in reports]}
    try:
        path = viable_euler(K, G, points[0], v["euler_h"], v["horizon"], v["velocity_radius"])
        payload["euler"] = {"escaped": False, "steps": len(path.nodes) - 1,
                            "closure": float(np.linalg.norm(path.nodes[-1] - path.nodes[0])),
                            "drift_constant": path.info.get("drift_constant")}
    except Escaped as exc:
        payload["euler"] = {"escaped": True, "step": exc.step, "message": str(exc)}
    write_json(payload, out / cfg.output["viability"])
    for r in reports:
        print(f"{r.name:18s} {r.verdict}")
    print("euler", "escaped" if payload["euler"]["escaped"] else f"closure {payload['euler']['closure']:.4g}")
    return EXIT_FAIL if any(r.verdict == "FAIL" for r in reports) else EXIT_OK


COMMANDS = {
    "conjugate": cmd_conjugate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "viability": cmd_viability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjbolza", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "conjugate": "tabulate the Hamiltonian H(x, p) to CSV",
        "solve": "compute the DP value field (and optional trajectory) to CSV",
        "verify": "certify a candidate solution, JSON report",
        "compare": "diff two field CSVs",
        "viability": "viability checks for a set and velocity map, JSON report",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (env HJBOLZA_THREADS)")
        p.add_argument("--tol", type=float, default=None, help="tolerance override")
        if name == "compare":
            p.add_argument("fields", nargs=2, type=Path, help="reference and candidate field CSVs")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"hjbolza: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
