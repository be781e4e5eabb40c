"""Command-line front end: ``consmooth fit | sample | converge``.

Exit codes: 0 success, 2 bad input, 3 infeasible constraints, 4 solver
failure, 5 rejection sampler ran out of attempts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import NodePosterior, rejection_sample
from .constraints import ConstraintSet
from .convergence import DEFAULT_EVAL_GRID, run_refinement
from .errors import (
    FactorizationError,
    InfeasibleError,
    LowAcceptanceError,
    SmoothingError,
    SolverError,
)
from .kernel import Kernel
from .mesh import Mesh
from .solver import DataSet, build_problem, check_feasible, solve_closed_form, solve_constrained

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_LOW_ACCEPTANCE = 5

_OUTPUTS = {
    "curve": "curve.csv",
    "fit": "fit.json",
    "samples": "samples.csv",
    "report_json": "report.json",
    "report_csv": "report.csv",
}


class InputError(Exception):
    """Malformed data file, config document or flag."""


def _fmt(v) -> str:
    return format(float(v), ".17g")


def read_data_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x,y`` rows; a header line and ``#`` comment lines are optional."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read data file {path}: {exc.strerror}") from None
    rows = [
        r for r in csv.reader(line for line in text.splitlines()
                              if line.strip() and not line.lstrip().startswith("#"))
        if any(cell.strip() for cell in r)
    ]
    cols = (0, 1)
    if rows:
        try:
            [float(c) for c in rows[0][:2]]
        except ValueError:
            header = [c.strip().lower() for c in rows[0]]
            if "x" not in header or "y" not in header:
                raise InputError(f"data header must name columns x and y, got {rows[0]}")
            cols = (header.index("x"), header.index("y"))
            rows = rows[1:]
    if not rows:
        raise InputError("no data rows")
    xs, ys = [], []
    for lineno, r in enumerate(rows, 1):
        try:
            xs.append(float(r[cols[0]]))
            ys.append(float(r[cols[1]]))
        except (IndexError, ValueError):
            raise InputError(f"data row {lineno} is not a pair of numbers: {r}") from None
    xs, ys = np.array(xs), np.array(ys)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InputError("data contains non-finite values")
    if xs.min() < 0.0 or xs.max() > 1.0:
        raise InputError("data x values must lie in [0, 1]")
    return xs, ys


@dataclass
class RunConfig:
    kernel: Kernel
    noise_var: float
    constraints: ConstraintSet
    level: int = 4
    nodes: list | None = None
    seed: int = 0
    eval_grid: int = DEFAULT_EVAL_GRID
    count: int = 1000
    max_attempts: int | None = None
    max_level: int = 6
    outputs: dict = field(default_factory=lambda: dict(_OUTPUTS))

    _FIELDS = ("kernel", "noise_var", "constraints", "level", "nodes", "seed",
               "eval_grid", "count", "max_attempts", "max_level", "outputs")

    @classmethod
    def from_dict(cls, cfg) -> "RunConfig":
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
        unknown = set(cfg) - set(cls._FIELDS)
        if unknown:
            raise InputError(f"config: unknown fields {sorted(unknown)}")
        try:
            kernel = Kernel.from_config(cfg.get("kernel", {"family": "matern32"}))
        except (TypeError, ValueError) as exc:
            raise InputError(f"config.kernel: {exc}") from None
        if "noise_var" not in cfg:
            raise InputError("config.noise_var: required")
        noise_var = _number(cfg, "noise_var")
        if not noise_var > 0:
            raise InputError("config.noise_var: must be positive")
        try:
            cons = ConstraintSet.from_config(cfg.get("constraints"))
        except (TypeError, ValueError) as exc:
            raise InputError(f"config.constraints: {exc}") from None
        out = cls(kernel=kernel, noise_var=noise_var, constraints=cons)
        out.level = _integer(cfg, "level", out.level, lo=0, hi=10)
        out.seed = _integer(cfg, "seed", out.seed, lo=0, hi=2**64 - 1)
        out.eval_grid = _integer(cfg, "eval_grid", out.eval_grid, lo=2)
        out.count = _integer(cfg, "count", out.count, lo=1)
        out.max_level = _integer(cfg, "max_level", out.max_level, lo=2, hi=10)
        if cfg.get("max_attempts") is not None:
            out.max_attempts = _integer(cfg, "max_attempts", 0, lo=1)
        if cfg.get("nodes") is not None:
            nodes = cfg["nodes"]
            if not isinstance(nodes, list) or not all(isinstance(t, (int, float)) for t in nodes):
                raise InputError("config.nodes: must be a list of numbers")
            out.nodes = [float(t) for t in nodes]
        if cfg.get("outputs") is not None:
            outs = cfg["outputs"]
            if not isinstance(outs, dict) or set(outs) - set(_OUTPUTS):
                raise InputError(f"config.outputs: keys must be among {sorted(_OUTPUTS)}")
            out.outputs.update({k: str(v) for k, v in outs.items()})
        return out


def _number(cfg, key):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InputError(f"config.{key}: must be a finite number")
    return float(v)


def _integer(cfg, key, default, lo=None, hi=None):
    if cfg.get(key) is None:
        return default
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise InputError(f"config.{key}: must be an integer")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise InputError(f"config.{key}: must be in [{lo}, {hi if hi is not None else 'inf'}]")
    return v


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


def _mesh_for(cfg: RunConfig, xs) -> Mesh:
    if cfg.nodes is None:
        return Mesh.from_sites(xs, cfg.level)
    try:
        return Mesh(np.array(cfg.nodes), xs)
    except ValueError as exc:
        raise InputError(f"config.nodes: {exc}") from None


def _setup(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    xs, ys = read_data_csv(args.data)
    data = DataSet(xs, ys, cfg.noise_var)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, data, out_dir


def cmd_fit(args) -> int:
    cfg, data, out_dir = _setup(args)
    mesh = _mesh_for(cfg, data.xs)
    p = build_problem(cfg.kernel, mesh, data, cfg.constraints)
    sol = solve_constrained(p)
    grid = np.union1d(np.linspace(0.0, 1.0, cfg.eval_grid), mesh.nodes)
    u = sol.u_hat(grid)
    mean = solve_closed_form(cfg.kernel, data, grid)
    with open(out_dir / cfg.outputs["curve"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u_hat", "posterior_mean_unconstrained"])
        for row in zip(grid, u, mean):
            w.writerow([_fmt(v) for v in row])
    active = [
        {"index": i, "label": p.ineq.labels[i], "multiplier": float(sol.multipliers[i])}
        for i in sol.active_set
    ]
    summary = {
        "N": mesh.n,
        "nodes": mesh.nodes.tolist(),
        "coeffs": sol.coeffs.tolist(),
        "objective": sol.objective,
        "active_constraints": active,
        "kkt_residuals": sol.kkt_residuals.as_dict(),
        "iterations": sol.iterations,
        "jitter_used": p.gram.jitter_used,
        "kernel": cfg.kernel.to_config(),
        "noise_var": cfg.noise_var,
        "constraints": cfg.constraints.to_config(),
    }
    (out_dir / cfg.outputs["fit"]).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"fit: N={mesh.n} objective={sol.objective:.6g} active={len(active)}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg, data, out_dir = _setup(args)
    count = args.count if args.count is not None else cfg.count
    if count < 1:
        raise InputError("--count: must be at least 1")
    mesh = _mesh_for(cfg, data.xs)
    p = build_problem(cfg.kernel, mesh, data, cfg.constraints)
    check_feasible(p.ineq)
    post = NodePosterior(p.moments.mean, p.moments.cov)
    budget = cfg.max_attempts if cfg.max_attempts is not None else 1000 * count
    batch = rejection_sample(post, p.ineq, count, budget, cfg.seed, threads=args.threads)
    batch.write_csv(out_dir / cfg.outputs["samples"], nodes=mesh.nodes)
    print(f"sample: {batch.accepted} draws, acceptance rate {batch.acceptance_rate:.6g}")
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg, data, out_dir = _setup(args)
    max_level = args.max_level if args.max_level is not None else cfg.max_level
    if max_level < 2:
        raise InputError("--max-level: must be at least 2")
    report = run_refinement(cfg.kernel, data, cfg.constraints, max_level, cfg.eval_grid)
    (out_dir / cfg.outputs["report_json"]).write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / cfg.outputs["report_csv"]).write_text(report.to_csv(), encoding="utf-8")
    print(f"converge: {len(report.levels)} levels, gap ratio {report.gap_ratio():.3g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consmooth",
        description="Constrained RKHS smoothing on nested piecewise-linear meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--data", required=True, help="CSV file with columns x,y")
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out-dir", default=".", help="directory for output files")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--threads", type=int, default=1, help="sampling shards")

    sp = sub.add_parser("fit", help="solve the constrained smoothing problem")
    common(sp)
    sp.set_defaults(func=cmd_fit)
    sp = sub.add_parser("sample", help="draw from the truncated posterior")
    common(sp)
    sp.add_argument("--count", type=int, default=None, help="number of accepted draws")
    sp.set_defaults(func=cmd_sample)
    sp = sub.add_parser("converge", help="mesh-refinement convergence report")
    common(sp)
    sp.add_argument("--max-level", type=int, default=None, help="finest refinement level")
    sp.set_defaults(func=cmd_converge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except LowAcceptanceError as exc:
        print(f"low acceptance: {exc}", file=sys.stderr)
        return EXIT_LOW_ACCEPTANCE
    except (SolverError, FactorizationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SmoothingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
