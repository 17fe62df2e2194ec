"""Command-line entry point: ``exitgrid <command> --config file.toml``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError, ValidationError
from .problem import ControlProblem, problem_from_dict, tomllib, validate_hypotheses

log = logging.getLogger("exitgrid")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("solve", "extremal", "synthesize", "diagnose", "sweep", "bench")


# -- configuration --------------------------------------------------------------------
def load_config(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _problem(cfg: dict) -> ControlProblem:
    if "problem" in cfg:
        return problem_from_dict(cfg["problem"])
    return problem_from_dict(cfg)


def parse_grid(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    try:
        n = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--grid expects comma-separated integers, got {text!r}") from exc
    return n


def _grid_n(p: ControlProblem, cfg: dict, override) -> tuple[int, ...]:
    if override is not None:
        n = override
    elif "grid" in cfg:
        g = cfg["grid"]
        n = g.get("n") if isinstance(g, dict) else g
    else:
        from .benchmarks import builtin

        src = cfg.get("problem", cfg)
        n = builtin(src["builtin"]).grid if "builtin" in src and builtin(src["builtin"]).grid else 101
    if isinstance(n, int):
        n = (n,) * p.d
    n = tuple(int(v) for v in n)
    if len(n) == 1:
        n = n * p.d
    if len(n) != p.d:
        raise ConfigError(f"grid {n} does not match problem dimension {p.d}")
    return n


def _kappa(cfg: dict, section: dict) -> float:
    if "kappa" in section:
        return float(section["kappa"])
    src = cfg.get("problem", cfg)
    if "builtin" in src:
        from .benchmarks import builtin

        return builtin(src["builtin"]).kappa
    return 1.0


def _points(section: dict, key: str, d: int) -> list[np.ndarray]:
    raw = section.get(key, [])
    arr = np.asarray(raw, dtype=float)
    if arr.size == 0:
        return []
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise ConfigError(f"{key}: points must have {d} coordinates")
    return list(arr)


# -- commands ---------------------------------------------------------------------------
class Context:
    def __init__(self, cfg: dict, out: Path, seed: int, grid, quiet: bool):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.grid_override = grid
        self.quiet = quiet
        self.problem = _problem(cfg)
        self.timings: dict[str, float] = {}

    def section(self, name: str) -> dict:
        sec = self.cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def solve(self):
        from .grid import build_grid, solve_value

        opts = dict(self.section("solver"))
        opts.pop("binary", None)
        n = _grid_n(self.problem, self.cfg, self.grid_override)
        t0 = time.perf_counter()
        fld = solve_value(self.problem, build_grid(self.problem.domain, n), **opts)
        self.timings["solve"] = time.perf_counter() - t0
        log.info("solved %s on %s in %.3f s (%d sweeps)", self.problem.name, n, self.timings["solve"],
                 fld.stats["sweeps"])
        return fld


def _stats(fld) -> dict:
    return {k: v for k, v in fld.stats.items() if k != "history"}


def cmd_solve(ctx: Context) -> int:
    from .grid import hjb_residual_field
    from .io import write_field_binary, write_field_csv, write_gnuplot_field, write_json

    fld = ctx.solve()
    rows = write_field_csv(ctx.out / "field.csv", fld)
    if ctx.section("solver").get("binary", False):
        write_field_binary(ctx.out / "field.exgf", fld)
    res = hjb_residual_field(ctx.problem, fld)
    hyp = validate_hypotheses(ctx.problem, seed=ctx.seed)
    write_json(ctx.out / "residuals.json", {
        "problem": ctx.problem.name,
        "grid": list(fld.grid.n),
        "rows": rows,
        "residual": {"linf": res.linf, "l1": res.l1, "nodes": res.count},
        "solver": _stats(fld),
        "hypotheses": hyp.to_dict(),
    })
    write_gnuplot_field(ctx.out / "field.gp", "field.csv", ctx.problem.name)
    ctx.say(f"field.csv: {rows} rows; HJB residual linf={res.linf:.3e}")
    return EXIT_OK


def cmd_extremal(ctx: Context) -> int:
    from .arcs import (
        HORIZONTAL,
        backward_extremal,
        backward_horizontal,
        check_maximum_principle,
        forward_synthesis,
        terminal_data,
    )
    from .geometry import N0, project_to_boundary
    from .io import write_arc_csv, write_gnuplot_curves, write_json

    sec = ctx.section("extremal")
    p = ctx.problem
    step = float(sec.get("step", 1e-3))
    jobs = []
    for x in _points(sec, "x_star", p.d):
        jobs.append((project_to_boundary(p, x), float(sec.get("T", 1.0))))
    starts = _points(sec, "x0", p.d)
    if starts:
        fld = ctx.solve()
        for x0 in starts:
            tr = forward_synthesis(p, fld, x0)
            jobs.append((project_to_boundary(p, tr.exit_point), float(tr.t[-1])))
    if not jobs:
        raise ConfigError("[extremal] needs x_star or x0")
    report, names = [], []
    for k, (bp, T) in enumerate(jobs):
        td = terminal_data(p, bp)
        on_exit = sec.get("on_exit", "stop")
        if td.cls == N0:
            arc = backward_horizontal(p, td, T, step, on_exit=on_exit)
        else:
            arc = backward_extremal(p, td, T, step, on_exit=on_exit)
        worst, res = check_maximum_principle(p, arc)
        name = f"arc_{k:03d}.csv"
        write_arc_csv(ctx.out / name, arc, res)
        names.append(name)
        report.append({
            "file": name, "x_star": bp.x, "class": td.cls, "kind": arc.kind, "T": T,
            "p_star": td.p_star, "lambda": td.lam, "max_abs_H": worst,
            "degenerate_fan": bool(arc.degenerate_fan.any()), "truncated": arc.truncated,
            "y_start": arc.y[0], "p_start": arc.p[0],
        })
        label = "H0" if arc.kind == HORIZONTAL else "H"
        ctx.say(f"{name}: {td.cls} arc, max|{label}| = {worst:.3e}")
    write_json(ctx.out / "maximum_principle.json", {"problem": p.name, "step": step, "arcs": report})
    write_gnuplot_curves(ctx.out / "arcs.gp", names, p.name)
    return EXIT_OK


def cmd_synthesize(ctx: Context) -> int:
    from .arcs import certify_optimality, synthesize_branches
    from .grid import interpolate
    from .io import write_gnuplot_curves, write_json, write_trajectory_csv

    sec = ctx.section("synthesize")
    p = ctx.problem
    starts = _points(sec, "x0", p.d)
    if not starts:
        raise ConfigError("[synthesize] needs x0")
    fld = ctx.solve()
    step = sec.get("step")
    out, names = [], []
    for i, x0 in enumerate(starts):
        for j, tr in enumerate(synthesize_branches(p, fld, x0, step, int(sec.get("max_branches", 8)))):
            name = f"traj_{i:03d}_{j}.csv"
            write_trajectory_csv(ctx.out / name, tr)
            names.append(name)
            cert = certify_optimality(p, fld, tr)
            out.append({
                "file": name, "x0": x0, "branch": j, "cost": tr.cost, "V": interpolate(fld, x0),
                "gap": tr.cost - interpolate(fld, x0), "exit_point": tr.exit_point,
                "verdict": cert.verdict,
            })
            ctx.say(f"{name}: cost {tr.cost:.6f}, V {interpolate(fld, x0):.6f}, {cert.verdict}")
    write_json(ctx.out / "synthesis.json", {"problem": p.name, "grid": list(fld.grid.n), "trajectories": out})
    write_gnuplot_curves(ctx.out / "trajectories.gp", names, p.name)
    return EXIT_OK


def cmd_diagnose(ctx: Context) -> int:
    from .io import write_json, write_mask_csv
    from .regularity import regularity_report

    sec = ctx.section("diagnose")
    p = ctx.problem
    pts = _points(sec, "points", p.d)
    n_random = int(sec.get("random_points", 0))
    fld = ctx.solve()
    if n_random:
        from .grid import CONVERGED

        rng = np.random.default_rng(ctx.seed)
        X = fld.grid.nodes()[fld.status == CONVERGED]
        pick = rng.choice(len(X), min(n_random, len(X)), replace=False)
        pts += list(X[np.sort(pick)])
    kappa = _kappa(ctx.cfg, sec)
    rep = regularity_report(p, fld, pts, kappa=kappa, theta_s=float(sec.get("theta_s", 0.5)))
    body = rep.to_dict()
    body.update({"problem": p.name, "grid": list(fld.grid.n), "kappa": kappa, "seed": ctx.seed})
    write_json(ctx.out / "regularity.json", body)
    write_mask_csv(ctx.out / "masks.csv", fld.grid, {"sigma_V": rep.sigma_V, "sigma_V_infty": rep.sigma_V_infty})
    ctx.say(f"sigma_V: {int(rep.sigma_V.sum())} nodes, sigma_V_infty: {int(rep.sigma_V_infty.sum())} nodes")
    for d in rep.points:
        ctx.say(f"  {d.x.tolist()}: differentiable={d.differentiable} pointed={d.pointed}")
    return EXIT_OK


def cmd_sweep(ctx: Context) -> int:
    from .geometry import sample_boundary
    from .io import write_boundary_csv, write_csv, write_gnuplot_curves, write_json, write_polylines_csv
    from .regularity import detect_nonlipschitz_set, polyline_distance, sweep_singular_set

    sec = ctx.section("sweep")
    p = ctx.problem
    bps = sample_boundary(p, int(sec.get("n_boundary", 200)))
    fld = ctx.solve() if sec.get("use_field", True) else None
    res = sweep_singular_set(p, bps, float(sec.get("T", 2.0)), float(sec.get("step", 1e-2)), fld)
    write_boundary_csv(ctx.out / "boundary.csv", bps)
    write_polylines_csv(ctx.out / "sweep.csv", res.curves, p.d)
    write_csv(ctx.out / "degenerate.csv", [f"x{i + 1}" for i in range(p.d)], res.degenerate_points)
    summary: dict[str, Any] = {
        "problem": p.name, "curves": len(res.curves), "bases": res.bases,
        "degenerate_points": res.degenerate_points,
    }
    if fld is not None and res.curves:
        sp = float(np.max(fld.spacing))
        mask = detect_nonlipschitz_set(fld, _kappa(ctx.cfg, sec))
        M = fld.grid.nodes()[mask]
        if len(M):
            pts = np.concatenate(res.curves)
            d_curve = np.array([np.min(np.linalg.norm(M - q, axis=1)) for q in pts]) / sp
            summary["curve_to_mask_max_cells"] = float(d_curve.max())
            summary["mask_near_curve_fraction"] = float(np.mean(polyline_distance(M, res.curves) <= 3 * sp))
    write_json(ctx.out / "sweep.json", summary)
    gp = ctx.out / "sweep.gp"
    gp.write_text(
        "set datafile separator ','\nset size ratio -1\n"
        "plot 'sweep.csv' every ::1 using 3:4 with points pt 7 ps 0.3 title 'sweep', "
        "'degenerate.csv' every ::1 using 1:2 with points pt 6 ps 1.5 title 'degenerate'\n"
    )
    ctx.say(f"{len(res.curves)} curves, {len(res.degenerate_points)} degenerate points")
    return EXIT_OK


def cmd_bench(ctx: Context) -> int:
    from .benchmarks import run_benchmark
    from .io import write_convergence_csv, write_json

    sec = ctx.section("bench")
    names = sec.get("names") or [ctx.cfg.get("problem", ctx.cfg).get("builtin")]
    if not names or names == [None]:
        raise ConfigError("[bench] needs names")
    resolutions = sec.get("resolutions", [81, 161])
    rows = []
    for name in names:
        t0 = time.perf_counter()
        got = run_benchmark(name, resolutions, dict(ctx.section("solver")))
        ctx.timings[f"bench:{name}"] = time.perf_counter() - t0
        for r in got:
            log.info("%s n=%s solve %.3f s", r.name, r.n, r.solve_time)
        rows += got
    write_convergence_csv(ctx.out / "convergence.csv", rows)
    ratios = {}
    for name in names:
        errs = [r.linf for r in rows if r.name == name.upper()]
        ratios[name.upper()] = [a / b for a, b in zip(errs, errs[1:])]
    write_json(ctx.out / "convergence.json", {"rows": [dict(zip(
        ["name", "n", "spacing", "linf", "l1", "nodes", "sweeps"], r.as_row())) for r in rows],
        "ratios": ratios})
    for r in rows:
        ctx.say(f"{r.name} n={'x'.join(map(str, r.n))}: linf={r.linf:.4e} l1={r.l1:.4e}")
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "extremal": cmd_extremal,
    "synthesize": cmd_synthesize,
    "diagnose": cmd_diagnose,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


# -- entry point -------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exitgrid", description="Exit-time value functions and their regularity.")
    ap.add_argument("--version", action="version", version=f"exitgrid {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML problem/run configuration")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--seed", type=int, default=0, help="seed for sampled diagnostics")
    ap.add_argument("--grid", help="node counts n1,n2[,n3]; overrides the config")
    ap.add_argument("--quiet", action="store_true", help="no console output")
    return ap


def _limit_threads() -> None:
    raw = os.environ.get("EXITGRID_THREADS")
    if not raw:
        return
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"EXITGRID_THREADS must be an integer, got {raw!r}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("exitgrid")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    t0 = time.perf_counter()
    try:
        _limit_threads()
        ctx = Context(load_config(args.config), out, args.seed, parse_grid(args.grid), args.quiet)
        code = HANDLERS[args.command](ctx)
        log.info("%s finished in %.3f s", args.command, time.perf_counter() - t0)
        return code
    except ValidationError as exc:
        log.error("validation failure: %s", exc)
        print(f"exitgrid: {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        print(f"exitgrid: {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        root.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
