"""Built-in problems with closed-form value functions where one is known."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .expr import parse_expression as _e
from .problem import Constants, ControlProblem, interval_controls, sphere_controls


def _exprs(*texts: str):
    return tuple(_e(t) for t in texts)


@dataclass(frozen=True)
class Oracle:
    """Closed-form value on a region.  Call as ``oracle(x1, x2)`` or ``oracle(X)``."""

    fn: Callable[[np.ndarray], np.ndarray]
    region: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, *args):
        if len(args) == 1:
            X = np.asarray(args[0], dtype=float)
        else:
            X = np.asarray(args, dtype=float)
        out = self.fn(X)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Benchmark:
    name: str
    problem: ControlProblem
    oracle: Oracle | None = None
    notes: str = ""
    grid: tuple[int, ...] = ()
    error_region: Callable[[np.ndarray], np.ndarray] | None = None
    kappa: float = 1.0
    extras: dict = field(default_factory=dict)


# -- oracles ---------------------------------------------------------------
def _radial(X):
    return np.linalg.norm(X, axis=-1) - 1.0


def _radial_grad(X):
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def _outside_unit(X):
    return np.linalg.norm(X, axis=-1) > 1.0


def _exa_value(X):
    x1, x2 = X[..., 0], X[..., 1]
    return np.sqrt(1.0 + np.cbrt(x2)) - np.abs(x1)


def _exa_grad(X):
    x1, x2 = X[..., 0], X[..., 1]
    c = np.cbrt(x2)
    with np.errstate(divide="ignore"):
        g2 = 1.0 / (6.0 * np.sqrt(1.0 + c) * c * c)
    return np.stack([-np.sign(x1), g2], axis=-1)


def _exa_region(X):
    x1, x2 = X[..., 0], X[..., 1]
    with np.errstate(invalid="ignore"):
        return (x2 > -1.0) & (np.abs(x1) < np.sqrt(np.maximum(1.0 + np.cbrt(x2), 0.0)))


def _exb_value(X):
    x1, x2 = X[..., 0], X[..., 1]
    return np.sign(x2) * np.abs(x2) ** 0.6 - x1


def _exb_grad(X):
    x2 = X[..., 1]
    with np.errstate(divide="ignore"):
        g2 = 0.6 * np.abs(x2) ** -0.4
    return np.stack([-np.ones_like(x2), g2], axis=-1)


def _exb_region(X):
    x1, x2 = X[..., 0], X[..., 1]
    return x2 > np.cbrt(x1**5)


# -- problems ----------------------------------------------------------------
_SQUARE = [[-2.0, 2.0], [-2.0, 2.0]]
_EXA_H = "x2 - (x1^2 - 1)^3"
_EXA_DH = ("-6*x1*(x1^2 - 1)^2", "1")


def _eik(count: int) -> Benchmark:
    prob = ControlProblem(
        d=2, m=2, f=_exprs("u1", "u2"), r=_e("1"), g=_e("0"), h=_e("x1^2 + x2^2 - 1"),
        controls=sphere_controls(count, 2), domain=_SQUARE,
        constants=Constants(N=1.001, r0=1.0, G=0.0, rho0=1.0),
        Df=(_exprs("0", "0"), _exprs("0", "0")), Dr=_exprs("0", "0"), Dg=_exprs("0", "0"),
        Dh=_exprs("2*x1", "2*x2"), name=f"EIK{count}",
    )
    oracle = Oracle(_radial, _outside_unit, _radial_grad)

    def region(X):
        r = np.linalg.norm(X, axis=-1)
        return (r >= 1.1) & (r <= 1.9)

    return Benchmark(f"EIK{count}", prob, oracle, "minimum time to the unit disk", (161, 161), region)


def _eik3() -> Benchmark:
    prob = ControlProblem(
        d=3, m=3, f=_exprs("u1", "u2", "u3"), r=_e("1"), g=_e("0"), h=_e("x1^2 + x2^2 + x3^2 - 1"),
        controls=sphere_controls(24, 3), domain=[[-2.0, 2.0]] * 3,
        constants=Constants(N=1.001, r0=1.0, G=0.0, rho0=1.0),
        Df=tuple(_exprs("0", "0", "0") for _ in range(3)), Dr=_exprs("0", "0", "0"),
        Dg=_exprs("0", "0", "0"), Dh=_exprs("2*x1", "2*x2", "2*x3"), name="EIK3",
    )
    oracle = Oracle(_radial, _outside_unit, _radial_grad)

    def region(X):
        r = np.linalg.norm(X, axis=-1)
        return (r >= 1.2) & (r <= 1.8)

    return Benchmark("EIK3", prob, oracle, "three-dimensional smoke test", (41, 41, 41), region)


def _exa() -> Benchmark:
    prob = ControlProblem(
        d=2, m=1, f=_exprs("u1", "0"), r=_e("1"), g=_e("0"), h=_e(_EXA_H),
        controls=interval_controls(11), domain=[[-2.0, 2.0], [-0.5, 1.5]],
        constants=Constants(N=1.001, r0=1.0, G=0.0, rho0=0.1),
        Df=(_exprs("0", "0"), _exprs("0", "0")), Dr=_exprs("0", "0"), Dg=_exprs("0", "0"),
        Dh=_exprs(*_EXA_DH), name="EXA",
    )
    oracle = Oracle(_exa_value, _exa_region, _exa_grad)

    def region(X):
        x1, x2 = X[..., 0], X[..., 1]
        return (x2 >= 0.1) & (x2 <= 1.2) & (np.abs(x1) <= 1.8) & _exa_region(X)

    return Benchmark(
        "EXA", prob, oracle,
        "horizontal motion towards a double-well target; non-Lipschitz along {x2 = 0, |x1| < 1}",
        (201, 171), region, extras={"band": 0.1},
    )


def _exb() -> Benchmark:
    prob = ControlProblem(
        d=2, m=1, f=_exprs("u1", "0"), r=_e("1"), g=_e("0"), h=_e("x2 - cbrt(x1^5)"),
        controls=interval_controls(11), domain=[[-2.0, 2.0], [-1.0, 1.0]],
        constants=Constants(N=1.001, r0=1.0, G=0.0, rho0=0.0),
        Df=(_exprs("0", "0"), _exprs("0", "0")), Dr=_exprs("0", "0"), Dg=_exprs("0", "0"),
        Dh=_exprs("-5/3*cbrt(x1^2)", "1"), name="EXB",
    )
    oracle = Oracle(_exb_value, _exb_region, _exb_grad)

    def region(X):
        return (np.abs(X[..., 1]) >= 0.1) & _exb_region(X)

    return Benchmark(
        "EXB", prob, oracle, "target below x2 = x1^(5/3); horizontal tangency at the origin",
        (201, 101), region, kappa=0.5, extras={"band": 0.1},
    )


def _gen() -> Benchmark:
    prob = ControlProblem(
        d=2, m=2, f=_exprs("u1", "u2"), r=_e("1 + x1^2"), g=_e("0.1*x1"), h=_e("x1^2 + x2^2 - 1"),
        controls=sphere_controls(16, 2), domain=_SQUARE,
        constants=Constants(N=1.001, r0=1.0, G=0.1, rho0=1.0),
        Df=(_exprs("0", "0"), _exprs("0", "0")), Dr=_exprs("2*x1", "0"), Dg=_exprs("0.1", "0"),
        Dh=_exprs("2*x1", "2*x2"), name="GEN",
    )
    return Benchmark("GEN", prob, None, "state-dependent running cost and linear terminal cost", (161, 161))


def _rgen() -> Benchmark:
    prob = ControlProblem(
        d=2, m=1, f=_exprs("u1", "0.2"), r=_e("1"), g=_e("0"), h=_e(_EXA_H),
        controls=interval_controls(11), domain=[[-2.0, 2.0], [-0.5, 1.5]],
        constants=Constants(N=1.03, r0=1.0, G=0.0, rho0=0.1),
        Df=(_exprs("0", "0"), _exprs("0", "0")), Dr=_exprs("0", "0"), Dg=_exprs("0", "0"),
        Dh=_exprs(*_EXA_DH), name="RGEN",
    )
    return Benchmark(
        "RGEN", prob, None, "double-well target with vertical drift; tangential exits off the axis",
        (201, 171), kappa=0.5,
    )


_BUILDERS = {
    "EIK16": lambda: _eik(16),
    "EIK64": lambda: _eik(64),
    "EIK3": _eik3,
    "EXA": _exa,
    "EXB": _exb,
    "GEN": _gen,
    "RGEN": _rgen,
}
_CACHE: dict[str, Benchmark] = {}

NAMES = tuple(_BUILDERS)


def builtin(name: str) -> Benchmark:
    key = name.strip().upper()
    if key not in _BUILDERS:
        raise ConfigError(f"unknown builtin {name!r}; known: {', '.join(NAMES)}")
    if key not in _CACHE:
        _CACHE[key] = _BUILDERS[key]()
    return _CACHE[key]


# -- convergence runs ----------------------------------------------------------
@dataclass
class ConvergenceRow:
    name: str
    n: tuple[int, ...]
    spacing: float
    linf: float
    l1: float
    nodes: int
    sweeps: int
    solve_time: float

    def as_row(self) -> list:
        return [self.name, "x".join(map(str, self.n)), self.spacing, self.linf, self.l1, self.nodes, self.sweeps]


CONVERGENCE_HEADER = ["name", "n", "spacing", "linf", "l1", "nodes", "sweeps"]


def _resolution(res, d: int) -> tuple[int, ...]:
    if isinstance(res, (int, np.integer)):
        return (int(res),) * d
    out = tuple(int(v) for v in res)
    if len(out) != d:
        raise ConfigError(f"resolution {res} does not match d={d}")
    return out


def error_mask(bench: Benchmark, field, collar: int = 3) -> np.ndarray:
    """Nodes used for oracle comparison: the benchmark region minus a target collar."""
    from .grid import CONVERGED, dilate

    X = field.grid.nodes()
    mask = field.status == CONVERGED
    region = bench.error_region or bench.oracle.region
    mask &= region(X)
    mask &= bench.oracle.region(X)
    mask &= ~dilate(field.status != CONVERGED, collar)
    return mask


def run_benchmark(name: str, resolutions: Sequence, opts: dict | None = None) -> list[ConvergenceRow]:
    """Solve at each resolution and compare with the oracle on the benchmark region."""
    from .grid import build_grid, solve_value

    bench = builtin(name)
    if bench.oracle is None:
        raise ConfigError(f"{bench.name} has no closed-form oracle")
    opts = dict(opts or {})
    rows = []
    for res in resolutions:
        n = _resolution(res, bench.problem.d)
        grid = build_grid(bench.problem.domain, n)
        t0 = time.perf_counter()
        fld = solve_value(bench.problem, grid, **opts)
        elapsed = time.perf_counter() - t0
        mask = error_mask(bench, fld)
        err = np.abs(fld.values - bench.oracle(grid.nodes()))[mask]
        cell = float(np.prod(grid.spacing))
        rows.append(
            ConvergenceRow(
                bench.name, n, float(np.max(grid.spacing)),
                float(err.max()) if err.size else float("nan"),
                float(err.sum() * cell), int(mask.sum()), int(fld.stats["sweeps"]), elapsed,
            )
        )
    return rows
