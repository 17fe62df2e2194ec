"""Control problems: dynamics, costs, target, finite control sample, declared constants."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError, HypothesisError, ValidationError
from .expr import Expr, as_expression

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class Constants:
    """Declared bounds: speed ``N``, running-cost floor ``r0``, terminal Lipschitz ``G``, inner-ball ``rho0``."""

    N: float
    r0: float
    G: float = 0.0
    rho0: float = 0.0


def sphere_controls(count: int, m: int = 2) -> np.ndarray:
    """``count`` nearly uniform unit vectors in R^m (equally spaced angles for m=2)."""
    if count < 1:
        raise ConfigError("control count must be positive")
    if m == 1:
        return np.array([[-1.0], [1.0]])[: max(count, 1)]
    if m == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
    elif m == 3:
        # Fibonacci lattice
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = np.pi * (1.0 + 5.0**0.5) * k
        rho = np.sqrt(1.0 - z * z)
        pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    else:
        raise ConfigError("sphere controls are only provided for m <= 3")
    pts[np.abs(pts) < 1e-15] = 0.0
    return pts


def interval_controls(count: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    if count < 1:
        raise ConfigError("control count must be positive")
    if count == 1:
        return np.array([[0.5 * (lo + hi)]])
    return np.linspace(lo, hi, count)[:, None]


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Exit-time problem ``y' = f(y, u)``, cost ``int r + g(exit)``, target ``{h <= 0}``.

    Immutable; every evaluator is vectorized over leading state axes and over the
    control sample.
    """

    d: int
    m: int
    f: tuple[Expr, ...]
    r: Expr
    g: Expr
    h: Expr
    controls: np.ndarray
    domain: np.ndarray
    constants: Constants
    Df: tuple[tuple[Expr, ...], ...] | None = None
    Dr: tuple[Expr, ...] | None = None
    Dg: tuple[Expr, ...] | None = None
    Dh: tuple[Expr, ...] | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if controls.size == 0:
            raise ValidationError("control list is empty")
        if controls.shape[1] != self.m:
            raise ValidationError(f"controls have dimension {controls.shape[1]}, expected m={self.m}")
        controls.setflags(write=False)
        object.__setattr__(self, "controls", controls)
        domain = np.asarray(self.domain, dtype=float).reshape(self.d, 2)
        if np.any(domain[:, 1] <= domain[:, 0]):
            raise ValidationError(f"degenerate domain box {domain.tolist()}")
        domain.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        if len(self.f) != self.d:
            raise ValidationError(f"f has {len(self.f)} components, expected d={self.d}")
        c = self.constants
        if not c.r0 > 0:
            raise HypothesisError("(H2) violated: declared r0 must be positive")
        if c.N <= 0:
            raise HypothesisError("(H1) violated: declared N must be positive")
        if c.G < 0 or not c.G < c.r0 / c.N:
            raise HypothesisError(f"(H3) violated: need 0 <= G < r0/N, got G={c.G}, r0/N={c.r0 / c.N}")
        allowed = {f"x{i + 1}" for i in range(self.d)} | {f"u{j + 1}" for j in range(self.m)}
        for e in self._all_expressions():
            extra = e.variables() - allowed
            if extra:
                raise ValidationError(f"expression {e} uses {sorted(extra)} outside d={self.d}, m={self.m}")
        for e in (self.g, self.h) + (self.Dg or ()) + (self.Dh or ()):
            if any(v.startswith("u") for v in e.variables()):
                raise ValidationError(f"{e} must not depend on controls")

    def _all_expressions(self) -> list[Expr]:
        out = list(self.f) + [self.r, self.g, self.h]
        for extra in (self.Dr, self.Dg, self.Dh):
            out += list(extra or ())
        for row in self.Df or ():
            out += list(row)
        return out

    # -- helpers ---------------------------------------------------------
    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def _xs(self, x: np.ndarray, with_controls: bool) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if with_controls:
            return [x[..., i][..., None] for i in range(self.d)]
        return [x[..., i] for i in range(self.d)]

    def _us(self, omega: np.ndarray | None = None) -> list[np.ndarray]:
        if omega is None:
            return [self.controls[:, j] for j in range(self.m)]
        w = np.asarray(omega, dtype=float).reshape(-1)
        return [w[j] for j in range(self.m)]

    @staticmethod
    def _stack(values: Sequence, shape: tuple[int, ...]) -> np.ndarray:
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values], axis=-1)

    # -- vectorized over the whole control sample ------------------------
    def velocities(self, x: np.ndarray) -> np.ndarray:
        """f(x, w_k) for all sampled controls: shape ``x.shape[:-1] + (K, d)``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (self.n_controls,)
        xs, us = self._xs(x, True), self._us()
        return self._stack([fi(xs, us) for fi in self.f], shape)

    def costs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (self.n_controls,)
        return np.broadcast_to(np.asarray(self.r(self._xs(x, True), self._us()), dtype=float), shape).copy()

    def jacobians(self, x: np.ndarray) -> np.ndarray:
        """D_x f for all controls: shape ``(..., K, d, d)``, entry ``[i, j] = d f_i / d x_j``."""
        x = np.asarray(x, dtype=float)
        if self.Df is not None:
            shape = x.shape[:-1] + (self.n_controls,)
            xs, us = self._xs(x, True), self._us()
            rows = [self._stack([e(xs, us) for e in row], shape) for row in self.Df]
            return np.stack(rows, axis=-2)
        return _fd_jacobian(self.velocities, x, self.d)

    def cost_gradients(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Dr is not None:
            shape = x.shape[:-1] + (self.n_controls,)
            return self._stack([e(self._xs(x, True), self._us()) for e in self.Dr], shape)
        return _fd_jacobian(lambda z: self.costs(z)[..., None], x, self.d)[..., 0, :]

    # -- single control --------------------------------------------------
    def dynamics(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xs, us = self._xs(x, False), self._us(omega)
        return self._stack([fi(xs, us) for fi in self.f], x.shape[:-1])

    def running_cost(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.r(self._xs(x, False), self._us(omega)), dtype=float), x.shape[:-1]).copy()

    def dynamics_jacobian(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Df is not None:
            xs, us = self._xs(x, False), self._us(omega)
            rows = [self._stack([e(xs, us) for e in row], x.shape[:-1]) for row in self.Df]
            return np.stack(rows, axis=-2)
        return _fd_jacobian(lambda z: self.dynamics(z, omega), x, self.d)

    def running_gradient(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Dr is not None:
            return self._stack([e(self._xs(x, False), self._us(omega)) for e in self.Dr], x.shape[:-1])
        return _fd_jacobian(lambda z: self.running_cost(z, omega)[..., None], x, self.d)[..., 0, :]

    # -- state-only functions -------------------------------------------
    def terminal_cost(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.g(self._xs(x, False)), dtype=float), x.shape[:-1]).copy()

    def terminal_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Dg is not None:
            return self._stack([e(self._xs(x, False)) for e in self.Dg], x.shape[:-1])
        return _fd_jacobian(lambda z: self.terminal_cost(z)[..., None], x, self.d)[..., 0, :]

    def level(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.h(self._xs(x, False)), dtype=float), x.shape[:-1]).copy()

    def level_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Dh is not None:
            return self._stack([e(self._xs(x, False)) for e in self.Dh], x.shape[:-1])
        return _fd_jacobian(lambda z: self.level(z)[..., None], x, self.d)[..., 0, :]

    def in_target(self, x: np.ndarray) -> np.ndarray:
        return self.level(x) <= 0.0

    def in_domain(self, x: np.ndarray, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain[:, 0] - margin, self.domain[:, 1] + margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def replace(self, **changes: Any) -> "ControlProblem":
        return dataclasses.replace(self, **changes)


def _fd_jacobian(fun, x: np.ndarray, d: int) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + |x|)``; returns ``fun(x).shape + (d,)``."""
    x = np.asarray(x, dtype=float)
    step = FD_REL_STEP * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        dx = step * e
        fp, fm = fun(x + dx), fun(x - dx)
        s = step[..., 0]
        s = s.reshape(s.shape + (1,) * (np.ndim(fp) - s.ndim))
        cols.append((fp - fm) / (2.0 * s))
    return np.stack(cols, axis=-1)


# -- config-level evaluators ----------------------------------------------
def eval_dynamics(p: ControlProblem, x, omega) -> np.ndarray:
    return p.dynamics(x, omega)


def eval_running_cost(p: ControlProblem, x, omega) -> float:
    return float(p.running_cost(x, omega))


def eval_terminal_cost(p: ControlProblem, x) -> float:
    return float(p.terminal_cost(x))


def eval_dynamics_jacobian(p: ControlProblem, x, omega) -> np.ndarray:
    return p.dynamics_jacobian(x, omega)


def eval_running_gradient(p: ControlProblem, x, omega) -> np.ndarray:
    return p.running_gradient(x, omega)


# -- configuration --------------------------------------------------------
_REQUIRED = ("d", "m", "f", "r", "g", "h", "controls", "domain", "constants")


def _parse_controls(spec: Any, m: int) -> np.ndarray:
    if isinstance(spec, Mapping):
        shape = spec.get("shape")
        count = int(spec.get("count", 0))
        if shape == "sphere":
            return sphere_controls(count, m)
        if shape == "interval":
            if m != 1:
                raise ConfigError("interval controls need m = 1")
            return interval_controls(count, float(spec.get("lo", -1.0)), float(spec.get("hi", 1.0)))
        raise ConfigError(f"unknown control shape {shape!r}")
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if m == 1 else arr[None, :]
    return arr


def _parse_constants(spec: Mapping[str, Any]) -> Constants:
    try:
        return Constants(
            N=float(spec["N"]),
            r0=float(spec["r0"]),
            G=float(spec.get("G", 0.0)),
            rho0=float(spec.get("rho0", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"constants table is missing {exc.args[0]!r}") from exc


def _expr_list(items: Any, what: str) -> tuple[Expr, ...]:
    if isinstance(items, (str, int, float)):
        items = [items]
    try:
        return tuple(as_expression(v) for v in items)
    except TypeError as exc:
        raise ConfigError(f"{what} must be a list of expressions") from exc


def problem_from_dict(cfg: Mapping[str, Any]) -> ControlProblem:
    if "builtin" in cfg:
        from .benchmarks import builtin

        prob = builtin(str(cfg["builtin"])).problem
        if "constants" in cfg:
            merged = {**dataclasses.asdict(prob.constants), **dict(cfg["constants"])}
            prob = prob.replace(constants=_parse_constants(merged))
        return prob
    missing = [k for k in _REQUIRED if k not in cfg]
    if missing:
        raise ConfigError(f"problem config is missing field(s): {', '.join(missing)}")
    d, m = int(cfg["d"]), int(cfg["m"])
    df = None
    if "Df" in cfg:
        df = tuple(_expr_list(row, "Df row") for row in cfg["Df"])
    return ControlProblem(
        d=d,
        m=m,
        f=_expr_list(cfg["f"], "f"),
        r=as_expression(cfg["r"]),
        g=as_expression(cfg["g"]),
        h=as_expression(cfg["h"]),
        controls=_parse_controls(cfg["controls"], m),
        domain=np.asarray(cfg["domain"], dtype=float),
        constants=_parse_constants(cfg["constants"]),
        Df=df,
        Dr=_expr_list(cfg["Dr"], "Dr") if "Dr" in cfg else None,
        Dg=_expr_list(cfg["Dg"], "Dg") if "Dg" in cfg else None,
        Dh=_expr_list(cfg["Dh"], "Dh") if "Dh" in cfg else None,
        name=str(cfg.get("name", "custom")),
    )


def parse_problem(config_text: str) -> ControlProblem:
    """Build a problem from TOML text (``builtin = "EXA"`` or explicit fields)."""
    try:
        cfg = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if "problem" in cfg and isinstance(cfg["problem"], Mapping):
        cfg = cfg["problem"]
    return problem_from_dict(cfg)


# -- hypothesis validation ----------------------------------------------
@dataclass
class HypothesisResult:
    status: str  # "pass" | "fail" | "unchecked"
    measured: dict[str, float] = field(default_factory=dict)
    witness: list[float] | None = None
    samples: int = 0
    note: str = ""


@dataclass
class HypothesisReport:
    results: dict[str, HypothesisResult]

    def __getitem__(self, key: str) -> HypothesisResult:
        return self.results[key]

    @property
    def all_pass(self) -> bool:
        return all(r.status != "fail" for r in self.results.values())

    def failed(self) -> list[str]:
        return [k for k, r in self.results.items() if r.status == "fail"]

    def to_dict(self) -> dict[str, Any]:
        return {k: dataclasses.asdict(v) for k, v in self.results.items()}


LIPSCHITZ_CAP = 1e6
H0_TOL = 0.2  # midpoint gap allowed, in units of N; a sampling-density proxy for convexity


def _lipschitz(fun, X: np.ndarray, Y: np.ndarray) -> tuple[float, int]:
    """Largest quotient ``|fun(y) - fun(x)| / |y - x|`` (sup over trailing axes) and its sample index."""
    fx, fy = fun(X), fun(Y)
    dist = np.linalg.norm(Y - X, axis=-1)
    diff = np.abs(fy - fx).reshape(len(X), -1).max(axis=1)
    q = diff / dist
    k = int(np.argmax(q))
    return float(q[k]), k


def validate_hypotheses(
    p: ControlProblem,
    n_samples: int = 10_000,
    seed: int = 0,
    h0_tol: float | None = None,
    n_boundary: int = 400,
) -> HypothesisReport:
    """Monte-Carlo checks of (H0)-(H4) against the declared constants.

    Failures carry the witnessing state.  (H0) is tested on midpoints of
    neighbouring samples of the augmented velocity set, so it detects coarse
    control sampling as well as genuine non-convexity.
    """
    from .geometry import inner_ball_radius, sample_boundary

    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = p.domain[:, 0], p.domain[:, 1]
    X = lo + (hi - lo) * rng.random((n_samples, p.d))
    c = p.constants
    res: dict[str, HypothesisResult] = {}

    # (H1) speed bound and Lipschitz quotients
    F = p.velocities(X)
    speed = np.linalg.norm(F, axis=-1).max(axis=1)
    k = int(np.argmax(speed))
    scale = 1e-3 * float(np.min(hi - lo))
    dirs = rng.normal(size=X.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    Y = X + scale * rng.uniform(0.1, 1.0, size=(n_samples, 1)) * dirs
    lip_f, _ = _lipschitz(p.velocities, X, Y)
    lip_df, _ = _lipschitz(p.jacobians, X, Y)
    h1_ok = speed[k] < c.N and lip_f < LIPSCHITZ_CAP and lip_df < LIPSCHITZ_CAP
    res["H1"] = HypothesisResult(
        "pass" if h1_ok else "fail",
        {"sup_speed": float(speed[k]), "N": c.N, "lip_f": lip_f, "lip_Dxf": lip_df},
        None if h1_ok else X[k].tolist(),
        n_samples,
    )

    # (H2) running cost floor and Lipschitz quotients
    R = p.costs(X)
    rmin_idx = np.unravel_index(int(np.argmin(R)), R.shape)
    rmin = float(R[rmin_idx])
    lip_r, _ = _lipschitz(p.costs, X, Y)
    lip_dr, _ = _lipschitz(p.cost_gradients, X, Y)
    h2_ok = rmin >= c.r0 - 1e-12 and lip_r < LIPSCHITZ_CAP and lip_dr < LIPSCHITZ_CAP
    res["H2"] = HypothesisResult(
        "pass" if h2_ok else "fail",
        {"min_r": rmin, "r0": c.r0, "lip_r": lip_r, "lip_Dxr": lip_dr},
        None if h2_ok else X[rmin_idx[0]].tolist(),
        n_samples,
    )

    # (H0) convexity of {(f, lambda): lambda >= r}, sample-tested
    tol = h0_tol if h0_tol is not None else H0_TOL * c.N
    n0 = min(n_samples, 500)
    P = np.concatenate([F[:n0], R[:n0, :, None]], axis=-1)  # (n0, K, d+1)
    worst, worst_i = 0.0, 0
    K = p.n_controls
    if K > 1:
        D = np.linalg.norm(P[:, :, None, :] - P[:, None, :, :], axis=-1)
        D[:, np.arange(K), np.arange(K)] = np.inf
        nn = np.argmin(D, axis=2)
        mid = 0.5 * (P + np.take_along_axis(P, nn[:, :, None], axis=1))  # (n0, K, d+1)
        dv = np.linalg.norm(P[:, None, :, :-1] - mid[:, :, None, :-1], axis=-1) ** 2
        dl = np.maximum(0.0, P[:, None, :, -1] - mid[:, :, None, -1]) ** 2
        dist = np.sqrt(dv + dl).min(axis=2).max(axis=1)
        worst_i = int(np.argmax(dist))
        worst = float(dist[worst_i])
    h0_ok = worst <= tol
    res["H0"] = HypothesisResult(
        "pass" if h0_ok else "fail",
        {"max_midpoint_gap": worst, "tol": tol},
        None if h0_ok else X[worst_i].tolist(),
        n0,
        "midpoints of nearest-neighbour pairs of sampled (f, r)",
    )

    # (H3) Lipschitz constant of g near the boundary
    bpts = sample_boundary(p, n_boundary)
    if len(bpts) == 0:
        res["H3"] = HypothesisResult("unchecked", note="no boundary points inside the domain box")
        res["H4"] = HypothesisResult("unchecked", note="no boundary points inside the domain box")
        return HypothesisReport(res)
    B = np.array([b.x for b in bpts])
    idx = rng.integers(0, len(B), size=n_samples)
    nb = 0.05 * float(np.min(hi - lo))
    Xg = B[idx] + nb * rng.uniform(-1, 1, size=(n_samples, p.d))
    Yg = Xg + nb * rng.uniform(-1, 1, size=(n_samples, p.d))
    lip_g, kg = _lipschitz(lambda z: p.terminal_cost(z)[:, None], Xg, Yg)
    h3_ok = lip_g <= c.G * (1 + 1e-9) + 1e-12
    res["H3"] = HypothesisResult(
        "pass" if h3_ok else "fail",
        {"lip_g": lip_g, "G": c.G, "r0_over_N": c.r0 / c.N},
        None if h3_ok else Xg[kg].tolist(),
        n_samples,
    )

    # (H4) inner ball radius at sampled boundary points
    step = max(1, len(bpts) // 60)
    radii = [(inner_ball_radius(p, b, search_radius=0.5, n_samples=256), b) for b in bpts[::step]]
    rho_min, b_min = min(radii, key=lambda t: t[0])
    h4_ok = rho_min >= c.rho0 * (1 - 1e-3)
    res["H4"] = HypothesisResult(
        "pass" if h4_ok else "fail",
        {"min_inner_radius": float(rho_min), "rho0": c.rho0},
        None if h4_ok else b_min.x.tolist(),
        len(radii),
    )
    return HypothesisReport(res)
