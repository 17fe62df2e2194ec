"""Backward extremals, forward synthesis from a value field, transported normals, certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateCostateError,
    DomainExitError,
    TerminalDataError,
    ValidationError,
)
from .geometry import N0, N1, BoundaryPoint, boundary_point, default_tol_m
from .grid import BIG, CONVERGED, ValueField, interpolate
from .hamiltonian import TIE_TOL, hamiltonian, horizontal_hamiltonian, solve_terminal_multiplier
from .problem import ControlProblem

NONHORIZONTAL, HORIZONTAL = "NONHORIZONTAL", "HORIZONTAL"
TIE, DEGENERATE_FAN = "TIE", "DEGENERATE_FAN"
CERTIFIED, REFUTED, INCONCLUSIVE, CERTIFIED_BY_VALUE = (
    "CERTIFIED",
    "REFUTED",
    "INCONCLUSIVE",
    "CERTIFIED_BY_VALUE",
)
COSTATE_EPS = 1e-14
STALL_SPEED = 1e-12
TIE_REL = 1e-12
EXIT_SLACK_CELLS = 2.0
MAX_SPLITS = 16


@dataclass(frozen=True)
class TerminalData:
    x_star: np.ndarray
    xi: np.ndarray
    cls: str
    margin: float
    p_star: np.ndarray
    q_star: np.ndarray | None = None
    lam: float | None = None


def terminal_data(
    p: ControlProblem, x_star, q_star=None, tol_m: float | None = None
) -> TerminalData:
    """Terminal costate at a boundary point: ``q* - lam xi`` (transversal) or ``-xi`` (tangential)."""
    bp = x_star if isinstance(x_star, BoundaryPoint) else boundary_point(p, x_star, tol_m)
    if bp.cls == N1:
        q = p.terminal_gradient(bp.x) if q_star is None else np.asarray(q_star, dtype=float)
        lam = solve_terminal_multiplier(p, bp.x, bp.xi, q, tol_m)
        return TerminalData(bp.x, bp.xi, N1, bp.margin, q - lam * bp.xi, q, lam)
    if bp.cls == N0:
        return TerminalData(bp.x, bp.xi, N0, bp.margin, -bp.xi)
    raise TerminalDataError(f"boundary point {bp.x.tolist()} has negative margin {bp.margin:.3e}")


@dataclass
class ExtremalArc:
    kind: str
    t: np.ndarray
    y: np.ndarray
    p: np.ndarray
    u_index: np.ndarray  # control selected at each node
    flags: list[str]
    terminal: TerminalData
    truncated: bool = False

    @property
    def degenerate(self) -> np.ndarray:
        return np.array([f != "" for f in self.flags], dtype=bool)

    @property
    def degenerate_fan(self) -> np.ndarray:
        return np.array([f == DEGENERATE_FAN for f in self.flags], dtype=bool)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


class _Selector:
    """Argmax of ``-p.f - r`` (or ``-p.f``) with lexicographic tie-breaking."""

    def __init__(self, p: ControlProblem, running: bool, tie_break: int | None, fan: bool):
        self.p = p
        self.running = running
        self.tie_break = tie_break
        self.fan = fan
        order = np.lexsort(p.controls.T[::-1])
        self.rank = np.empty(len(order), dtype=int)
        self.rank[order] = np.arange(len(order))

    def __call__(self, y: np.ndarray, q: np.ndarray) -> tuple[int, str]:
        s = -(self.p.velocities(y) @ q)
        if self.running:
            s = s - self.p.costs(y)
        best = s.max()
        ties = np.flatnonzero(s >= best - TIE_TOL)
        if len(ties) == 1:
            return int(ties[0]), ""
        if self.tie_break is not None and self.tie_break in ties:
            return int(self.tie_break), TIE
        if self.fan and len(ties) == len(s) and self.tie_break is None:
            return -1, DEGENERATE_FAN
        return int(ties[np.argmin(self.rank[ties])]), TIE


def _rhs(p: ControlProblem, k: int, y: np.ndarray, q: np.ndarray, running: bool):
    """Right-hand side in reversed time ``s = tau* - t``."""
    if k < 0:
        return np.zeros_like(y), np.zeros_like(q)
    w = p.controls[k]
    dy = -p.dynamics(y, w)
    dq = p.dynamics_jacobian(y, w).T @ q
    if running:
        dq = dq + p.running_gradient(y, w)
    return dy, dq


def _rk4(p, k_of, y, q, h, running):
    """One RK4 step; ``k_of(y, q)`` chooses the control at every stage."""
    k1 = _rhs(p, k_of(y, q), y, q, running)
    y2, q2 = y + 0.5 * h * k1[0], q + 0.5 * h * k1[1]
    k2 = _rhs(p, k_of(y2, q2), y2, q2, running)
    y3, q3 = y + 0.5 * h * k2[0], q + 0.5 * h * k2[1]
    k3 = _rhs(p, k_of(y3, q3), y3, q3, running)
    y4, q4 = y + h * k3[0], q + h * k3[1]
    k4 = _rhs(p, k_of(y4, q4), y4, q4, running)
    return (
        y + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        q + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
    )


def _integrate(
    p: ControlProblem,
    td: TerminalData,
    T: float,
    step: float,
    running: bool,
    kind: str,
    tie_break: int | None,
    on_exit: str,
) -> ExtremalArc:
    if T < 0 or step <= 0:
        raise ValidationError("need T >= 0 and step > 0")
    select = _Selector(p, running, tie_break, fan=not running)
    y = td.x_star.astype(float).copy()
    q = td.p_star.astype(float).copy()
    S, Ys, Qs, Us, Fl = [0.0], [y.copy()], [q.copy()], [], []
    k0, flag = select(y, q)
    Us.append(k0)
    Fl.append(flag)
    s = 0.0
    truncated = False
    n_steps = int(math.ceil(T / step - 1e-9)) if T > 0 else 0
    for i in range(n_steps):
        s_end = min(T, (i + 1) * step)
        splits = 0
        while s < s_end - 1e-15:
            h = s_end - s
            k_start = Us[-1]
            y_new, q_new = _rk4(p, select_k(select), y, q, h, running)
            k_end, _ = select(y_new, q_new)
            if k_end != k_start and splits < MAX_SPLITS and k_start >= 0:
                # freeze the current control up to the switching time
                frozen = lambda yy, qq, kk=k_start: kk  # noqa: E731
                lo, hi = 0.0, h
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    ym, qm = _rk4(p, frozen, y, q, mid, running)
                    if select(ym, qm)[0] == k_start:
                        lo = mid
                    else:
                        hi = mid
                h = hi
                y_new, q_new = _rk4(p, frozen, y, q, h, running)
                splits += 1
            y, q, s = y_new, q_new, s + h
            if not bool(p.in_domain(y, 1e-9)):
                if on_exit == "stop":
                    truncated = True
                    break
                raise DomainExitError(f"extremal left the domain box at {y.tolist()}")
            if float(np.linalg.norm(q)) < COSTATE_EPS:
                raise DegenerateCostateError(f"costate vanished at {y.tolist()}")
            k, flag = select(y, q)
            S.append(s)
            Ys.append(y.copy())
            Qs.append(q.copy())
            Us.append(k)
            Fl.append(flag)
        if truncated:
            break
    S = np.array(S)
    t = S[-1] - S
    return ExtremalArc(
        kind,
        t[::-1].copy(),
        np.array(Ys)[::-1].copy(),
        np.array(Qs)[::-1].copy(),
        np.array(Us)[::-1].copy(),
        Fl[::-1],
        td,
        truncated,
    )


def select_k(select: _Selector) -> Callable:
    return lambda yy, qq: select(yy, qq)[0]


def backward_extremal(
    p: ControlProblem,
    td: TerminalData,
    T: float,
    step: float = 1e-3,
    tie_break: int | None = None,
    on_exit: str = "raise",
) -> ExtremalArc:
    """Characteristic ``y' = f``, ``p' = -Dxf^T p - Dxr`` integrated backward from ``(x*, p*)``.

    RK4 with fixed step; the control is the maximizer of ``-p.f - r`` at every
    stage, and steps are split at control switches so the Hamiltonian stays
    constant to integration accuracy.
    """
    if td.cls != N1:
        raise TerminalDataError("transversal terminal data required")
    H = hamiltonian(p, td.x_star, td.p_star).value
    if abs(H) > 1e-10:
        raise TerminalDataError(f"terminal data inconsistent: H(x*, p*) = {H:.3e}")
    return _integrate(p, td, T, step, True, NONHORIZONTAL, tie_break, on_exit)


def backward_horizontal(
    p: ControlProblem,
    td: TerminalData,
    T: float,
    step: float = 1e-3,
    tie_break: int | None = None,
    on_exit: str = "raise",
) -> ExtremalArc:
    """Horizontal characteristic ``p' = -Dxf^T p`` from ``p* = -xi`` at a tangential point."""
    if td.cls != N0:
        raise TerminalDataError("tangential normal required")
    return _integrate(p, td, T, step, False, HORIZONTAL, tie_break, on_exit)


def check_maximum_principle(p: ControlProblem, arc: ExtremalArc) -> tuple[float, np.ndarray]:
    fn = hamiltonian if arc.kind == NONHORIZONTAL else horizontal_hamiltonian
    res = np.array([abs(fn(p, y, q).value) for y, q in zip(arc.y, arc.p)])
    return float(res.max()), res


# -- trajectories --------------------------------------------------------------
@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    u_index: np.ndarray  # control per step (len(t) - 1); -1 for controls outside the sample
    controls: np.ndarray  # control vector per step
    cost: float
    exit_point: np.ndarray | None
    running_cost: float = 0.0
    terminal_cost: float = 0.0

    @property
    def exited(self) -> bool:
        return self.exit_point is not None


def _first_hit(p: ControlProblem, y: np.ndarray, v: np.ndarray, smax: float, samples: int = 8):
    """First ``s`` in ``(0, smax]`` with ``h(y + s v) <= 0`` or None."""
    prev = 0.0
    for j in range(1, samples + 1):
        s = smax * j / samples
        if float(p.level(y + s * v)) <= 0.0:
            lo, hi = prev, s
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if float(p.level(y + mid * v)) <= 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-15 * max(1.0, hi):
                    break
            return hi
        prev = s
    return None


def _candidates(p: ControlProblem, fld: ValueField, y: np.ndarray, step: float):
    """Cost of each control for one synthesis step, and the exit lengths where a run ends in the target."""
    F = p.velocities(y)
    R = p.costs(y)
    speed = np.maximum(np.linalg.norm(F, axis=-1), 1e-12)
    reach = step + 2.0 * float(np.max(fld.spacing)) / speed
    costs = np.empty(len(F))
    exits: list[float | None] = []
    feet = y + step * F
    interp = fld.sample(feet)
    for k in range(len(F)):
        s = _first_hit(p, y, F[k], reach[k])
        if s is not None:
            costs[k] = s * R[k] + float(p.terminal_cost(y + s * F[k]))
        else:
            costs[k] = step * R[k] + interp[k]
        exits.append(s)
    return costs, exits


def _straight_exit(p: ControlProblem, y: np.ndarray, budget: float, fld: ValueField):
    """Cheapest control whose straight run from ``y`` enters the target at cost ``<= budget``.

    Returns ``(k, cost, s)`` with ``s`` the run time, or None.
    """
    F = p.velocities(y)
    speed = np.linalg.norm(F, axis=-1)
    horizon = max(budget, 0.0) / p.constants.r0
    n = max(8, int(math.ceil(horizon * float(speed.max()) / (0.5 * float(np.min(fld.spacing))))))
    tt = horizon * np.arange(1, n + 1) / n
    P = y + tt[None, :, None] * F[:, None, :]
    hit = (p.level(P) <= 0.0) & (speed[:, None] > STALL_SPEED)
    best = None
    for k in np.flatnonzero(hit.any(axis=1)):
        j = int(np.argmax(hit[k]))
        lo = tt[j - 1] if j > 0 else 0.0
        s = _first_hit(p, y + lo * F[k], F[k], tt[j] - lo, samples=1)
        if s is None:
            continue
        s += lo
        w = p.controls[k]
        ts = np.linspace(0.0, s, 9)
        rr = p.running_cost(y + ts[:, None] * F[k], w)
        cost = float(np.sum(0.5 * (rr[1:] + rr[:-1]) * np.diff(ts))) + float(p.terminal_cost(y + s * F[k]))
        if cost <= budget and (best is None or cost < best[1]):
            best = (int(k), cost, s)
    return best


def forward_synthesis(
    p: ControlProblem,
    fld: ValueField,
    x0,
    step: float | None = None,
    max_steps: int | None = None,
    first_control: int | None = None,
) -> Trajectory:
    """Greedy feedback ``argmin_w [step r + I[V](y + step f)]`` with exact exits.

    Runs that reach the target within about two cells are followed straight to
    the crossing, found by bisection to machine precision.
    """
    y = np.asarray(x0, dtype=float).copy()
    if not bool(fld.grid.contains(y)):
        raise DomainExitError(f"{y.tolist()} lies outside the grid box")
    step = 0.5 * float(np.min(fld.spacing)) if step is None else float(step)
    if float(p.level(y)) <= 0.0:
        g = float(p.terminal_cost(y))
        return Trajectory(np.array([0.0]), y[None].copy(), np.empty(0, int), np.empty((0, p.m)), g, y.copy(), 0.0, g)
    V0 = float(fld.sample(y))
    if V0 >= BIG / 2:
        raise DomainExitError(f"{y.tolist()} is not reached in the field")
    if max_steps is None:
        max_steps = int(math.ceil(4.0 * (abs(V0) + 1.0) / (p.constants.r0 * step))) + 100
    ts, ys, us = [0.0], [y.copy()], []
    t = 0.0
    running = 0.0
    prev = -1
    slack = EXIT_SLACK_CELLS * float(np.max(fld.spacing))
    for i in range(max_steps):
        costs, exits = _candidates(p, fld, y, step)
        # standing still only accumulates running cost; interpolation can make it tie
        costs[np.linalg.norm(p.velocities(y), axis=-1) <= STALL_SPEED] = np.inf
        if i == 0 and first_control is not None:
            k = int(first_control)
        else:
            k = int(np.argmin(costs))
            if prev >= 0 and costs[prev] <= costs[k] + TIE_REL * (1.0 + abs(costs[k])):
                k = prev
            if exits[k] is None:
                # one-step lookahead misreads V next to tangential exits; accept a
                # straight run into the target when it is within the grid accuracy
                run = _straight_exit(p, y, float(costs[k]) + slack, fld)
                if run is not None and run[1] <= costs[k] + slack:
                    k, exits[k] = run[0], run[2]
        prev = k
        w = p.controls[k]
        f = p.dynamics(y, w)
        r = float(p.running_cost(y, w))
        if exits[k] is not None:
            s = exits[k]
            pieces = max(1, int(math.ceil(s / step - 1e-9)))
            for j in range(pieces):
                y1 = y + (s / pieces) * f
                running += 0.5 * (s / pieces) * (float(p.running_cost(y, w)) + float(p.running_cost(y1, w)))
                y = y1
                t += s / pieces
                ts.append(t)
                ys.append(y.copy())
                us.append(k)
            g = float(p.terminal_cost(y))
            return Trajectory(np.array(ts), np.array(ys), np.array(us), p.controls[np.array(us)],
                              running + g, y.copy(), running, g)
        y = y + step * f
        running += step * r
        t += step
        ts.append(t)
        ys.append(y.copy())
        us.append(k)
        if not bool(fld.grid.contains(y)):
            raise DomainExitError(f"synthesized trajectory left the grid box at {y.tolist()}")
    raise ConvergenceError(f"no exit within {max_steps} steps from {np.asarray(x0).tolist()}")


def synthesize_branches(
    p: ControlProblem,
    fld: ValueField,
    x0,
    step: float | None = None,
    max_branches: int = 8,
    tie_rtol: float = 1e-6,
) -> list[Trajectory]:
    """One trajectory per control tied for the first synthesis step (at most ``max_branches``)."""
    y = np.asarray(x0, dtype=float)
    step = 0.5 * float(np.min(fld.spacing)) if step is None else float(step)
    if float(p.level(y)) <= 0.0:
        return [forward_synthesis(p, fld, y, step)]
    costs, _ = _candidates(p, fld, y, step)
    best = float(costs.min())
    ties = np.flatnonzero(costs <= best + tie_rtol * (1.0 + abs(best)))[:max_branches]
    return [forward_synthesis(p, fld, y, step, first_control=int(k)) for k in ties]


def simulate(
    p: ControlProblem, x0, control, step: float = 1e-3, max_time: float = 100.0
) -> Trajectory:
    """Constant-control trajectory until it enters the target."""
    w = np.atleast_1d(np.asarray(control, dtype=float))
    if w.shape != (p.m,):
        raise ValidationError(f"control must have {p.m} components")
    match = np.flatnonzero(np.all(np.isclose(p.controls, w, atol=1e-12), axis=1))
    kidx = int(match[0]) if len(match) else -1
    y = np.asarray(x0, dtype=float).copy()
    ts, ys = [0.0], [y.copy()]
    t, running = 0.0, 0.0
    while t < max_time:
        f = p.dynamics(y, w)
        r = float(p.running_cost(y, w))
        s = _first_hit(p, y, f, step, samples=1)
        if s is not None:
            y = y + s * f
            running += s * r
            t += s
            ts.append(t)
            ys.append(y.copy())
            g = float(p.terminal_cost(y))
            n = len(ts) - 1
            return Trajectory(np.array(ts), np.array(ys), np.full(n, kidx), np.tile(w, (n, 1)),
                              running + g, y.copy(), running, g)
        y = y + step * f
        running += step * r
        t += step
        ts.append(t)
        ys.append(y.copy())
    raise ConvergenceError(f"constant control {w.tolist()} did not reach the target within t={max_time}")


# -- transported normals --------------------------------------------------------
def transport_along(
    p: ControlProblem, traj: Trajectory, p_end: np.ndarray, running: bool, substeps: int = 1
) -> np.ndarray:
    """Adjoint equation integrated backward along a stored trajectory; returns the costate at every node."""
    q = np.asarray(p_end, dtype=float).copy()
    out = [q.copy()]
    for i in range(len(traj.t) - 2, -1, -1):
        dt = float(traj.t[i + 1] - traj.t[i])
        w = traj.controls[i]
        y0, y1 = traj.y[i], traj.y[i + 1]
        h = dt / substeps
        for j in range(substeps):
            def rhs(frac, qq):
                yy = y1 + frac * (y0 - y1)
                dq = p.dynamics_jacobian(yy, w).T @ qq
                if running:
                    dq = dq + p.running_gradient(yy, w)
                return dq

            a = j / substeps
            da = 1.0 / substeps
            k1 = rhs(a, q)
            k2 = rhs(a + 0.5 * da, q + 0.5 * h * k1)
            k3 = rhs(a + 0.5 * da, q + 0.5 * h * k2)
            k4 = rhs(a + da, q + h * k3)
            q = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(q.copy())
    return np.array(out[::-1])


@dataclass
class TransportResult:
    n1: list[np.ndarray]
    n0: list[np.ndarray]
    branches: list[Trajectory]
    classes: list[str]
    costates: list[np.ndarray] = field(default_factory=list)


def transported_normals(
    p: ControlProblem,
    fld: ValueField,
    x,
    step: float | None = None,
    max_branches: int = 8,
    tol_m: float | None = None,
) -> TransportResult:
    """Terminal normals carried back to ``x`` along synthesized optimal trajectories.

    Transversal exits contribute ``p(0)`` of the full adjoint system started at
    ``q* - lam xi``; tangential exits contribute the unit ``p(0)`` of the
    horizontal adjoint started at ``-xi``.
    """
    tol_m = default_tol_m(p) if tol_m is None else tol_m
    branches = synthesize_branches(p, fld, x, step, max_branches)
    n1, n0, classes, curves = [], [], [], []
    for tr in branches:
        bp = boundary_point(p, tr.exit_point, tol_m)
        classes.append(bp.cls)
        if bp.cls == N1:
            td = terminal_data(p, bp, tol_m=tol_m)
            qs = transport_along(p, tr, td.p_star, running=True)
            n1.append(qs[0])
            curves.append(qs)
        elif bp.cls == N0:
            qs = transport_along(p, tr, -bp.xi, running=False)
            nrm = float(np.linalg.norm(qs[0]))
            if nrm < COSTATE_EPS:
                raise DegenerateCostateError(f"horizontal costate vanished at {np.asarray(x).tolist()}")
            n0.append(qs[0] / nrm)
            curves.append(qs)
        else:
            curves.append(np.empty((0, p.d)))
    return TransportResult(_dedupe(n1), _dedupe(n0), branches, classes, curves)


def _dedupe(vs: list[np.ndarray], tol: float = 1e-9) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for v in vs:
        if all(np.linalg.norm(v - u) > tol * (1 + np.linalg.norm(u)) for u in out):
            out.append(v)
    return out


# -- supergradient inequalities ------------------------------------------------------
def _ball_nodes(fld: ValueField, x: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    X = fld.grid.nodes().reshape(-1, fld.grid.d)
    V = fld.values.reshape(-1)
    ok = fld.status.reshape(-1) == CONVERGED
    ok &= np.linalg.norm(X - x, axis=1) <= radius
    return X[ok], V[ok]


def verify_supergradient(
    fld: ValueField, x, q, sigma: float, radius: float, atol: float | None = None
) -> tuple[bool, float]:
    """``V(z) <= V(x) + q.(z - x) + sigma |z - x|^2`` at converged nodes ``z`` in the ball."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    atol = float(np.max(fld.spacing)) if atol is None else atol
    Z, Vz = _ball_nodes(fld, x, radius)
    if len(Z) == 0:
        return True, 0.0
    Vx = interpolate(fld, x)
    D = Z - x
    viol = Vz - Vx - D @ q - sigma * np.sum(D * D, axis=1)
    worst = max(0.0, float(viol.max()))
    return worst <= atol, worst


def verify_horizontal_supergradient(
    fld: ValueField, x, xi, sigma: float, radius: float, atol: float | None = None
) -> tuple[bool, float]:
    """``-xi.(z - x) <= sigma (|z - x|^2 + |beta - V(x)|^2)`` over hypograph samples ``(z, beta)``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    h = float(np.max(fld.spacing))
    atol = h if atol is None else atol
    Z, Vz = _ball_nodes(fld, x, radius)
    if len(Z) == 0:
        return True, 0.0
    Vx = interpolate(fld, x)
    D = Z - x
    lhs = -(D @ xi)
    d2 = np.sum(D * D, axis=1)
    # the most demanding admissible level is the one closest to V(x): V(x) itself
    # when V(z) >= V(x), else V(z); nodes with V(z) < V(x) - radius carry no sampled level
    gap = np.where(Vz >= Vx, 0.0, Vz - Vx)
    lhs = np.where(Vz >= Vx - radius, lhs, -np.inf)
    viol = lhs - sigma * (d2 + gap * gap)
    worst = max(0.0, float(viol.max()))
    return worst <= atol, worst


# -- optimality certificates ----------------------------------------------------------
@dataclass
class Certificate:
    verdict: str
    cost: float
    value: float
    checks: list[dict] = field(default_factory=list)


def _path_cost(p: ControlProblem, arc: ExtremalArc) -> float:
    total = 0.0
    for i in range(len(arc.t) - 1):
        k = arc.u_index[i] if arc.u_index[i] >= 0 else arc.u_index[i + 1]
        if k < 0:
            continue
        w = p.controls[k]
        dt = arc.t[i + 1] - arc.t[i]
        total += 0.5 * dt * (float(p.running_cost(arc.y[i], w)) + float(p.running_cost(arc.y[i + 1], w)))
    return total + float(p.terminal_cost(arc.y[-1]))


def certify_optimality(
    p: ControlProblem,
    fld: ValueField,
    path: ExtremalArc | Trajectory,
    p_curve: np.ndarray | Sequence | None = None,
    n_checks: int = 10,
    tol: float | None = None,
) -> Certificate:
    """Classify a path reaching the target as certified optimal, refuted, or undecided.

    A costate curve is certified when at sampled nodes it is a proximal
    supergradient of the field (with ``sigma = 1/(2 rho) + 1`` from the local
    exterior-sphere estimate) and the Hamiltonian vanishes along the path.
    """
    from .regularity import exterior_sphere_radius

    sp = float(np.max(fld.spacing))
    tol = 5.0 * sp if tol is None else tol
    if isinstance(path, ExtremalArc):
        y, t = path.y, path.t
        cost = _path_cost(p, path)
        ctrl = [p.controls[k] if k >= 0 else None for k in path.u_index]
        if p_curve is None:
            p_curve = path.p
    else:
        y, t = path.y, path.t
        cost = path.cost
        ctrl = [path.controls[min(i, len(path.controls) - 1)] if len(path.controls) else None for i in range(len(t))]
    value = interpolate(fld, y[0])
    if cost > value + 10.0 * sp:
        return Certificate(REFUTED, cost, value)
    if p_curve is None:
        verdict = CERTIFIED_BY_VALUE if abs(cost - value) <= tol else INCONCLUSIVE
        return Certificate(verdict, cost, value)
    P = np.asarray(p_curve, dtype=float)
    radius = 5.0 * sp
    interior = [i for i in range(len(t)) if float(fld.problem.level(y[i])) > 0.0] if fld.problem else list(range(len(t)))
    if not interior:
        return Certificate(INCONCLUSIVE, cost, value)
    picks = sorted(set(np.linspace(0, len(interior) - 1, min(n_checks, len(interior))).round().astype(int)))
    checks = []
    ok = True
    for j in picks:
        i = interior[j]
        q = P[i]
        v = np.append(-q, 1.0)
        v /= np.linalg.norm(v)
        rho = exterior_sphere_radius(fld, y[i], v, radius)
        sigma = 1.0 / (2.0 * rho) + 1.0 if np.isfinite(rho) and rho > 0 else 1.0
        holds, worst = verify_supergradient(fld, y[i], q, sigma, radius)
        w = ctrl[i]
        ham = abs(float(-(q @ p.dynamics(y[i], w)) - p.running_cost(y[i], w))) if w is not None else 0.0
        good = holds and ham <= tol
        ok &= good
        checks.append({"t": float(t[i]), "sigma": sigma, "worst": worst, "hamiltonian": ham, "ok": bool(good)})
    return Certificate(CERTIFIED if ok else INCONCLUSIVE, cost, value, checks)
