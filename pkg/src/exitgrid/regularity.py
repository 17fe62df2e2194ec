"""Numerical regularity diagnostics of a solved value field.

Masks of non-differentiable and non-Lipschitz nodes, reachable-gradient fans
and their hypograph normal cones, exterior-sphere radii, semiconcavity
estimates, the comparison between fans and transported normals, and the
sweep of tangential boundary points along horizontal characteristics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .arcs import (
    DEGENERATE_FAN,
    TransportResult,
    backward_horizontal,
    terminal_data,
    transported_normals,
)
from .errors import NumericalError, ValidationError
from .geometry import N0, BoundaryPoint, sample_boundary
from .grid import CONVERGED, TARGET, UNREACHED, BIG, ValueField, axis_differences, interpolate
from .problem import ControlProblem

THETA_S = 0.5
KAPPA = 1.0
CLUSTER_DEG = 5.0


# -- masks -------------------------------------------------------------------------
def _stencil_ok(fld: ValueField) -> np.ndarray:
    """Converged nodes whose axis neighbours exist and are neither target nor unreached."""
    _, _, interior = axis_differences(fld)
    ok = interior & (fld.status == CONVERGED)
    d = fld.grid.d
    bad = fld.status != CONVERGED
    for ax in range(d):
        a = [slice(None)] * d
        b = [slice(None)] * d
        a[ax], b[ax] = slice(1, None), slice(None, -1)
        nb = np.zeros_like(bad)
        nb[tuple(b)] |= bad[tuple(a)]
        nb[tuple(a)] |= bad[tuple(b)]
        ok &= ~nb
    return ok


def central_gradients(fld: ValueField) -> np.ndarray:
    fwd, bwd, _ = axis_differences(fld)
    return 0.5 * (fwd + bwd)


def detect_nonlipschitz_set(fld: ValueField, kappa: float = KAPPA) -> np.ndarray:
    """Nodes whose central gradient has norm at least ``kappa / sqrt(h)``."""
    ok = _stencil_ok(fld)
    g = np.linalg.norm(np.nan_to_num(central_gradients(fld)), axis=-1)
    thr = kappa / math.sqrt(float(np.max(fld.spacing)))
    return ok & (g >= thr)


def detect_singular_set(fld: ValueField, theta_s: float = THETA_S, kappa: float = KAPPA) -> np.ndarray:
    """Nodes with a one-sided slope gap above ``theta_s`` on some axis, or a gradient blow-up."""
    ok = _stencil_ok(fld)
    fwd, bwd, _ = axis_differences(fld)
    gap = np.nan_to_num(np.abs(fwd - bwd)).max(axis=-1)
    return (ok & (gap > theta_s)) | detect_nonlipschitz_set(fld, kappa)


# -- fans --------------------------------------------------------------------------
@dataclass
class NormalFan:
    base: np.ndarray  # (x, V(x)) in R^{d+1}
    grads: list[np.ndarray]
    hgrads: list[np.ndarray]
    generators: np.ndarray  # unit rows in R^{d+1}

    @property
    def d(self) -> int:
        return len(self.base) - 1

    @property
    def horizontal_generators(self) -> np.ndarray:
        if not self.hgrads:
            return np.empty((0, self.d + 1))
        return np.array([np.append(-h, 0.0) for h in self.hgrads])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _cluster(vectors: list[np.ndarray], deg: float) -> list[np.ndarray]:
    """Greedy angular clustering of unit vectors; returns normalized cluster means."""
    cos_tol = math.cos(math.radians(deg))
    sums: list[np.ndarray] = []
    for v in vectors:
        for i, s in enumerate(sums):
            if float(_unit(s) @ v) >= cos_tol:
                sums[i] = s + v
                break
        else:
            sums.append(v.copy())
    return [_unit(s) for s in sums]


def generator_of_gradient(g: np.ndarray) -> np.ndarray:
    return _unit(np.append(-np.asarray(g, dtype=float), 1.0))


def generator_of_horizontal(h: np.ndarray) -> np.ndarray:
    return _unit(np.append(-np.asarray(h, dtype=float), 0.0))


def make_fan(base, grads, hgrads, cluster_deg: float = CLUSTER_DEG) -> NormalFan:
    """Fan from raw gradient samples: cluster generators and read the gradients back."""
    gen_g = _cluster([generator_of_gradient(g) for g in grads], cluster_deg)
    gen_h = _cluster([generator_of_horizontal(h) for h in hgrads], cluster_deg)
    grads_c = [-v[:-1] / v[-1] for v in gen_g]
    hgrads_c = [_unit(-v[:-1]) for v in gen_h]
    gens = np.array(gen_g + gen_h) if (gen_g or gen_h) else np.empty((0, len(base)))
    return NormalFan(np.asarray(base, dtype=float), grads_c, hgrads_c, gens)


def reachable_gradient_fan(
    fld: ValueField,
    x,
    radius: float | None = None,
    kappa: float = KAPPA,
    theta_s: float = THETA_S,
    cluster_deg: float = CLUSTER_DEG,
) -> NormalFan:
    """Gradients at smooth nodes near ``x`` and normalized gradients at blow-up nodes.

    Without ``radius`` the ball starts just above one cell and grows by half
    until it holds a usable node (at most three cells), so the fan samples the
    nodes closest to ``x``.
    """
    x = np.asarray(x, dtype=float)
    X = fld.grid.nodes()
    dist = np.linalg.norm(X - x, axis=-1)
    ok = _stencil_ok(fld)
    blow = detect_nonlipschitz_set(fld, kappa)
    sing = detect_singular_set(fld, theta_s, kappa)
    G = central_gradients(fld)
    smooth = ok & ~sing
    if radius is None:
        r = 1.01 * float(np.min(fld.spacing))
        r_max = 3.0 * float(np.max(fld.spacing))
        while r < r_max and not np.any((dist <= r) & (smooth | blow)):
            r *= 1.5
        radius = min(r, r_max)
    near = dist <= radius
    grads = list(G[near & smooth])
    hgrads = [_unit(g) for g in G[near & blow] if np.linalg.norm(g) > 0]
    if not grads and not hgrads:
        raise NumericalError(f"no usable nodes within {radius:g} of {x.tolist()}")
    base = np.append(x, interpolate(fld, x))
    return make_fan(base, grads, hgrads, cluster_deg)


def min_norm_point(G: np.ndarray, iters: int = 200) -> np.ndarray:
    """Minimum-norm point of the convex hull of the rows of ``G`` (Frank-Wolfe with away steps)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m = len(G)
    lam = np.zeros(m)
    lam[int(np.argmin(np.sum(G * G, axis=1)))] = 1.0
    for _ in range(iters):
        z = lam @ G
        grad = G @ z  # derivative of |z|^2 / 2 with respect to the weights
        s = int(np.argmin(grad))
        active = np.flatnonzero(lam > 0)
        a = int(active[np.argmax(grad[active])])
        fw_gap = float(z @ z - grad[s])
        away_gap = float(grad[a] - z @ z)
        if max(fw_gap, away_gap) <= 1e-15:
            break
        if fw_gap >= away_gap:
            d = G[s] - z
            gmax = 1.0
            direction = -lam.copy()
            direction[s] += 1.0
        else:
            d = z - G[a]
            gmax = lam[a] / (1.0 - lam[a]) if lam[a] < 1.0 else 1e12
            direction = lam.copy()
            direction[a] -= 1.0
        dd = float(d @ d)
        if dd <= 1e-30:
            break
        gamma = min(gmax, max(0.0, -float(z @ d) / dd))
        lam = np.clip(lam + gamma * direction, 0.0, None)
        lam /= lam.sum()
    return lam @ G


def check_pointedness(fan: NormalFan | np.ndarray, iters: int = 200, tol: float = 1e-6) -> tuple[bool, float]:
    G = fan.generators if isinstance(fan, NormalFan) else np.atleast_2d(np.asarray(fan, dtype=float))
    if len(G) == 0:
        raise ValidationError("empty fan")
    nrm = float(np.linalg.norm(min_norm_point(G, iters)))
    return nrm > tol, nrm


def check_hypograph_differentiability(
    fan: NormalFan | np.ndarray, angular_tol: float = CLUSTER_DEG
) -> tuple[bool, np.ndarray]:
    """True when every generator lies within ``angular_tol`` degrees of their normalized mean."""
    G = fan.generators if isinstance(fan, NormalFan) else np.atleast_2d(np.asarray(fan, dtype=float))
    if len(G) == 0:
        raise ValidationError("empty fan")
    mean = G.sum(axis=0)
    if np.linalg.norm(mean) < 1e-12:
        return False, mean
    direction = _unit(mean)
    cos = np.clip(G @ direction, -1.0, 1.0)
    return bool(np.all(np.degrees(np.arccos(cos)) <= angular_tol + 1e-12)), direction


# -- hypograph geometry ------------------------------------------------------------------
def exterior_sphere_radius(
    fld: ValueField, x, v, radius: float, depth: int = 5, dbeta: float | None = None
) -> float:
    """``inf |w|^2 / (2 v.w)`` over hypograph samples ``w = (z, beta) - (x, V(x))`` with ``v.w > 0``."""
    x = np.asarray(x, dtype=float)
    v = _unit(np.asarray(v, dtype=float))
    dbeta = float(np.max(fld.spacing)) if dbeta is None else dbeta
    X = fld.grid.nodes().reshape(-1, fld.grid.d)
    V = fld.values.reshape(-1)
    ok = (fld.status.reshape(-1) != UNREACHED) & (np.linalg.norm(X - x, axis=1) <= radius)
    Z, Vz = X[ok], V[ok]
    if len(Z) == 0:
        return float("inf")
    Vx = interpolate(fld, x)
    k = np.arange(depth)
    D = np.repeat(Z - x, depth, axis=0)
    B = (Vz[:, None] - k[None, :] * dbeta).reshape(-1) - Vx
    W = np.column_stack([D, B])
    vw = W @ v
    pos = vw > 1e-14
    if not np.any(pos):
        return float("inf")
    return float(np.min(np.sum(W[pos] ** 2, axis=1) / (2.0 * vw[pos])))


def semiconcavity_constant(fld: ValueField, mask_exclude=None, probe_h: float | None = None) -> float:
    """Largest second difference quotient ``[V(x+he) + V(x-he) - 2V(x)] / h^2`` over usable nodes."""
    d = fld.grid.d
    V = fld.values
    base = fld.status == CONVERGED
    if mask_exclude is not None:
        base = base & ~np.asarray(mask_exclude, dtype=bool)
    best = -np.inf
    if probe_h is None:
        h = fld.spacing
        for ax in range(d):
            c = [slice(None)] * d
            lft = [slice(None)] * d
            rgt = [slice(None)] * d
            c[ax], lft[ax], rgt[ax] = slice(1, -1), slice(None, -2), slice(2, None)
            sd = (V[tuple(rgt)] + V[tuple(lft)] - 2 * V[tuple(c)]) / h[ax] ** 2
            okn = base[tuple(c)]
            okn = okn & (fld.status[tuple(lft)] != UNREACHED) & (fld.status[tuple(rgt)] != UNREACHED)
            if np.any(okn):
                best = max(best, float(sd[okn].max()))
    else:
        X = fld.grid.nodes()[base]
        for ax in range(d):
            e = np.zeros(d)
            e[ax] = probe_h
            vp, vm = fld.sample(X + e), fld.sample(X - e)
            v0 = fld.values[base]
            okn = (vp < BIG / 2) & (vm < BIG / 2)
            if np.any(okn):
                best = max(best, float(((vp + vm - 2 * v0) / probe_h**2)[okn].max()))
    return best


def verify_sublevel_normal(
    fld: ValueField, x, q, alpha: float, sigma: float, radius: float, atol: float | None = None
) -> tuple[bool, float]:
    """``-q/|q| . (z - x) <= sigma |z - x|^2`` for nodes ``z`` in the ball with ``V(z) >= alpha``."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    nq = float(np.linalg.norm(q))
    if nq == 0.0:
        raise ValidationError("q must be nonzero")
    sp = float(np.max(fld.spacing))
    if abs(interpolate(fld, x) - alpha) > sp:
        raise ValidationError(f"|V(x) - alpha| exceeds one spacing at {x.tolist()}")
    atol = sp if atol is None else atol
    X = fld.grid.nodes().reshape(-1, fld.grid.d)
    V = fld.values.reshape(-1)
    sel = (np.linalg.norm(X - x, axis=1) <= radius) & (V >= alpha)
    if not np.any(sel):
        return True, 0.0
    D = X[sel] - x
    viol = -(D @ (q / nq)) - sigma * np.sum(D * D, axis=1)
    worst = max(0.0, float(viol.max()))
    return worst <= atol, worst


# -- fans versus transported normals -------------------------------------------------------
def angle_to_cone(u: np.ndarray, G: np.ndarray) -> float:
    """Angle in degrees between unit ``u`` and the cone spanned by the rows of ``G``."""
    if len(G) == 0:
        return 90.0
    coef, _ = nnls(G.T, u)
    proj = coef @ G
    n = float(np.linalg.norm(proj))
    if n < 1e-12:
        return float(np.degrees(np.arccos(np.clip(np.max(G @ u), -1.0, 1.0))))
    return float(np.degrees(np.arccos(np.clip(float(u @ proj) / n, -1.0, 1.0))))


def cone_hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    """Angular Hausdorff distance (degrees) between the cones spanned by two generator sets."""
    A = np.reshape(A, (-1, A.shape[-1])) if np.size(A) else np.empty((0, 1))
    B = np.reshape(B, (-1, B.shape[-1])) if np.size(B) else np.empty((0, 1))
    if len(A) == 0 and len(B) == 0:
        return 0.0
    if len(A) == 0 or len(B) == 0:
        return 90.0
    return max(max(angle_to_cone(a, B) for a in A), max(angle_to_cone(b, A) for b in B))


@dataclass
class Representation:
    distance_P: float
    distance_inf: float
    pointed: bool
    fan: NormalFan
    transport: TransportResult

    def representation_generators(self) -> np.ndarray:
        rows = [generator_of_gradient(q) for q in self.transport.n1]
        rows += [generator_of_horizontal(q) for q in self.transport.n0]
        return np.array(rows) if rows else np.empty((0, self.fan.d + 1))


def compare_representation(
    p: ControlProblem,
    fld: ValueField,
    x,
    radius: float | None = None,
    kappa: float = KAPPA,
    step: float | None = None,
) -> Representation:
    """Fan of reachable gradients versus transported normals at ``x``, as cone distances."""
    fan = reachable_gradient_fan(fld, x, radius, kappa)
    tr = transported_normals(p, fld, x, step)
    rep = [generator_of_gradient(q) for q in tr.n1] + [generator_of_horizontal(q) for q in tr.n0]
    rep_h = [generator_of_horizontal(q) for q in tr.n0]
    d1 = fan.d + 1
    R = np.array(rep) if rep else np.empty((0, d1))
    Rh = np.array(rep_h) if rep_h else np.empty((0, d1))
    dist_p = cone_hausdorff(fan.generators, R)
    dist_inf = cone_hausdorff(fan.horizontal_generators, Rh)
    pointed, _ = check_pointedness(fan)
    return Representation(dist_p, dist_inf, pointed, fan, tr)


# -- singular sweep --------------------------------------------------------------------------
@dataclass
class SweepResult:
    curves: list[np.ndarray]
    degenerate_points: list[np.ndarray]
    bases: list[np.ndarray] = field(default_factory=list)


def _truncate(p: ControlProblem, fld: ValueField | None, arc, tol: float) -> np.ndarray:
    """Part of a horizontal characteristic (ordered from its base point) that stays admissible."""
    Y = arc.y[::-1]
    T = arc.t[::-1]
    keep = 1
    cost = 0.0
    g_end = float(p.terminal_cost(Y[0]))
    for i in range(1, len(Y)):
        if float(p.level(Y[i])) <= 0.0:
            break
        if fld is not None:
            k = arc.u_index[::-1][i]
            r = float(p.running_cost(Y[i], p.controls[k])) if k >= 0 else p.constants.r0
            cost += r * float(T[i - 1] - T[i])
            if not bool(fld.grid.contains(Y[i])):
                break
            idx, _ = _corner_values(fld, Y[i])
            if cost + g_end > idx + tol:
                break
        keep = i + 1
    return Y[:keep]


def _corner_values(fld: ValueField, y: np.ndarray) -> tuple[float, None]:
    from .grid import _corners

    idx, _ = _corners(fld.grid, y[None])
    vals = fld.values.reshape(-1)[idx[0]]
    st = fld.status.reshape(-1)[idx[0]]
    vals = np.where(st == UNREACHED, BIG, vals)
    return float(vals.max()), None


def sweep_singular_set(
    p: ControlProblem,
    boundary_samples: list[BoundaryPoint] | None = None,
    T: float = 1.0,
    step: float = 1e-2,
    fld: ValueField | None = None,
    n_boundary: int = 200,
    min_points: int = 3,
) -> SweepResult:
    """Horizontal characteristics from tangential boundary points.

    Each curve follows ``y' = f``, ``p' = -Dxf^T p`` backward for time ``T``.
    Curves stop when they enter the target or leave the box; with a field they
    also stop where following them is no longer optimal (the cost to the base
    point exceeds every nearby node value by more than five cells).
    """
    if boundary_samples is None:
        boundary_samples = sample_boundary(p, n_boundary)
    tol = 5.0 * float(np.max(fld.spacing)) if fld is not None else 0.0
    curves, degenerate, bases = [], [], []
    for bp in boundary_samples:
        if bp.cls != N0:
            continue
        td = terminal_data(p, bp)
        arc = backward_horizontal(p, td, T, step, on_exit="stop")
        if arc.flags[-1] == DEGENERATE_FAN:
            degenerate.append(bp.x.copy())
            continue
        poly = _truncate(p, fld, arc, tol)
        if len(poly) >= min_points:
            curves.append(poly)
            bases.append(bp.x.copy())
    return SweepResult(curves, degenerate, bases)


def polyline_distance(points: np.ndarray, curves: list[np.ndarray]) -> np.ndarray:
    """Euclidean distance from each point to the union of polylines."""
    points = np.atleast_2d(points)
    best = np.full(len(points), np.inf)
    for c in curves:
        a, b = c[:-1], c[1:]
        ab = b - a
        L2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
        for s in range(0, len(points), 4096):
            P = points[s:s + 4096]
            t = np.clip(np.einsum("psd,sd->ps", P[:, None, :] - a[None], ab) / L2, 0.0, 1.0)
            proj = a[None] + t[..., None] * ab[None]
            dist = np.linalg.norm(P[:, None, :] - proj, axis=-1).min(axis=1)
            best[s:s + 4096] = np.minimum(best[s:s + 4096], dist)
    return best


# -- report ------------------------------------------------------------------------------------
@dataclass
class PointDiagnostics:
    x: np.ndarray
    value: float
    grads: list[np.ndarray]
    hgrads: list[np.ndarray]
    generators: np.ndarray
    radii: list[float]
    pointed: bool
    min_norm: float
    differentiable: bool
    direction: np.ndarray
    distance_P: float | None = None
    distance_inf: float | None = None
    error: str | None = None


@dataclass
class RegularityReport:
    sigma_V: np.ndarray
    sigma_V_infty: np.ndarray
    points: list[PointDiagnostics]
    semiconcavity: dict[str, float]
    boundary_classes: dict[str, int]
    petrov_margin: float
    residual: dict[str, float]
    sweep: SweepResult | None = None

    def to_dict(self) -> dict:
        from .io import rle_encode

        pts = []
        for pd in self.points:
            pts.append({
                "x": pd.x, "value": pd.value, "grads": pd.grads, "hgrads": pd.hgrads,
                "generators": pd.generators, "exterior_sphere_radii": pd.radii,
                "pointed": pd.pointed, "min_norm": pd.min_norm,
                "hypograph_differentiable": pd.differentiable, "direction": pd.direction,
                "distance_P_deg": pd.distance_P, "distance_inf_deg": pd.distance_inf,
                "error": pd.error,
            })
        out = {
            "sigma_V": rle_encode(self.sigma_V),
            "sigma_V_infty": rle_encode(self.sigma_V_infty),
            "flag_counts": {"sigma_V": int(self.sigma_V.sum()), "sigma_V_infty": int(self.sigma_V_infty.sum())},
            "points": pts,
            "semiconcavity": self.semiconcavity,
            "boundary_classes": self.boundary_classes,
            "petrov_margin": self.petrov_margin,
            "residual": self.residual,
        }
        if self.sweep is not None:
            out["sweep"] = {"curves": len(self.sweep.curves), "degenerate_points": self.sweep.degenerate_points}
        return out


def diagnose_point(
    p: ControlProblem, fld: ValueField, x, kappa: float = KAPPA, theta_s: float = THETA_S,
    representation: bool = True,
) -> PointDiagnostics:
    x = np.asarray(x, dtype=float)
    sp = float(np.max(fld.spacing))
    fan = reachable_gradient_fan(fld, x, kappa=kappa, theta_s=theta_s)
    pointed, mn = check_pointedness(fan)
    diff, direction = check_hypograph_differentiability(fan)
    radii = [exterior_sphere_radius(fld, x, v, 3.0 * sp) for v in fan.generators]
    pd = PointDiagnostics(x, float(fan.base[-1]), fan.grads, fan.hgrads, fan.generators, radii,
                          pointed, mn, diff, direction)
    if representation and pointed:
        try:
            rep = compare_representation(p, fld, x, kappa=kappa)
            pd.distance_P, pd.distance_inf = rep.distance_P, rep.distance_inf
        except (NumericalError, ValidationError) as exc:
            pd.error = str(exc)
    return pd


def regularity_report(
    p: ControlProblem,
    fld: ValueField,
    points,
    kappa: float = KAPPA,
    theta_s: float = THETA_S,
    collar: int = 3,
    sweep: SweepResult | None = None,
    n_boundary: int = 200,
) -> RegularityReport:
    """Masks, per-point fans and radii, semiconcavity estimates and boundary classes in one report."""
    from .geometry import default_tol_m
    from .grid import dilate, hjb_residual_field

    sig = detect_singular_set(fld, theta_s, kappa)
    sig_inf = detect_nonlipschitz_set(fld, kappa)
    diags = []
    for x in points:
        try:
            diags.append(diagnose_point(p, fld, x, kappa, theta_s))
        except (NumericalError, ValidationError) as exc:
            x = np.asarray(x, dtype=float)
            diags.append(PointDiagnostics(x, float("nan"), [], [], np.empty((0, p.d + 1)), [], False,
                                          float("nan"), False, np.full(p.d + 1, np.nan), error=str(exc)))
    collar_mask = dilate(fld.status != CONVERGED, collar)
    semi = {
        "unrestricted": semiconcavity_constant(fld),
        "outside_collar": semiconcavity_constant(fld, collar_mask),
        "outside_collar_and_singular": semiconcavity_constant(fld, collar_mask | dilate(sig, 1)),
    }
    bps = sample_boundary(p, n_boundary, default_tol_m(p))
    classes: dict[str, int] = {}
    for bp in bps:
        classes[bp.cls] = classes.get(bp.cls, 0) + 1
    petrov = float(min(bp.margin for bp in bps)) if bps else float("nan")
    res = hjb_residual_field(p, fld)
    return RegularityReport(sig, sig_inf, diags, semi, classes, petrov,
                            {"linf": res.linf, "l1": res.l1, "nodes": res.count}, sweep)
