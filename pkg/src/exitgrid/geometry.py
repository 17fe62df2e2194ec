"""Target geometry: projection onto {h = 0}, normals, inner balls, boundary classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConvergenceError, DegenerateGradientError
from .hamiltonian import boundary_margin
from .problem import ControlProblem, sphere_controls

TOL_B = 1e-10
MAX_NEWTON = 100
GRAD_EPS = 1e-14

N0, N1, UNREACHABLE = "N0", "N1", "UNREACHABLE"


@dataclass(frozen=True)
class BoundaryPoint:
    x: np.ndarray
    xi: np.ndarray
    margin: float
    cls: str

    def as_row(self) -> list[float | str]:
        return [*map(float, self.x), *map(float, self.xi), float(self.margin), self.cls]


def default_tol_m(p: ControlProblem) -> float:
    return 1e-6 * p.constants.N


def proximal_normal(p: ControlProblem, x_star) -> np.ndarray:
    """Unit normal ``-grad h / |grad h|``; it points into the target."""
    g = p.level_gradient(np.asarray(x_star, dtype=float))
    n = float(np.linalg.norm(g))
    if not n > GRAD_EPS:
        raise DegenerateGradientError(f"grad h vanishes at {np.asarray(x_star).tolist()}")
    return -g / n


def classify_margin(margin: float, tol_m: float) -> str:
    if margin > tol_m:
        return N1
    if margin >= -tol_m:
        return N0
    return UNREACHABLE


def classify_boundary(p: ControlProblem, x_star, tol_m: float | None = None) -> tuple[float, str]:
    """``(max_w xi.f(x*, w), class)`` for a boundary point or a plain state."""
    if isinstance(x_star, BoundaryPoint):
        x, xi = x_star.x, x_star.xi
    else:
        x = np.asarray(x_star, dtype=float)
        xi = proximal_normal(p, x)
    tol_m = default_tol_m(p) if tol_m is None else tol_m
    margin = boundary_margin(p, x, xi)
    return margin, classify_margin(margin, tol_m)


def boundary_point(p: ControlProblem, x_star, tol_m: float | None = None) -> BoundaryPoint:
    x = np.asarray(x_star, dtype=float)
    xi = proximal_normal(p, x)
    tol_m = default_tol_m(p) if tol_m is None else tol_m
    margin = boundary_margin(p, x, xi)
    return BoundaryPoint(x, xi, margin, classify_margin(margin, tol_m))


def project_to_boundary(
    p: ControlProblem, x, tol: float = TOL_B, max_iter: int = MAX_NEWTON, tol_m: float | None = None
) -> BoundaryPoint:
    """Damped Newton ``x <- x - h grad h / |grad h|^2`` until ``|h| <= tol``."""
    x = np.array(x, dtype=float)
    hx = float(p.level(x))
    for _ in range(max_iter + 1):
        if abs(hx) <= tol:
            return boundary_point(p, x, tol_m)
        g = p.level_gradient(x)
        gg = float(g @ g)
        if not gg > GRAD_EPS**2:
            raise DegenerateGradientError(f"grad h vanishes at {x.tolist()} during projection")
        step = hx * g / gg
        t = 1.0
        for _ in range(40):
            cand = x - t * step
            hc = float(p.level(cand))
            if abs(hc) < abs(hx):
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"projection stalled at {x.tolist()} (|h| = {abs(hx):.3e})")
        x, hx = cand, hc
    raise ConvergenceError(f"projection did not reach |h| <= {tol:g} in {max_iter} iterations")


def _edge_crossings(p: ControlProblem, m: int) -> np.ndarray:
    """Roots of h on mesh edges with a sign change, located by bisection."""
    axes = [np.linspace(lo, hi, m) for lo, hi in p.domain]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    H = p.level(X)
    out = []
    for ax in range(p.d):
        a = [slice(None)] * p.d
        b = [slice(None)] * p.d
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        ha, hb = H[tuple(a)], H[tuple(b)]
        sel = (ha > 0) != (hb > 0)
        if not np.any(sel):
            continue
        lo, hi = X[tuple(a)][sel], X[tuple(b)][sel]
        hlo = ha[sel]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            hm = p.level(mid)
            same = (hm > 0) == (hlo > 0)
            lo = np.where(same[:, None], mid, lo)
            hlo = np.where(same, hm, hlo)
            hi = np.where(same[:, None], hi, mid)
        out.append(0.5 * (lo + hi))
    if not out:
        return np.empty((0, p.d))
    return np.concatenate(out)


def _refine_tangential(
    p: ControlProblem, pts: list[BoundaryPoint], spacing: float, tol_m: float
) -> list[BoundaryPoint]:
    """Locate points with vanishing margin near local minima of |margin| (d = 2)."""
    if p.d != 2 or not pts:
        return []
    X = np.array([b.x for b in pts])
    M = np.abs(np.array([b.margin for b in pts]))
    scale = 0.1 * p.constants.N
    found: list[BoundaryPoint] = []
    for i in np.argsort(M):
        if M[i] > scale:
            break
        near = np.linalg.norm(X - X[i], axis=1) <= 3 * spacing
        if M[i] > M[near].min():
            continue
        base = pts[i]
        tangent = np.array([-base.xi[1], base.xi[0]])

        def objective(s: float) -> float:
            try:
                bp = project_to_boundary(p, base.x + s * tangent, tol_m=tol_m)
            except (ConvergenceError, DegenerateGradientError):
                return np.inf
            return abs(bp.margin)

        res = minimize_scalar(objective, bounds=(-2 * spacing, 2 * spacing), method="bounded",
                              options={"xatol": 1e-13, "maxiter": 500})
        try:
            bp = project_to_boundary(p, base.x + res.x * tangent, tol_m=tol_m)
        except (ConvergenceError, DegenerateGradientError):
            continue
        if bp.cls != N0 or not bool(p.in_domain(bp.x)):
            continue
        if any(np.linalg.norm(bp.x - f.x) < 1e-6 for f in found):
            continue
        found.append(bp)
    return found


def sample_boundary(
    p: ControlProblem, n: int = 200, tol_m: float | None = None, refine: bool = True
) -> list[BoundaryPoint]:
    """About ``n`` points of the target boundary inside the domain box.

    Sign changes of h along the edges of a mesh of the box are bracketed,
    bisected and Newton-polished.  In two dimensions points with vanishing
    margin are additionally located exactly, so tangential points are never
    missed because of mesh alignment.
    """
    tol_m = default_tol_m(p) if tol_m is None else tol_m
    m = 129 if p.d <= 2 else 33
    while True:
        raw = _edge_crossings(p, m)
        if len(raw) >= n or m >= (2049 if p.d <= 2 else 129):
            break
        m = 2 * m - 1
    spacing = float(np.max((p.domain[:, 1] - p.domain[:, 0]) / (m - 1)))
    dense: list[BoundaryPoint] = []
    for x in raw:
        try:
            bp = project_to_boundary(p, x, tol_m=tol_m)
        except (ConvergenceError, DegenerateGradientError):
            continue
        if bool(p.in_domain(bp.x, 1e-12)):
            dense.append(bp)
    if len(dense) > n:
        keep = np.unique(np.linspace(0, len(dense) - 1, n).round().astype(int))
        chosen = [dense[k] for k in keep]
    else:
        chosen = list(dense)
    if refine:
        for bp in _refine_tangential(p, dense, spacing, tol_m):
            if all(np.linalg.norm(bp.x - c.x) > 1e-9 for c in chosen):
                chosen.append(bp)
    return chosen


# fixed radius ladder: nested samples make the estimate monotone in the search radius
_RADII = np.geomspace(1e-4, 1e2, 121)


def _unit_directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    return sphere_controls(count, d)


def inner_ball_radius(
    p: ControlProblem, x_star, search_radius: float = 0.5, n_samples: int = 2048
) -> float:
    """Sampled estimate of the largest ball inside the target touching ``x*``.

    ``inf |y - x*|^2 / (2 xi.(y - x*))`` over sampled ``y`` outside the open
    target with ``xi.(y - x*) > 0``; ``inf`` when no such sample exists.
    """
    bp = x_star if isinstance(x_star, BoundaryPoint) else boundary_point(p, x_star)
    radii = _RADII[_RADII <= search_radius]
    if len(radii) == 0:
        return float("inf")
    n_dir = max(8, n_samples // 16)
    dirs = _unit_directions(p.d, n_dir)
    Y = bp.x + radii[:, None, None] * dirs[None, :, :]
    W = Y - bp.x
    along = W @ bp.xi
    outside = p.level(Y) >= 0.0
    ok = outside & (along > 0)
    if not np.any(ok):
        return float("inf")
    ratio = np.sum(W * W, axis=-1)[ok] / (2.0 * along[ok])
    return float(ratio.min())


def petrov_check(
    p: ControlProblem, n_boundary_samples: int = 200, tol_m: float | None = None
) -> tuple[float, bool]:
    """``(mu, holds)``: smallest sampled margin and whether it exceeds ``tol_m``."""
    tol_m = default_tol_m(p) if tol_m is None else tol_m
    pts = sample_boundary(p, n_boundary_samples, tol_m)
    if not pts:
        return float("nan"), False
    mu = min(b.margin for b in pts)
    return float(mu), bool(mu > tol_m)
