"""Semi-Lagrangian fast-sweeping solver for the exit-time value function."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DomainExitError, ValidationError
from .hamiltonian import hamiltonian_values
from .problem import ControlProblem

log = logging.getLogger(__name__)

BIG = 1e6
TARGET, CONVERGED, UNREACHED = 0, 1, 2
STATUS_NAMES = {TARGET: "TARGET", CONVERGED: "CONVERGED", UNREACHED: "UNREACHED"}


@dataclass(frozen=True, eq=False)
class Grid:
    box: np.ndarray
    n: tuple[int, ...]

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def spacing(self) -> np.ndarray:
        return (self.box[:, 1] - self.box[:, 0]) / (np.asarray(self.n) - 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.n)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``n + (d,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.box[:, 0] - margin) & (x <= self.box[:, 1] + margin), axis=-1)

    def nearest_index(self, x) -> tuple[int, ...]:
        k = np.rint((np.asarray(x, dtype=float) - self.box[:, 0]) / self.spacing).astype(int)
        return tuple(int(v) for v in np.clip(k, 0, np.asarray(self.n) - 1))

    def node(self, idx) -> np.ndarray:
        return self.box[:, 0] + np.asarray(idx) * self.spacing


def build_grid(box, n) -> Grid:
    box = np.array(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValidationError("box must be a list of [lo, hi] pairs")
    if isinstance(n, (int, np.integer)):
        n = (int(n),) * box.shape[0]
    n = tuple(int(k) for k in n)
    if len(n) != box.shape[0]:
        raise ValidationError(f"{len(n)} node counts for a {box.shape[0]}-dimensional box")
    if any(k < 3 for k in n):
        raise ValidationError(f"need at least 3 nodes per axis, got {n}")
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValidationError(f"degenerate box {box.tolist()}")
    box.setflags(write=False)
    return Grid(box, n)


@dataclass(eq=False)
class ValueField:
    grid: Grid
    values: np.ndarray
    status: np.ndarray
    problem: ControlProblem | None = None
    stats: dict = field(default_factory=dict)

    @property
    def spacing(self) -> np.ndarray:
        return self.grid.spacing

    def sample(self, X) -> np.ndarray:
        """Multilinear interpolation; points outside the box read ``BIG``."""
        return _interp(self.grid, self.values, np.asarray(X, dtype=float))

    def touches(self, X, code: int) -> np.ndarray:
        """Whether the interpolation stencil of each point contains a node with ``status == code``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx, _ = _corners(self.grid, X)
        flat = self.status.reshape(-1)
        return np.any(flat[idx] == code, axis=-1)


# -- multilinear interpolation ------------------------------------------------
def _corner_offsets(grid: Grid) -> np.ndarray:
    strides = np.array([int(np.prod(grid.n[i + 1:])) for i in range(grid.d)])
    bits = np.array(list(itertools.product((0, 1), repeat=grid.d)))
    return bits, bits @ strides


def _corners(grid: Grid, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat corner indices and weights for points (assumed in the box)."""
    lo = grid.box[:, 0]
    s = (X - lo) / grid.spacing
    r = np.rint(s)
    s = np.where(np.abs(s - r) <= SNAP, r, s)  # node coordinates read back exactly
    n = np.asarray(grid.n)
    base = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
    t = np.clip(s - base, 0.0, 1.0)
    strides = np.array([int(np.prod(grid.n[i + 1:])) for i in range(grid.d)])
    bits, offs = _corner_offsets(grid)
    flat0 = base @ strides
    idx = flat0[..., None] + offs
    w = np.ones(X.shape[:-1] + (len(offs),))
    for ax in range(grid.d):
        ta = t[..., ax][..., None]
        w = w * np.where(bits[:, ax] == 1, ta, 1.0 - ta)
    return idx, w


def _interp(grid: Grid, values: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    inside = grid.contains(X, 1e-12 * float(np.max(grid.spacing)))
    Xc = np.where(inside[..., None], X, grid.box[:, 0])
    idx, w = _corners(grid, Xc)
    out = np.sum(values.reshape(-1)[idx] * w, axis=-1)
    return np.where(inside, out, BIG)


def interpolate(fld: ValueField, x) -> float | np.ndarray:
    """Multilinear interpolation of node values; raises outside the box."""
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * float(np.max(fld.spacing))
    if not np.all(fld.grid.contains(x, tol)):
        raise DomainExitError(f"{x.tolist()} lies outside the grid box")
    out = fld.sample(x)
    return float(out) if np.ndim(out) == 0 else out


# -- exact exits --------------------------------------------------------------
def _exit_fraction(p: ControlProblem, X: np.ndarray, F: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Smallest ``s`` in ``(0, tau]`` with ``h(X + s F) = 0`` (bisection; endpoint inside target)."""
    lo = np.zeros_like(tau)
    hi = tau.copy()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = p.level(X + mid[:, None] * F) <= 0.0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return hi


@dataclass(frozen=True, eq=False)
class _Stencil:
    """Per (node, control) semi-Lagrangian data."""

    base: np.ndarray  # (N, K) cost added before interpolation
    idx: np.ndarray  # (N, K, C) corner flat indices
    w: np.ndarray  # (N, K, C) corner weights (zero for exits / out-of-box)
    tau: np.ndarray  # (N, K)
    frozen: np.ndarray  # (N,) bool
    ray: np.ndarray  # (N,) cheapest straight run into the target within reach, else inf


def _build_stencil(p: ControlProblem, grid: Grid, cfl: float) -> _Stencil:
    X = grid.nodes().reshape(-1, grid.d)
    N = X.shape[0]
    F = p.velocities(X)  # (N, K, d)
    R = p.costs(X)
    K = F.shape[1]
    speed = np.linalg.norm(F, axis=-1)
    tau = cfl * float(np.min(grid.spacing)) / np.maximum(speed, 1e-9)
    foot = X[:, None, :] + tau[..., None] * F
    frozen = p.level(X) <= 0.0

    inbox = grid.contains(foot)
    idx, w = _corners(grid, np.where(inbox[..., None], foot, grid.box[:, 0]))
    base = tau * R
    w = np.where(inbox[..., None], w, 0.0)
    base = np.where(inbox, base, BIG)

    # feet that land in the target: stop exactly on the boundary
    exits = (p.level(foot) <= 0.0) & ~frozen[:, None]
    if np.any(exits):
        ni, ki = np.nonzero(exits)
        s = _exit_fraction(p, X[ni], F[ni, ki], tau[ni, ki])
        xe = X[ni] + s[:, None] * F[ni, ki]
        base[ni, ki] = s * R[ni, ki] + p.terminal_cost(xe)
        w[ni, ki] = 0.0
    idx = idx.astype(np.int64)
    ray = _ray_exits(p, grid, X, F, R, tau, frozen)
    return _Stencil(base, idx, w, tau, frozen, ray)


RAY_REACH = 2.0  # extra cells searched past the semi-Lagrangian foot
RAY_SAMPLES = 8


def _ray_exits(p, grid, X, F, R, tau, frozen) -> np.ndarray:
    """Cost of running straight into the target with one control, for nodes near it.

    Interpolating frozen target values beyond the boundary biases the update in
    the first cells; a direct run to the boundary is an admissible competitor
    that removes this bias.
    """
    N = X.shape[0]
    out = np.full(N, np.inf)
    h = float(np.max(grid.spacing))
    speed = np.maximum(np.linalg.norm(F, axis=-1), 1e-9)
    reach = tau + RAY_REACH * h / speed  # (N, K)
    cells = int(np.ceil(np.max(tau * speed) / float(np.min(grid.spacing)) + RAY_REACH)) + 1
    near = dilate(frozen.reshape(grid.n), cells).reshape(-1) & ~frozen
    ni = np.flatnonzero(near)
    if ni.size == 0:
        return out
    Xn, Fn, Rn, tn, rn = X[ni], F[ni], R[ni], tau[ni], reach[ni]
    prev = tn.copy()
    hit_lo = np.full(tn.shape, np.nan)
    hit_hi = np.full(tn.shape, np.nan)
    for j in range(1, RAY_SAMPLES + 1):
        s = tn + (rn - tn) * j / RAY_SAMPLES
        inside = p.level(Xn[:, None, :] + s[..., None] * Fn) <= 0.0
        new = inside & np.isnan(hit_hi)
        hit_lo = np.where(new, prev, hit_lo)
        hit_hi = np.where(new, s, hit_hi)
        prev = s
    kk = np.nonzero(~np.isnan(hit_hi))
    if kk[0].size == 0:
        return out
    a, b = hit_lo[kk], hit_hi[kk]
    base = Xn[kk[0]]
    vel = Fn[kk]
    for _ in range(60):
        mid = 0.5 * (a + b)
        inside = p.level(base + mid[:, None] * vel) <= 0.0
        b = np.where(inside, mid, b)
        a = np.where(inside, a, mid)
    cost = b * Rn[kk] + p.terminal_cost(base + b[:, None] * vel)
    best = np.full(tn.shape, np.inf)
    best[kk] = cost
    out[ni] = best.min(axis=1)
    return out


def _orderings(grid: Grid, frozen: np.ndarray) -> np.ndarray:
    """Flat node orders for the 2^d alternating sweep directions (frozen nodes dropped)."""
    flat = np.arange(grid.size).reshape(grid.n)
    orders = []
    for flips in itertools.product((False, True), repeat=grid.d):
        axes = tuple(i for i, f in enumerate(flips) if f)
        o = np.flip(flat, axis=axes).reshape(-1) if axes else flat.reshape(-1)
        orders.append(o[~frozen[o]])
    return np.stack(orders)


W_EPS = 1e-12
HALF_BIG = BIG / 2
MIN_MASS = 0.5
MAX_PASSES = 4
SNAP = 1e-12


@numba.njit(cache=True)
def _update_node(i, V, base, idx, w, ray, dead):
    best = min(V[i], ray[i])
    K = base.shape[1]
    C = idx.shape[2]
    for k in range(K):
        a = 0.0
        b = 0.0
        m = 0.0
        total = 0.0
        for c in range(C):
            j = idx[i, k, c]
            wc = w[i, k, c]
            total += wc
            if j == i:
                b += wc
                m += wc
            elif not dead[j] or wc <= W_EPS:
                a += wc * V[j]
                m += wc
        # weights on dead corners are dropped and the rest renormalized;
        # a foot mostly surrounded by dead nodes is itself dead
        if total <= W_EPS:
            cand = base[i, k]  # exact exit (or out of box: BIG)
        elif m < MIN_MASS * total or m - b < 1e-12:
            continue
        else:
            cand = (base[i, k] * m + a) / (m - b)
        if cand < best:
            best = cand
    return best


@numba.njit(cache=True)
def _gauss_seidel(V, orders, base, idx, w, ray, dead, max_sweeps, rtol, history):
    n_orders = orders.shape[0]
    sweeps = 0
    converged = False
    for s in range(max_sweeps):
        order = orders[s % n_orders]
        worst = 0.0
        for t in range(order.shape[0]):
            i = order[t]
            new = _update_node(i, V, base, idx, w, ray, dead)
            change = (V[i] - new) / (1.0 + abs(new))
            if change > worst:
                worst = change
            V[i] = new
        history[s] = worst
        sweeps = s + 1
        if worst <= rtol:
            converged = True
            break
    return sweeps, converged


def _jacobi(V, st: _Stencil, dead: np.ndarray, max_sweeps: int, rtol: float, history: np.ndarray):
    free = ~st.frozen
    flat = np.arange(V.size)
    selfw = np.where(st.idx == flat[:, None, None], st.w, 0.0).sum(axis=-1)
    otherw = np.where(st.idx == flat[:, None, None], 0.0, st.w)
    for s in range(max_sweeps):
        Vc = V[st.idx]
        good = ~dead[st.idx] | (st.w <= W_EPS) | (st.idx == flat[:, None, None])
        mass = np.where(good, st.w, 0.0).sum(axis=-1)
        a = np.sum(np.where(good, otherw * Vc, 0.0), axis=-1)
        den = mass - selfw
        total = st.w.sum(axis=-1)
        use = (mass >= MIN_MASS * total) & (den >= 1e-12)
        cand = np.where(use, (st.base * mass + a) / np.where(use, den, 1.0), np.inf)
        cand = np.where(total <= W_EPS, st.base, cand).min(axis=1)
        cand = np.minimum(cand, st.ray)
        new = np.where(free, np.minimum(V, cand), V)
        worst = float(np.max((V - new) / (1.0 + np.abs(new))))
        V[:] = new
        history[s] = worst
        if worst <= rtol:
            return s + 1, True
    return max_sweeps, False


def solve_value(
    p: ControlProblem,
    grid: Grid,
    tol_V: float = 1e-9,
    max_sweeps: int = 500,
    cfl: float = 0.9,
    mode: str = "gauss-seidel",
) -> ValueField:
    """Value function on ``grid``.

    Target nodes are frozen at ``g``.  Every other node starts at ``BIG`` and is
    lowered by ``V(x) <- min_w [tau r + I[V](x + tau f)]`` until no node moves by
    more than ``tol_V * (1 + |V|)``.  A step whose foot lands in the target is cut at
    the exact crossing and charged ``g`` there.
    """
    if grid.d != p.d:
        raise ValidationError(f"grid dimension {grid.d} != problem dimension {p.d}")
    if mode not in ("gauss-seidel", "jacobi"):
        raise ValidationError(f"unknown solver mode {mode!r}")
    st = _build_stencil(p, grid, cfl)
    if not np.any(st.frozen):
        raise ValidationError("no grid node lies in the target")
    X = grid.nodes().reshape(-1, grid.d)
    dead = np.zeros(grid.size, dtype=bool)
    orders = _orderings(grid, st.frozen) if mode == "gauss-seidel" else None
    total_sweeps, passes = 0, 0
    for _ in range(MAX_PASSES):
        V = np.full(grid.size, BIG)
        V[st.frozen] = p.terminal_cost(X[st.frozen])
        history = np.zeros(max_sweeps)
        if mode == "gauss-seidel":
            sweeps, ok = _gauss_seidel(V, orders, st.base, st.idx, st.w, st.ray, dead, max_sweeps, tol_V, history)
        else:
            sweeps, ok = _jacobi(V, st, dead, max_sweeps, tol_V, history)
        total_sweeps += sweeps
        passes += 1
        # unreached nodes would otherwise leak BIG into their neighbours through
        # interpolation; re-solve with them removed until the set is stable
        unreached = V >= BIG / 2
        if np.array_equal(unreached, dead):
            break
        dead = unreached
    if not ok:
        log.warning("value iteration stopped after %d sweeps without reaching tol_V=%g", sweeps, tol_V)
    status = np.full(grid.size, CONVERGED, dtype=np.int8)
    status[V >= BIG / 2] = UNREACHED
    status[st.frozen] = TARGET
    V[status == UNREACHED] = BIG
    stats = {
        "sweeps": int(sweeps),
        "passes": passes,
        "total_sweeps": int(total_sweeps),
        "converged": bool(ok),
        "mode": mode,
        "cfl": cfl,
        "tol_V": tol_V,
        "history": history[:sweeps].tolist(),
    }
    return ValueField(grid, V.reshape(grid.n), status.reshape(grid.n), p, stats)


def dpp_update(fld: ValueField, flat_indices, cfl: float | None = None) -> np.ndarray:
    """One application of the semi-Lagrangian operator at the given nodes."""
    p = fld.problem
    cfl = fld.stats.get("cfl", 0.9) if cfl is None else cfl
    st = _build_stencil(p, fld.grid, cfl)
    V = fld.values.reshape(-1).copy()
    V[fld.status.reshape(-1) == UNREACHED] = BIG
    out = []
    for i in np.atleast_1d(flat_indices):
        Vc = V[st.idx[i]]
        wi = st.w[i]
        good = (Vc < HALF_BIG) | (wi <= W_EPS) | (st.idx[i] == i)
        mass = np.where(good, wi, 0.0).sum(axis=-1)
        total = wi.sum(axis=-1)
        a = st.base[i] + np.sum(np.where(good, wi * Vc, 0.0), axis=-1) / np.maximum(mass, 1e-300)
        a = np.where(mass >= MIN_MASS * total, a, BIG)
        a = np.where(total <= W_EPS, st.base[i], a)
        out.append(float(min(a.min(), st.ray[i])))
    return np.array(out)


# -- derived quantities -------------------------------------------------------
def numeric_gradient(fld: ValueField, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central, forward and backward difference quotients of the interpolated field."""
    x = np.asarray(x, dtype=float)
    h = fld.spacing
    d = fld.grid.d
    lo, hi = fld.grid.box[:, 0], fld.grid.box[:, 1]
    if np.any(x - h < lo - 1e-12 * h) or np.any(x + h > hi + 1e-12 * h):
        raise DomainExitError(f"{x.tolist()} is less than one spacing inside the box")
    pts = [x]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        pts += [x + e, x - e]
    pts = np.array(pts)
    if np.any(fld.touches(pts, UNREACHED)):
        raise DomainExitError(f"gradient stencil at {x.tolist()} touches the unreached region")
    v = fld.sample(pts)
    fwd = (v[1::2] - v[0]) / h
    bwd = (v[0] - v[2::2]) / h
    cen = (v[1::2] - v[2::2]) / (2 * h)
    return cen, fwd, bwd


def dilate(mask: np.ndarray, k: int) -> np.ndarray:
    """Grow a boolean node mask by ``k`` nodes in the max-norm."""
    out = mask.copy()
    for _ in range(k):
        cur = out.copy()
        for ax in range(mask.ndim):
            a = [slice(None)] * mask.ndim
            b = [slice(None)] * mask.ndim
            a[ax], b[ax] = slice(1, None), slice(None, -1)
            cur[tuple(a)] |= out[tuple(b)]
            cur[tuple(b)] |= out[tuple(a)]
        out = cur
    return out


def axis_differences(fld: ValueField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Node-wise forward/backward quotients per axis plus a mask of nodes with a full usable stencil.

    Quotient arrays have shape ``n + (d,)``; entries without a neighbour are NaN.
    """
    V = fld.values
    h = fld.spacing
    d = fld.grid.d
    fwd = np.full(V.shape + (d,), np.nan)
    bwd = np.full(V.shape + (d,), np.nan)
    for ax in range(d):
        a = [slice(None)] * d
        b = [slice(None)] * d
        a[ax], b[ax] = slice(1, None), slice(None, -1)
        diff = (V[tuple(a)] - V[tuple(b)]) / h[ax]
        fwd[tuple(b) + (ax,)] = diff
        bwd[tuple(a) + (ax,)] = diff
    bad = fld.status != CONVERGED
    usable = ~dilate(fld.status == UNREACHED, 1) & ~bad
    interior = np.zeros(V.shape, dtype=bool)
    interior[tuple(slice(1, -1) for _ in range(d))] = True
    return fwd, bwd, usable & interior


@dataclass
class Residual:
    field: np.ndarray
    linf: float
    l1: float
    count: int


def hjb_residual_field(p: ControlProblem, fld: ValueField, collar: int = 2, exclude=None) -> Residual:
    """``H(x, D V)`` with per-axis upwind differences selected by the optimal velocity.

    Norms cover converged nodes at least ``collar`` nodes away from target and
    unreached nodes (and from the box edge), minus an optional ``exclude`` mask.
    """
    grid = fld.grid
    X = grid.nodes()
    fwd, bwd, _ = axis_differences(fld)
    res = np.zeros(grid.n)
    keep = fld.status == CONVERGED
    keep &= ~dilate(fld.status != CONVERGED, collar)
    edge = np.ones(grid.n, dtype=bool)
    edge[tuple(slice(1, -1) for _ in range(grid.d))] = False
    keep &= ~edge
    if exclude is not None:
        keep &= ~np.asarray(exclude, dtype=bool)
    if np.any(keep):
        Xk = X[keep]
        st_idx = np.flatnonzero(keep.reshape(-1))
        st = _build_stencil(p, grid, fld.stats.get("cfl", 0.9))
        Vf = fld.values.reshape(-1)
        q = st.base[st_idx] + np.sum(st.w[st_idx] * Vf[st.idx[st_idx]], axis=-1)
        kopt = np.argmin(q, axis=1)
        fopt = p.velocities(Xk)[np.arange(len(Xk)), kopt]
        grad = np.where(fopt > 0, fwd[keep], bwd[keep])
        res[keep] = hamiltonian_values(p, Xk, grad)
    vals = np.abs(res[keep])
    cell = float(np.prod(grid.spacing))
    return Residual(
        res,
        float(vals.max()) if vals.size else 0.0,
        float(vals.sum() * cell),
        int(vals.size),
    )


def sublevel_mask(fld: ValueField, alpha: float) -> np.ndarray:
    return (fld.values <= alpha) & (fld.status != UNREACHED)
