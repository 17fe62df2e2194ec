"""Hamiltonians over the finite control sample and the terminal multiplier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TerminalDataError
from .problem import ControlProblem

TIE_TOL = 1e-9


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    argmax: np.ndarray  # indices into the control list
    controls: np.ndarray  # the corresponding control vectors

    @property
    def unique(self) -> bool:
        return len(self.argmax) == 1


def _scores(p: ControlProblem, x, q, running: bool) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    s = -np.einsum("...kd,...d->...k", p.velocities(x), q)
    if running:
        s = s - p.costs(x)
    return s


def _pack(p: ControlProblem, scores: np.ndarray, tie_tol: float) -> HamiltonianValue:
    best = float(np.max(scores))
    idx = np.flatnonzero(scores >= best - tie_tol)
    return HamiltonianValue(best, idx, p.controls[idx])


def hamiltonian(p: ControlProblem, x, q, tie_tol: float = TIE_TOL) -> HamiltonianValue:
    """max over controls of ``-q.f(x, w) - r(x, w)`` with the tied maximizers."""
    return _pack(p, _scores(p, x, q, True), tie_tol)


def horizontal_hamiltonian(p: ControlProblem, x, q, tie_tol: float = TIE_TOL) -> HamiltonianValue:
    """max over controls of ``-q.f(x, w)``."""
    return _pack(p, _scores(p, x, q, False), tie_tol)


def hamiltonian_values(p: ControlProblem, X, Q, running: bool = True) -> np.ndarray:
    """Vectorized values only; ``X`` and ``Q`` share leading axes."""
    return _scores(p, X, Q, running).max(axis=-1)


def boundary_margin(p: ControlProblem, x, xi) -> float:
    """max over controls of ``xi . f(x, w)``."""
    return float(np.max(p.velocities(np.asarray(x, dtype=float)) @ np.asarray(xi, dtype=float)))


def solve_terminal_multiplier(
    p: ControlProblem,
    x_star,
    xi,
    q_star,
    tol_m: float | None = None,
    residual_tol: float = 1e-10,
) -> float:
    """Positive root ``lam`` of ``H(x*, q* - lam xi) = 0``.

    ``phi(lam) = H(x*, q* - lam xi)`` is convex, piecewise linear in ``lam`` and
    grows at least like ``lam * margin``, so doubling from ``r0 / margin``
    brackets the root.
    """
    x_star = np.asarray(x_star, dtype=float)
    xi = np.asarray(xi, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    tol_m = 1e-6 * p.constants.N if tol_m is None else tol_m
    margin = boundary_margin(p, x_star, xi)
    if margin <= tol_m:
        raise TerminalDataError(f"tangential normal: margin {margin:.3e} <= {tol_m:.1e}")

    F = p.velocities(x_star)
    R = p.costs(x_star)
    a = -(F @ q_star) - R  # phi(lam) = max_k a_k + lam * b_k
    b = F @ xi

    def phi(lam: float) -> float:
        return float(np.max(a + lam * b))

    phi0 = phi(0.0)
    if phi0 > residual_tol:
        raise TerminalDataError(f"terminal data inconsistent: H(x*, q*) = {phi0:.3e} > 0")
    if phi0 >= -residual_tol:
        return 0.0
    hi = p.constants.r0 / margin
    for _ in range(200):
        if phi(hi) >= 0.0:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    # finish on the active linear piece
    k = int(np.argmax(a + hi * b))
    lam = -a[k] / b[k] if b[k] > 0 else hi
    if not (lo - 1e-12 <= lam <= hi + 1e-12) or abs(phi(lam)) > abs(phi(hi)):
        lam = hi
    return float(lam)
