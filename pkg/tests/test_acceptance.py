"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers;
the same lines are repeated in the terminal summary.  Run with
``pytest tests/test_acceptance.py -s`` to see them inline.
"""

import math

import numpy as np
import pytest

from conftest import solved
from exitgrid.arcs import (
    REFUTED,
    backward_extremal,
    backward_horizontal,
    certify_optimality,
    check_maximum_principle,
    simulate,
    synthesize_branches,
    terminal_data,
    transported_normals,
    verify_horizontal_supergradient,
    verify_supergradient,
)
from exitgrid.benchmarks import builtin, error_mask
from exitgrid.geometry import N0, petrov_check, sample_boundary
from exitgrid.grid import CONVERGED, dilate, interpolate, numeric_gradient
from exitgrid.regularity import (
    check_hypograph_differentiability,
    compare_representation,
    detect_nonlipschitz_set,
    detect_singular_set,
    exterior_sphere_radius,
    generator_of_gradient,
    polyline_distance,
    reachable_gradient_fan,
    semiconcavity_constant,
    sweep_singular_set,
)

LINES: list[str] = []


def report(num: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{num:2d}] {detail}"
    LINES.append(line)
    print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None and LINES:
        tr.write_sep("-", "acceptance")
        for line in sorted(LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            tr.write_line(line)


def spacing(fld) -> float:
    return float(np.max(fld.spacing))


def interior_nodes(fld, collar=5, edge=4):
    """Converged nodes away from the target collar and the box edge."""
    sp = spacing(fld)
    ok = (fld.status == CONVERGED) & ~dilate(fld.status != CONVERGED, collar)
    X = fld.grid.nodes()[ok]
    lo, hi = fld.grid.box[:, 0] + edge * sp, fld.grid.box[:, 1] - edge * sp
    return X[np.all((X > lo) & (X < hi), axis=1)]


def smooth_samples(name, fld, count, rng):
    """Random nodes, off the target collar, in the region where the closed-form value is smooth."""
    X = interior_nodes(fld)
    if name == "EIK64":
        r = np.linalg.norm(X, axis=1)
        X = X[(r >= 1.1) & (r <= 1.9)]
    else:
        X = X[(X[:, 1] >= 0.3) & (np.abs(X[:, 0]) >= 0.2)]
    return X[rng.choice(len(X), count, replace=False)]


# -- 1 ---------------------------------------------------------------------------------------
def test_01_eik64_convergence():
    b = builtin("EIK64")
    errs = []
    for n in (81, 161):
        fld = solved("EIK64", n)
        m = error_mask(b, fld)
        errs.append(float(np.abs(fld.values - b.oracle(fld.grid.nodes()))[m].max()))
    ratio = errs[0] / errs[1]
    ok = errs[1] <= 0.035 and 1.5 <= ratio <= 3.0
    report(1, ok, f"EIK64 linf(81)={errs[0]:.4f} linf(161)={errs[1]:.4f} ratio={ratio:.3f}")


# -- 2 ---------------------------------------------------------------------------------------
def test_02_exa_formula():
    b = builtin("EXA")
    fld = solved("EXA", (201, 171))
    X = fld.grid.nodes()
    region = (X[..., 1] >= 0.1) & (X[..., 1] <= 1.2) & (np.abs(X[..., 0]) <= 1.8) & (fld.status == CONVERGED)
    exact = np.sqrt(1.0 + np.cbrt(X[..., 1])) - np.abs(X[..., 0])
    err = float(np.abs(fld.values - exact)[region].max())
    report(2, err <= 0.05, f"EXA linf={err:.4f} on {int(region.sum())} nodes")


# -- 3 ---------------------------------------------------------------------------------------
def test_03_nonlipschitz_detection():
    coarse, fine = solved("EXA", (101, 86)), solved("EXA", (201, 171))
    fracs = []
    far = 0
    upper = 0
    for fld in (coarse, fine):
        nl = detect_nonlipschitz_set(fld)
        X = fld.grid.nodes()
        h = fld.spacing
        near = (np.abs(X[..., 1]) <= 3 * h[1] + 1e-12) & (np.abs(X[..., 0]) <= 1.0 + 3 * h[0] + 1e-12)
        far += int((nl & ~near).sum())
        upper += int((nl & (X[..., 1] >= 0.3)).sum())
        fracs.append(float(nl.mean()))
    ok = far == 0 and upper == 0 and fracs[1] < fracs[0]
    report(3, ok, f"EXA flags off-band={far} in x2>=0.3={upper} fraction {fracs[0]:.4f} -> {fracs[1]:.4f}")


# -- 4 ---------------------------------------------------------------------------------------
def test_04_maximum_principle():
    worst = 0.0
    for name in ("EIK64", "GEN"):
        p = builtin(name).problem
        for bp in sample_boundary(p, 24):
            arc = backward_extremal(p, terminal_data(p, bp), 0.5, 1e-3, on_exit="stop")
            worst = max(worst, check_maximum_principle(p, arc)[0])
    exa = builtin("EXA").problem
    worst0 = 0.0
    degenerate = []
    for x in ([1.0, 0.0], [-1.0, 0.0]):
        arc = backward_horizontal(exa, terminal_data(exa, x), 0.5, 1e-3)
        worst0 = max(worst0, check_maximum_principle(exa, arc)[0])
        degenerate.append(bool(np.all(arc.degenerate_fan)))
    ok = worst <= 1e-6 and worst0 <= 1e-9 and all(degenerate)
    report(4, ok, f"max|H|={worst:.2e} max|H0|={worst0:.2e} degenerate at (+-1,0)={degenerate}")


# -- 5 and 6 ------------------------------------------------------------------------------------
def _transport_samples():
    rng = np.random.default_rng(0)
    out = []
    for name, fld in (("EIK64", solved("EIK64", 161)), ("EXA", solved("EXA", (201, 171)))):
        p = builtin(name).problem
        for x in smooth_samples(name, fld, 50, rng):
            out.append((name, fld, x, transported_normals(p, fld, x)))
    return out


@pytest.fixture(scope="module")
def transport_samples():
    return _transport_samples()


def test_05_transported_normals(transport_samples):
    worst = 0.0
    missing = 0
    for _, fld, x, tr in transport_samples:
        if not tr.n1:
            missing += 1
            continue
        c, _, _ = numeric_gradient(fld, x)
        worst = max(worst, max(float(np.linalg.norm(q - c)) / spacing(fld) for q in tr.n1))
    ok = missing == 0 and worst <= 5.0
    report(5, ok, f"{len(transport_samples)} points, max |N1 - grad| = {worst:.3f} cells, no normal at {missing}")


def test_06_supergradients(transport_samples):
    fails = 0
    for _, fld, x, tr in transport_samples:
        sp = spacing(fld)
        for q in tr.n1:
            rho = exterior_sphere_radius(fld, x, generator_of_gradient(q), 3 * sp)
            sigma = 1.0 / (2.0 * rho) + 1.0
            fails += not verify_supergradient(fld, x, q, sigma, 3 * sp)[0]
    fld = solved("EXA", (201, 171))
    sp = spacing(fld)
    x1 = np.concatenate([np.linspace(-0.8, -0.2, 10), np.linspace(0.2, 0.8, 10)])
    hfails = 0
    for a in x1:
        hfails += not verify_horizontal_supergradient(fld, [a, 1e-9], [0.0, 1.0], 5.0, 0.2)[0]
    ok = fails == 0 and hfails == 0
    report(6, ok, f"supergradient failures {fails}/{len(transport_samples)} points, horizontal failures {hfails}/20")


# -- 7 ---------------------------------------------------------------------------------------
def test_07_refutation():
    p = builtin("EXB").problem
    fld = solved("EXB", (201, 101))
    tr = simulate(p, [-1.0, 0.0], [0.5])
    v = interpolate(fld, [-1.0, 0.0])
    cert = certify_optimality(p, fld, tr)
    ok = abs(tr.cost - 2.0) <= 1e-6 and abs(v - 1.0) <= 0.05 and cert.verdict == REFUTED
    report(7, ok, f"EXB cost={tr.cost:.9f} V(-1,0)={v:.4f} verdict={cert.verdict}")


# -- 8 ---------------------------------------------------------------------------------------
def test_08_hypograph_at_origin():
    p = builtin("EXA").problem
    fld = solved("EXA", (201, 171))
    diff, direction = check_hypograph_differentiability(reachable_gradient_fan(fld, [0.0, 0.0]))
    angle = math.degrees(math.acos(np.clip(np.asarray(direction) @ [0.0, -1.0, 0.0], -1.0, 1.0)))
    sig = detect_singular_set(fld)
    X = fld.grid.nodes()
    corners = np.all(np.abs(X) <= fld.spacing + 1e-12, axis=-1)
    flagged = bool(sig[corners].any())
    costs = [float(b.cost) for b in synthesize_branches(p, fld, [0.0, 0.0])]
    exits = len(costs) >= 2 and all(abs(c - 1.0) <= 0.05 for c in costs)
    ok = diff and angle <= 5.0 and flagged and exits
    report(8, ok, f"diff={diff} angle={angle:.2f}deg singular={flagged} exit costs={[round(c, 4) for c in costs]}")


# -- 9 ---------------------------------------------------------------------------------------
def _rho_min(fld, pts):
    sp = spacing(fld)
    best = math.inf
    for x in pts:
        for v in reachable_gradient_fan(fld, x).generators:
            best = min(best, exterior_sphere_radius(fld, x, v, 3 * sp))
    return best


def test_09_exterior_sphere():
    rng = np.random.default_rng(0)
    parts = []
    ok = True
    for name, ns, floor in (("EXA", [(101, 86), (201, 171)], 0.02), ("EIK64", [81, 161], 0.2)):
        coarse, fine = (solved(name, n) for n in ns)
        X = interior_nodes(coarse)
        pts = X[rng.choice(len(X), 100, replace=False)]
        r0, r1 = _rho_min(coarse, pts), _rho_min(fine, pts)
        ratio = r1 / r0
        ok &= min(r0, r1) >= floor and 0.5 <= ratio <= 1.5
        parts.append(f"{name} rho {r0:.4f} -> {r1:.4f} (x{ratio:.2f})")
    report(9, ok, "; ".join(parts))


# -- 10 --------------------------------------------------------------------------------------
def test_10_representation():
    rng = np.random.default_rng(1)
    worst = 0.0
    counted = 0
    for name, n in (("EXA", (201, 171)), ("EIK64", 161)):
        fld = solved(name, n)
        p = builtin(name).problem
        X = interior_nodes(fld)
        X = X[rng.permutation(len(X))]
        got = 0
        for x in X:
            rep = compare_representation(p, fld, x)
            if not rep.pointed:
                continue
            worst = max(worst, rep.distance_P, rep.distance_inf)
            got += 1
            if got == 30:
                break
        counted += got
    ok = counted == 60 and worst <= 10.0
    report(10, ok, f"{counted} pointed points, max angular distance {worst:.2f}deg")


# -- 11 --------------------------------------------------------------------------------------
def test_11_petrov_semiconcavity():
    mu_e, holds_e = petrov_check(builtin("EIK64").problem)
    mu_a, holds_a = petrov_check(builtin("EXA").problem)
    eik = []
    for n in (81, 161):
        fld = solved("EIK64", n)
        eik.append(semiconcavity_constant(fld, dilate(fld.status != CONVERGED, 3)))
    exa = [semiconcavity_constant(solved("EXA", n)) for n in (81, 161)]
    eik_ratio = max(eik) / min(eik)
    exa_ratio = exa[1] / exa[0]
    ok = holds_e and mu_e >= 0.99 and not holds_a and mu_a <= 1e-3 and eik_ratio <= 2.0 and exa_ratio >= 4.0
    report(11, ok, f"EIK64 mu={mu_e:.4f} C {eik[0]:.3f} -> {eik[1]:.3f}; "
                   f"EXA mu={mu_a:.1e} holds={holds_a} C {exa[0]:.2f} -> {exa[1]:.2f} (x{exa_ratio:.2f})")


# -- 12 --------------------------------------------------------------------------------------
def test_12_sweep_vs_detection():
    b = builtin("RGEN")
    fld = solved("RGEN", (201, 171))
    sp = spacing(fld)
    sw = sweep_singular_set(b.problem, None, 2.0, 1e-2, fld)
    mask = fld.grid.nodes()[detect_nonlipschitz_set(fld, b.kappa)]
    pts = np.concatenate(sw.curves) if sw.curves else np.empty((0, 2))
    if len(pts) and len(mask):
        to_mask = float(np.min(np.linalg.norm(pts[:, None] - mask[None], axis=-1), axis=1).max()) / sp
        covered = float(np.mean(polyline_distance(mask, sw.curves) <= 3 * sp))
    else:
        to_mask, covered = math.inf, 0.0
    ok = to_mask <= 3.0 and covered >= 0.8
    report(12, ok, f"RGEN {len(sw.curves)} curves, curve-to-mask {to_mask:.2f} cells, mask covered {covered:.1%}")
