import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exitgrid import parse_problem
from exitgrid.benchmarks import builtin
from exitgrid.errors import DomainExitError, ValidationError
from exitgrid.grid import (
    BIG,
    CONVERGED,
    TARGET,
    UNREACHED,
    ValueField,
    build_grid,
    dpp_update,
    hjb_residual_field,
    interpolate,
    numeric_gradient,
    solve_value,
    sublevel_mask,
)
from exitgrid.regularity import detect_nonlipschitz_set


def linear_field(n=(11, 9)):
    g = build_grid([[-1, 1], [0, 2]], n)
    X = g.nodes()
    return ValueField(g, X[..., 0].copy(), np.full(g.n, CONVERGED, dtype=np.int8))


def test_grid_spacing():
    assert np.allclose(build_grid([[-2, 2], [-2, 2]], (5, 5)).spacing, [1.0, 1.0])
    g = build_grid([[-2, 2], [-0.5, 1.5]], (201, 171))
    assert np.allclose(g.spacing, [0.02, 2.0 / 170])


def test_grid_rejects_too_few_nodes():
    with pytest.raises(ValidationError):
        build_grid([[-2, 2], [-2, 2]], (2, 5))


def test_grid_rejects_degenerate_box():
    with pytest.raises(ValidationError):
        build_grid([[1, 1], [-2, 2]], (5, 5))


def test_interpolation_node_and_midpoint():
    fld = linear_field()
    X = fld.grid.nodes()
    assert interpolate(fld, X[3, 4]) == fld.values[3, 4]
    g = build_grid([[0, 1], [0, 1]], (3, 3))
    V = np.zeros(g.n)
    V[1, 0] = 1.0
    f = ValueField(g, V, np.full(g.n, CONVERGED, dtype=np.int8))
    assert interpolate(f, [0.5, 0.25]) == pytest.approx(0.5)


def test_interpolation_outside_box():
    with pytest.raises(DomainExitError):
        interpolate(linear_field(), [5.0, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 2))
def test_interpolation_reproduces_linear_functions(a, b):
    assert interpolate(linear_field(), [a, b]) == pytest.approx(a, abs=1e-12)


def test_linear_field_one_sided_gradients():
    c, fw, bw = numeric_gradient(linear_field(), [0.1, 1.0])
    assert np.allclose(fw, [1.0, 0.0], atol=1e-12)
    assert np.allclose(bw, [1.0, 0.0], atol=1e-12)
    assert np.allclose(c, [1.0, 0.0], atol=1e-12)


def test_eik64_value_and_gradient(eik161):
    assert interpolate(eik161, [1.5, 0.0]) == pytest.approx(0.5, abs=0.03)
    c, _, _ = numeric_gradient(eik161, [1.5, 0.0])
    assert np.allclose(c, [1.0, 0.0], atol=0.05)


def test_exa_values_and_gradient(exa):
    assert interpolate(exa, [0.5, 1.0]) == pytest.approx(math.sqrt(2.0) - 0.5, abs=0.05)
    assert interpolate(exa, [0.0, 0.0]) == pytest.approx(1.0, abs=0.05)
    c, _, _ = numeric_gradient(exa, [0.5, 1.0])
    assert np.allclose(c, [-1.0, 0.5 ** 1.5 / 3.0], atol=0.05)


def test_gradient_near_unreached_raises():
    p = builtin("RGEN").problem
    fld = solve_value(p, build_grid(p.domain, (81, 41)))
    X = fld.grid.nodes()[fld.status == UNREACHED]
    inside = X[fld.grid.contains(X, -0.2)]
    with pytest.raises(DomainExitError, match="unreached"):
        numeric_gradient(fld, inside[0])


def test_status_invariants(exa):
    p = exa.problem
    X = exa.grid.nodes()
    tgt = exa.status == TARGET
    assert np.array_equal(tgt, p.level(X) <= 0)
    assert np.allclose(exa.values[tgt], p.terminal_cost(X[tgt]))
    assert np.all(exa.values[exa.status == UNREACHED] == BIG)
    assert np.all(exa.values[exa.status == CONVERGED] < BIG / 2)


def test_no_target_node_rejected():
    p = builtin("EIK64").problem
    with pytest.raises(ValidationError, match="target"):
        solve_value(p, build_grid([[1.5, 2.0], [1.5, 2.0]], (5, 5)))


def test_dpp_fixed_point(exa, rng):
    conv = np.flatnonzero(exa.status.reshape(-1) == CONVERGED)
    pick = rng.choice(conv, 100, replace=False)
    V = exa.values.reshape(-1)[pick]
    assert np.all(np.abs(dpp_update(exa, pick) - V) <= 10 * 1e-9 * (1 + np.abs(V)))


def test_dpp_fixed_point_eik(eik81, rng):
    conv = np.flatnonzero(eik81.status.reshape(-1) == CONVERGED)
    pick = rng.choice(conv, 100, replace=False)
    V = eik81.values.reshape(-1)[pick]
    assert np.all(np.abs(dpp_update(eik81, pick) - V) <= 10 * 1e-9 * (1 + np.abs(V)))


@pytest.mark.parametrize("name,n", [("EIK64", (41, 41)), ("EXA", (41, 31)), ("GEN", (33, 33))])
def test_gauss_seidel_matches_jacobi(name, n):
    p = builtin(name).problem
    g = build_grid(p.domain, n)
    a = solve_value(p, g)
    b = solve_value(p, g, mode="jacobi", max_sweeps=5000)
    assert b.stats["converged"]
    assert np.array_equal(a.status, b.status)
    ok = a.status == CONVERGED
    assert np.all(np.abs(a.values[ok] - b.values[ok]) <= 10 * 1e-9 * (1 + np.abs(a.values[ok])))


def test_values_never_increase_across_sweeps():
    p = builtin("EIK64").problem
    g = build_grid(p.domain, (41, 41))
    prev = None
    for k in range(1, 7):
        cur = solve_value(p, g, max_sweeps=k).values
        if prev is not None:
            assert np.all(cur <= prev)
        prev = cur


def test_refinement_halves_error(eik81, eik161):
    b = builtin("EIK64")

    def err(f):
        X = f.grid.nodes()
        r = np.linalg.norm(X, axis=-1)
        m = (r >= 1.1) & (r <= 1.9)
        return np.abs(f.values - b.oracle(X))[m].max()

    ratio = err(eik81) / err(eik161)
    assert 2 * 0.7 <= ratio <= 2 * 1.3


def test_residual_eik64(eik161):
    res = hjb_residual_field(eik161.problem, eik161)
    assert res.count > 0
    assert res.linf <= 0.1


def test_residual_exa_outside_band(exa):
    res = hjb_residual_field(exa.problem, exa, exclude=detect_nonlipschitz_set(exa))
    assert res.linf <= 0.2


def test_residual_empty_when_target_covers_grid():
    p = parse_problem(
        """
d = 2
m = 2
f = ["u1", "u2"]
r = "1"
g = "0"
h = "x1^2 + x2^2 - 100"
controls = { shape = "sphere", count = 8 }
domain = [[-1, 1], [-1, 1]]
constants = { N = 1.0, r0 = 1.0, G = 0.0, rho0 = 1.0 }
"""
    )
    fld = solve_value(p, build_grid(p.domain, (9, 9)))
    assert np.all(fld.status == TARGET)
    res = hjb_residual_field(p, fld)
    assert res.count == 0 and res.linf == 0.0 and res.l1 == 0.0


def test_sublevel_disk(eik161):
    m = sublevel_mask(eik161, 0.5)
    r = np.linalg.norm(eik161.grid.nodes(), axis=-1)
    h = float(np.max(eik161.spacing))
    assert not np.any(m & (r > 1.5 + h))
    assert np.all(m[r < 1.5 - h])


def test_sublevel_extremes(eik81):
    assert not np.any(sublevel_mask(eik81, -1.0))
    assert np.array_equal(sublevel_mask(eik81, BIG), eik81.status != UNREACHED)


def test_three_dimensional_smoke():
    b = builtin("EIK3")
    fld = solve_value(b.problem, build_grid(b.problem.domain, (21, 21, 21)))
    X = fld.grid.nodes()
    m = (np.linalg.norm(X, axis=-1) > 1.3) & (fld.status == CONVERGED)
    V, exact = fld.values[m], b.oracle(X)[m]
    h = float(np.max(fld.spacing))
    # 24 directions overestimate distances by at most the angular gap factor
    assert np.all(V >= exact - h)
    assert np.all(V <= 1.15 * exact + h)
