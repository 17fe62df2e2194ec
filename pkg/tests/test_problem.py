import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exitgrid import parse_expression, parse_problem, validate_hypotheses
from exitgrid.benchmarks import builtin
from exitgrid.errors import (
    ConfigError,
    EvaluationError,
    ExpressionSyntaxError,
    HypothesisError,
    UnknownIdentifierError,
)
from exitgrid.problem import (
    eval_dynamics,
    eval_dynamics_jacobian,
    eval_running_cost,
    eval_running_gradient,
    eval_terminal_cost,
)

SPEC_BUILTINS = ("EIK16", "EIK64", "EXA", "EXB", "GEN", "RGEN")

QUADRATIC = """
d = 2
m = 2
f = ["u1 + 0.1*sin(x2)", "u2*(1 + 0.2*cos(x1))"]
r = "1 + x1^2"
g = "0"
h = "x1^2 + x2^2 - 1"
controls = { shape = "sphere", count = 16 }
domain = [[-2, 2], [-2, 2]]
constants = { N = 1.5, r0 = 1.0, G = 0.0, rho0 = 1.0 }
"""


# -- expressions --------------------------------------------------------------------
def test_unit_circle_level_vanishes_on_circle():
    assert parse_expression("x1^2 + x2^2 - 1").evaluate(x1=1.0, x2=0.0) == 0.0


def test_cbrt_cubed_at_origin():
    assert parse_expression("x2 - cbrt(x1^2-1)^3").evaluate(x1=0.0, x2=0.0) == pytest.approx(1.0, abs=1e-15)


def test_cbrt_keeps_sign():
    e = parse_expression("cbrt(x1)")
    assert e.evaluate(x1=-8.0) == pytest.approx(-2.0)
    assert e.evaluate(x1=27.0) == pytest.approx(3.0)


def test_syntax_error_offset():
    with pytest.raises(ExpressionSyntaxError) as exc:
        parse_expression("x1 + * 2")
    assert exc.value.position == 5


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse_expression("x1 + tan(x2)")


def test_empty_expression_rejected():
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("   ")


def test_sqrt_of_negative_is_evaluation_error():
    with pytest.raises(EvaluationError):
        parse_expression("sqrt(x1)").evaluate(x1=-1.0)


def test_min_max_abs_and_unary_minus():
    e = parse_expression("max(abs(x1), -x2) - min(x1, 2)")
    assert e.evaluate(x1=-3.0, x2=-5.0) == pytest.approx(5.0 - (-3.0))


def test_power_is_right_associative():
    assert parse_expression("2^3^2").evaluate() == 512.0


_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "u1"]),
    st.floats(0.0, 10.0, allow_nan=False).map(lambda v: repr(round(v, 3))),
)


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})"
    )
    func = st.tuples(st.sampled_from(["sin", "cos", "abs", "cbrt"]), children).map(lambda t: f"{t[0]}({t[1]})")
    two = st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda t: f"{t[0]}({t[1]}, {t[2]})")
    neg = children.map(lambda c: f"-{c}")
    return st.one_of(binop, func, two, neg)


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(expressions, st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1))
def test_print_parse_round_trip(text, a, b, c):
    e1 = parse_expression(text)
    printed = e1.to_text()
    e2 = parse_expression(printed)
    assert e2.to_text() == printed
    try:
        v1 = e1.evaluate(x1=a, x2=b, u1=c)
    except EvaluationError:
        with pytest.raises(EvaluationError):
            e2.evaluate(x1=a, x2=b, u1=c)
        return
    v2 = e2.evaluate(x1=a, x2=b, u1=c)
    assert v1 == v2 or (math.isnan(v1) and math.isnan(v2))


@settings(max_examples=50, deadline=None)
@given(expressions)
def test_whitespace_is_irrelevant(text):
    assert parse_expression(text.replace(" ", "")).to_text() == parse_expression(text).to_text()


# -- problems -----------------------------------------------------------------------
def test_builtin_eik64_config():
    p = parse_problem('builtin = "EIK64"')
    assert p.n_controls == 64
    assert np.allclose(np.linalg.norm(p.controls, axis=1), 1.0)
    assert np.allclose(eval_dynamics(p, [0.3, 0.4], [1.0, 0.0]), [1.0, 0.0])


def test_builtin_exa_config():
    p = parse_problem('[problem]\nbuiltin = "EXA"\n')
    assert p.level(np.array([0.0, -1.0])) == pytest.approx(0.0)
    assert p.level(np.array([2.0, 0.0])) == pytest.approx(-27.0)


def test_h3_violation_rejected():
    text = QUADRATIC.replace("N = 1.5, r0 = 1.0, G = 0.0", "N = 1.0, r0 = 1.0, G = 2.0")
    with pytest.raises(HypothesisError, match=r"\(H3\) violated"):
        parse_problem(text)


def test_missing_field_rejected():
    with pytest.raises(ConfigError, match="missing"):
        parse_problem(QUADRATIC.replace('g = "0"\n', ""))


def test_unknown_builtin_rejected():
    with pytest.raises(ConfigError):
        parse_problem('builtin = "NOPE"')


def test_empty_controls_rejected():
    with pytest.raises(Exception):
        parse_problem(QUADRATIC.replace('{ shape = "sphere", count = 16 }', "[]"))


def test_expression_with_foreign_variable_rejected():
    with pytest.raises(Exception, match="outside"):
        parse_problem(QUADRATIC.replace('r = "1 + x1^2"', 'r = "1 + x3^2"'))


def test_evaluators_on_explicit_problem():
    p = parse_problem(QUADRATIC)
    assert eval_running_cost(p, [0.5, 0.0], [1.0, 0.0]) == pytest.approx(1.25)
    assert eval_terminal_cost(p, [0.5, 0.0]) == 0.0
    assert np.allclose(eval_running_gradient(p, [0.5, 0.0], [1.0, 0.0]), [1.0, 0.0], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.8, 1.8), st.floats(-1.8, 1.8), st.integers(0, 15))
def test_finite_difference_jacobian_matches_analytic(a, b, k):
    p = parse_problem(QUADRATIC)
    w = p.controls[k]
    J = eval_dynamics_jacobian(p, [a, b], w)
    exact = np.array([[0.0, 0.1 * math.cos(b)], [-0.2 * w[1] * math.sin(a), 0.0]])
    assert np.allclose(J, exact, atol=1e-4)


def test_analytic_jacobian_used_when_given():
    text = QUADRATIC + 'Df = [["0", "0.1*cos(x2)"], ["-0.2*u2*sin(x1)", "0"]]\n'
    p = parse_problem(text)
    J = eval_dynamics_jacobian(p, [0.3, -0.7], p.controls[3])
    w = p.controls[3]
    assert np.allclose(J, [[0.0, 0.1 * math.cos(-0.7)], [-0.2 * w[1] * math.sin(0.3), 0.0]], atol=1e-14)


# -- hypotheses ----------------------------------------------------------------------
@pytest.mark.parametrize("name", SPEC_BUILTINS)
def test_spec_builtins_pass_hypotheses(name):
    rep = validate_hypotheses(builtin(name).problem, n_samples=2000)
    assert rep.all_pass, rep.failed()


def test_eik3_flags_h0_without_blocking():
    rep = validate_hypotheses(builtin("EIK3").problem, n_samples=500)
    assert rep["H0"].status == "fail"
    assert rep["H0"].witness is not None


def test_understated_speed_bound_fails_h1():
    p = builtin("EIK64").problem
    p = p.replace(constants=p.constants.__class__(N=0.5, r0=1.0, G=0.0, rho0=1.0))
    rep = validate_hypotheses(p, n_samples=500)
    assert rep["H1"].status == "fail"
    assert rep["H1"].witness is not None
    assert "H1" in rep.failed()
