import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pssurf import jet
from pssurf.jet import (DomainError, JetPoint, Num, ParseError, Var, differentiate, equivalent,
                        evaluate, max_jet_order, parse, to_string, total_derivative_t,
                        total_derivative_x, variables)


def test_parse_aliases_u():
    e = parse("z1^2 + sin(u)", 2)
    assert variables(e) == {"z1", "z0"}


def test_parse_linear_form_value():
    e = parse("eta*x + beta*t", 0)
    assert evaluate(e, {"eta": 2, "x": 1, "beta": 3, "t": 1}) == 5


@pytest.mark.parametrize("src,needle", [("z3", "jet index out of range"), ("foo + 1", "unknown identifier"),
                                        ("(z0 + 1", ""), ("z0 +* 2", ""), ("sin z0", "")])
def test_parse_errors(src, needle):
    with pytest.raises(ParseError) as info:
        parse(src, 2)
    assert needle in str(info.value)
    assert info.value.line == 1 and info.value.column >= 1


def test_parse_error_position_on_second_line():
    with pytest.raises(ParseError) as info:
        parse("z0 +\n  z9", 2)
    assert (info.value.line, info.value.column) == (2, 3)


def test_precedence_and_associativity():
    p = {"z0": 3.0, "z1": 2.0}
    assert evaluate(parse("-z0^2", 1), p) == -9.0
    assert evaluate(parse("2^3^2", 0), {}) == 512.0
    assert evaluate(parse("z0 - z1 - 1", 1), p) == 0.0
    assert evaluate(parse("z0 / z1 * 4", 1), p) == 6.0


def test_constants_are_declared():
    e = parse("mu*z0", 1, constants=["mu"])
    assert evaluate(e, {"mu": 2, "z0": 3}) == 6
    with pytest.raises(ParseError):
        parse("mu*z0", 1)


def test_general_power_rewrites_through_exp_log():
    e = parse("z0^z1", 1)
    assert math.isclose(evaluate(e, {"z0": 2.0, "z1": 3.0}), 8.0, rel_tol=1e-14)
    with pytest.raises(DomainError):
        evaluate(e, {"z0": -2.0, "z1": 3.0})


def test_evaluate_examples():
    assert evaluate(parse("z0*z1", 1), {"z0": 2, "z1": 3}) == 6
    assert evaluate(parse("sin(z0)", 0), {"z0": 0}) == 0


@pytest.mark.parametrize("src,p", [("sqrt(z0)", {"z0": -1.0}), ("log(z0)", {"z0": 0.0}), ("1/z0", {"z0": 0.0})])
def test_domain_errors_name_subexpression(src, p):
    with pytest.raises(DomainError) as info:
        evaluate(parse(src, 0), p)
    assert info.value.subexpression is not None


def test_unbound_variable():
    with pytest.raises(jet.UnboundVariableError):
        evaluate(parse("z0 + z1", 1), {"z0": 1.0})


def test_differentiate_examples():
    assert to_string(differentiate(parse("z0^2", 0), "z0")) == "2 * z0"
    assert differentiate(parse("sin(z0)", 1), "z1") == Num(0.0)
    assert differentiate(parse("eta*z1 - beta*z0", 1), "z1") == Var("eta")
    assert differentiate(parse("u^3", 0), "u") == differentiate(parse("z0^3", 0), "z0")


def test_total_derivative_x_examples():
    assert total_derivative_x(parse("z0", 0)) == Var("z1")
    assert equivalent(total_derivative_x(parse("z0^2", 0)), parse("2*z0*z1", 1))
    assert to_string(total_derivative_x(parse("x*z1", 1))) == "z1 + x * z2"


def test_total_derivative_t_examples():
    F = parse("z2 + z0*z1", 2)
    assert total_derivative_t(parse("z0", 0), F) == F
    assert total_derivative_t(parse("t", 0), F) == Num(1.0)
    assert total_derivative_t(parse("z1", 1), parse("z2", 2)) == Var("z3")


def test_max_jet_order_examples():
    assert max_jet_order(parse("z2+z0", 2)) == 2
    assert max_jet_order(parse("x*t", 0)) == -1
    assert max_jet_order(parse("sin(z1)", 1)) == 1


def test_to_string_round_trip():
    for src in ["-(z0 + 1)^2", "z0 - (z1 - z2)", "z0 / (z1 * z2)", "exp(-z0) * cos(z1)^3", "2^3^z0"]:
        e = parse(src, 2)
        assert parse(to_string(e), 2) == e


def test_array_evaluation_matches_scalar():
    e = parse("sin(z0) * z1 + exp(z0/3)", 1)
    z0 = np.linspace(-1, 1, 7)
    z1 = np.linspace(0, 2, 7)
    vec = evaluate(e, {"z0": z0, "z1": z1})
    assert np.allclose(vec, [evaluate(e, {"z0": a, "z1": b}) for a, b in zip(z0, z1)], rtol=0, atol=1e-15)
    f = jet.compile_expr(e)
    assert np.allclose(f({"z0": z0, "z1": z1}), vec, rtol=0, atol=1e-15)


def test_jetpoint_order():
    assert JetPoint({"z0": 1, "z3": 2, "x": 0}).order == 3


# random polynomial expressions over z0, z1, z2
_vars = st.sampled_from(["z0", "z1", "z2"])
_leaf = st.one_of(_vars.map(Var), st.integers(-3, 3).map(lambda n: Num(float(n))))


def _grow(children):
    return st.one_of(
        st.tuples(children, children).map(lambda ab: jet.add(*ab)),
        st.tuples(children, children).map(lambda ab: jet.sub(*ab)),
        st.tuples(children, children).map(lambda ab: jet.mul(*ab)),
        st.tuples(children, st.integers(2, 3)).map(lambda ab: jet.power(ab[0], float(ab[1]))),
    )


polys = st.recursive(_leaf, _grow, max_leaves=8)
points = st.fixed_dictionaries({f"z{i}": st.floats(-1.5, 1.5) for i in range(4)})


@given(polys, points, _vars)
def test_derivative_matches_central_difference(e, p, v):
    h = 1e-5
    up, dn = dict(p), dict(p)
    up[v] += h
    dn[v] -= h
    fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
    exact = evaluate(differentiate(e, v), p)
    assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))


@given(polys, polys, points)
def test_dx_linear_and_product_rule(e1, e2, p):
    D = total_derivative_x
    lhs = evaluate(D(jet.add(e1, e2)), p)
    assert math.isclose(lhs, evaluate(D(e1), p) + evaluate(D(e2), p), rel_tol=1e-9, abs_tol=1e-9)
    prod = evaluate(D(jet.mul(e1, e2)), p)
    rule = evaluate(e1, p) * evaluate(D(e2), p) + evaluate(e2, p) * evaluate(D(e1), p)
    assert abs(prod - rule) <= 1e-9 * max(1.0, abs(rule))


@given(polys, st.sampled_from(["z0", "z1", "z2", "z3"]))
def test_derivative_absent_variable_is_literal_zero(e, v):
    if v not in variables(e):
        assert jet.is_zero(differentiate(e, v))


@given(polys)
def test_printed_form_reparses_to_equivalent(e):
    assert equivalent(parse(to_string(e), 3), e)
