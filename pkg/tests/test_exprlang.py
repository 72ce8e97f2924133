import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from escna.exprlang import (
    ArityError,
    BinOp,
    Call,
    DomainError,
    ExprSyntaxError,
    Neg,
    Num,
    UnboundVariableError,
    UnknownFunctionError,
    UnknownIdentifierError,
    Var,
    compile_exprs,
    diff_expr,
    eval_expr,
    free_vars,
    parse_expr,
    simplify,
    to_source,
)


def ev(src, **b):
    return eval_expr(parse_expr(src), b)


# --- parsing --------------------------------------------------------------


def test_drift_of_example_one():
    assert ev("0.5*cos(2*t)*x1^2", t=0, x1=2) == 2.0


def test_strict_feedback_phase():
    assert ev("(x1+2*x2)^2", x1=1, x2=2) == 25.0


def test_unknown_identifier_is_a_parse_error():
    with pytest.raises(UnknownIdentifierError):
        parse_expr("k*x1")
    with pytest.raises(UnknownIdentifierError):
        parse_expr("x1 + t", variables=["x1"])


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x1 + * 2")
    assert info.value.offset == 5
    # offsets count bytes, not characters
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x1 + é")
    assert info.value.offset == 5


def test_unknown_function_and_arity():
    with pytest.raises(UnknownFunctionError):
        parse_expr("tanh(x1)")
    with pytest.raises(ArityError):
        parse_expr("min(x1)")
    with pytest.raises(ArityError):
        parse_expr("cos(x1, t)")


def test_no_implicit_multiplication():
    with pytest.raises(ExprSyntaxError):
        parse_expr("2x1")
    with pytest.raises(ExprSyntaxError):
        parse_expr("2 x1")


def test_precedence_and_associativity():
    assert ev("2^3^2") == 512.0  # right associative
    assert ev("-2^2") == -4.0  # ^ binds tighter than unary minus
    assert ev("8/4/2") == 1.0
    assert ev("10-4-3") == 3.0
    assert ev("2*-3") == -6.0
    assert ev("1+2*3^2") == 19.0


def test_same_source_parses_to_equal_trees():
    src = "sgn(u)*min(max(abs(u) - 0.5, 0), 1.5)^2"
    assert parse_expr(src) == parse_expr(src)


def test_pi_constant():
    assert ev("cos(pi)") == -1.0


# --- evaluation -----------------------------------------------------------


def test_hex1_branch():
    assert ev("sgn(u)*(abs(u)-0.5)^2", u=1) == 0.25


def test_identity_and_cube():
    assert ev("x1", x1=3.5) == 3.5
    assert ev("cos(t)^3", t=math.pi) == -1.0


def test_sgn_of_zero_is_zero():
    assert ev("sgn(u)", u=0.0) == 0.0


def test_unbound_variable_is_an_error():
    with pytest.raises(UnboundVariableError):
        ev("x1 + x2", x1=1.0)


@pytest.mark.parametrize("src", ["sqrt(x1)", "1/x1", "log(x1)", "x1^(-1)"])
def test_domain_errors_are_reported(src):
    x = -1.0 if "sqrt" in src or "log" in src else 0.0
    with pytest.raises(DomainError):
        ev(src, x1=x)


def test_overflow_is_a_domain_error():
    with pytest.raises(DomainError):
        ev("exp(x1)", x1=1000.0)


# --- differentiation ------------------------------------------------------


def test_power_rule_prints_cleanly():
    assert to_source(diff_expr(parse_expr("x1^2"), "x1")) == "2*x1"


def test_strict_feedback_gradient_against_finite_difference():
    e = parse_expr("(x1+2*x2)^2")
    d = diff_expr(e, "x1")
    h = 1e-6
    fd = (eval_expr(e, {"x1": 1 + h, "x2": 2}) - eval_expr(e, {"x1": 1 - h, "x2": 2})) / (2 * h)
    assert abs(eval_expr(d, {"x1": 1, "x2": 2}) - 10.0) < 1e-12
    assert abs(fd - 10.0) < 1e-6


def test_time_derivative():
    assert eval_expr(diff_expr(parse_expr("cos(2*t)"), "t"), {"t": 0.0}) == 0.0


def test_piecewise_conventions():
    assert to_source(diff_expr(parse_expr("abs(x1)"), "x1")) == "sgn(x1)"
    assert eval_expr(diff_expr(parse_expr("sgn(x1)"), "x1"), {"x1": 0.3}) == 0.0
    d = diff_expr(parse_expr("min(x1, 2*x1)"), "x1")
    assert eval_expr(d, {"x1": 1.0}) == 1.0
    assert eval_expr(d, {"x1": -1.0}) == 2.0


def test_derivative_of_constant_is_zero():
    assert simplify(diff_expr(parse_expr("cos(t)*3"), "x1")) == Num(0.0)


# --- compiled kernels -----------------------------------------------------


def test_compiled_kernel_matches_tree_walk():
    exprs = [parse_expr("0.5*cos(2*t)*x1^2 - sgn(x1)*sqrt(abs(x1))"), parse_expr("min(x1, t)^3")]
    fn = compile_exprs(exprs, ["t", "x1"])
    vec = compile_exprs(exprs, ["t", "x1"], backend="numpy")
    for t, x in [(0.0, 1.5), (0.3, -0.7), (2.0, 4.0)]:
        want = tuple(eval_expr(e, {"t": t, "x1": x}) for e in exprs)
        assert fn(t, x) == pytest.approx(want, rel=1e-15)
    xs = np.array([1.5, -0.7, 4.0])
    out = vec(0.3, xs)
    for j, x in enumerate(xs):
        assert out[0][j] == pytest.approx(eval_expr(exprs[0], {"t": 0.3, "x1": x}), rel=1e-14)


# --- properties -----------------------------------------------------------

VARS = ("x1", "x2", "t")
UNARY = ("cos", "sin", "exp", "abs", "sgn", "sqrt")


def _trees(depth):
    leaf = st.one_of(
        st.sampled_from(VARS).map(Var),
        st.integers(-5, 5).map(lambda i: Num(i / 2)),
    )
    if depth == 0:
        return leaf
    sub = _trees(depth - 1)
    return st.one_of(
        leaf,
        st.tuples(st.sampled_from("+-*"), sub, sub).map(lambda a: BinOp(*a)),
        # division and powers restricted to shapes that stay smooth
        sub.map(lambda a: BinOp("/", a, BinOp("+", Num(2.0), BinOp("*", a, a)))),
        st.tuples(sub, st.integers(0, 3)).map(lambda a: BinOp("^", a[0], Num(a[1]))),
        sub.map(Neg),
        st.tuples(st.sampled_from(UNARY), sub).map(lambda a: _unary(*a)),
        st.tuples(st.sampled_from(("min", "max")), sub, sub).map(lambda a: Call(a[0], (a[1], a[2]))),
    )


def _unary(name, arg):
    if name == "sqrt":
        arg = BinOp("+", Num(1.0), BinOp("*", arg, arg))
    if name == "exp":
        arg = Call("sin", (arg,))
    return Call(name, (arg,))


def _kink_distance(e, b):
    """Smallest distance to a point where abs/sgn/min/max is not smooth."""
    if isinstance(e, (Num, Var)):
        return math.inf
    if isinstance(e, Neg):
        return _kink_distance(e.arg, b)
    if isinstance(e, BinOp):
        return min(_kink_distance(e.left, b), _kink_distance(e.right, b))
    d = min(_kink_distance(a, b) for a in e.args)
    if e.name in ("abs", "sgn"):
        d = min(d, abs(eval_expr(e.args[0], b)))
    if e.name in ("min", "max"):
        d = min(d, abs(eval_expr(e.args[0], b) - eval_expr(e.args[1], b)))
    return d


bindings = st.fixed_dictionaries({v: st.floats(-2, 2) for v in VARS})


@settings(max_examples=1000, deadline=None)
@given(_trees(6), bindings, st.sampled_from(VARS))
def test_derivative_matches_central_difference(e, b, var):
    try:
        value = eval_expr(e, b)
        assume(abs(value) < 1e6)
        assume(_kink_distance(e, b) > 1e-3)
        d = eval_expr(diff_expr(e, var), b)
        h = 1e-6
        hi = eval_expr(e, {**b, var: b[var] + h})
        lo = eval_expr(e, {**b, var: b[var] - h})
    except DomainError:
        assume(False)
    fd = (hi - lo) / (2 * h)
    assert abs(d - fd) <= 1e-5 * (1 + abs(d))


@settings(max_examples=500, deadline=None)
@given(_trees(6))
def test_print_parse_round_trip(e):
    assert parse_expr(to_source(e)) == e


@settings(max_examples=200, deadline=None)
@given(_trees(4), bindings)
def test_simplify_preserves_value(e, b):
    try:
        want = eval_expr(e, b)
    except DomainError:
        assume(False)
    got = eval_expr(simplify(e), b)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_free_vars():
    assert free_vars(parse_expr("x1*cos(t) + 3")) == {"x1", "t"}
