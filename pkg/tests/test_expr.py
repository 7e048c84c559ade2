import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensemble_ctrl.expr import (
    Binary, Call, Const, ExprDomainError, ExprSyntaxError, Neg, Param,
    UnknownFunctionError, UnknownIdentifierError, evaluate, parse, to_text,
)


def test_power_of_parameter():
    e = parse("beta^2")
    assert e == Binary("^", Param("beta"), Const(2.0))
    assert evaluate(e, 0.5) == 0.25
    assert evaluate(e, -1) == 1


def test_call():
    e = parse("cos(beta)")
    assert e == Call("cos", Param("beta"))
    assert evaluate(e, 0) == 1


def test_unbalanced_paren_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("beta*(")
    assert info.value.offset == 6


def test_division_by_zero():
    with pytest.raises(ExprDomainError, match="division by zero"):
        evaluate(parse("1/beta"), 0)


def test_abs():
    assert evaluate(parse("abs(beta)"), -0.5) == 0.5


@pytest.mark.parametrize("text, expected", [
    ("-2^2", -4.0),
    ("2^3^2", 512.0),
    ("2^-1", 0.5),
    ("1 - 2 - 3", -4.0),
    ("8 / 4 / 2", 1.0),
    ("-beta*3", -6.0),
    ("2*-beta", -4.0),
    ("pi", math.pi),
    ("1.5e1 + .5", 15.5),
])
def test_precedence(text, expected):
    assert evaluate(parse(text), 2.0) == pytest.approx(expected, rel=1e-15)


def test_unknown_names():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("beta + gamma")
    assert info.value.offset == 7
    with pytest.raises(UnknownFunctionError):
        parse("sinh(beta)")


def test_offsets_are_bytes():
    # 'β' is two bytes in UTF-8
    with pytest.raises(ExprSyntaxError) as info:
        parse("β", parameter="beta")
    assert info.value.offset == 0
    with pytest.raises(ExprSyntaxError) as info:
        parse("1 + β", parameter="beta")
    assert info.value.offset == 4


@pytest.mark.parametrize("text", ["", "beta +", "(beta", "beta)", "2 3", "--beta", "+beta", "sin", "1e999"])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse(text)


@pytest.mark.parametrize("text, point", [
    ("log(beta)", 0.0), ("log(beta)", -1.0), ("sqrt(beta)", -0.1),
    ("beta^0.5", -1.0), ("0^beta", -1.0), ("exp(beta)", 1000.0),
])
def test_domain_errors(text, point):
    with pytest.raises(ExprDomainError):
        evaluate(parse(text), point)


def test_domain_error_names_subexpression():
    with pytest.raises(ExprDomainError) as info:
        evaluate(parse("1 + sqrt(beta - 2)"), 0.0)
    assert to_text(info.value.node) == "sqrt(beta - 2.0)"


def test_array_evaluation_reports_index():
    with pytest.raises(ExprDomainError) as info:
        evaluate(parse("1/beta"), np.array([-1.0, 0.5, 0.0, 1.0]))
    assert info.value.index == 2
    out = evaluate(parse("3"), np.zeros(4))
    assert out.shape == (4,) and np.all(out == 3)


# -- reference evaluator and random expressions ------------------------------

SAFE = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
    "log": lambda v: math.log(abs(v) + 1.0), "sqrt": lambda v: math.sqrt(abs(v)),
    "abs": abs,
}


def _gen(rng, depth):
    """Random (text, reference value function) pair that never leaves the domain."""
    r = rng.random()
    if depth == 0 or r < 0.25:
        if rng.random() < 0.5:
            return "beta", lambda b: b
        c = round(rng.uniform(0, 3), 3)
        return repr(c), lambda b, c=c: c
    kind = rng.integers(0, 6)
    lt, lf = _gen(rng, depth - 1)
    if kind == 0:
        return f"-({lt})", lambda b: -lf(b)
    if kind == 1:
        name = ["sin", "cos", "tan", "exp", "log", "sqrt", "abs"][rng.integers(0, 7)]
        if name == "log":
            return f"log(abs({lt}) + 1)", lambda b: SAFE["log"](lf(b))
        if name == "sqrt":
            return f"sqrt(abs({lt}))", lambda b: SAFE["sqrt"](lf(b))
        if name == "exp":
            return f"exp(sin({lt}))", lambda b: math.exp(math.sin(lf(b)))
        if name == "tan":
            return f"tan(sin({lt}))", lambda b: math.tan(math.sin(lf(b)))
        return f"{name}({lt})", lambda b: SAFE[name](lf(b))
    rt, rf = _gen(rng, depth - 1)
    if kind == 2:
        return f"({lt}) + ({rt})", lambda b: lf(b) + rf(b)
    if kind == 3:
        return f"({lt}) - ({rt})", lambda b: lf(b) - rf(b)
    if kind == 4:
        return f"({lt}) * ({rt})", lambda b: lf(b) * rf(b)
    return f"({lt}) / (({rt})^2 + 1)", lambda b: lf(b) / (rf(b) ** 2 + 1)


def test_agrees_with_reference_evaluator():
    rng = np.random.default_rng(12345)
    for _ in range(1000):
        text, ref = _gen(rng, 4)
        b = float(rng.uniform(-2, 2))
        got = evaluate(parse(text), b)
        want = ref(b)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12), text


def test_array_and_scalar_paths_agree():
    rng = np.random.default_rng(7)
    pts = np.linspace(-2, 2, 17)
    for _ in range(200):
        text, _ = _gen(rng, 3)
        e = parse(text)
        arr = evaluate(e, pts)
        assert np.allclose(arr, [evaluate(e, p) for p in pts], rtol=1e-14, atol=0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(seed):
    text, _ = _gen(np.random.default_rng(seed), 5)
    tree = parse(text)
    assert parse(to_text(tree)) == tree


def test_round_trip_precedence_cases():
    for text in ["-2^2", "(-2)^2", "2^3^2", "(2^3)^2", "-(beta - 1)*2", "1/(2/3)", "a", "2^-beta"][:-2] + ["2^-beta"]:
        tree = parse(text)
        assert parse(to_text(tree)) == tree
