from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsign.expr import (
    ArityError,
    EvalDomainError,
    ExprSyntaxError,
    MissingBindingError,
    UnknownIdentifierError,
    evaluate,
    parse,
)


def test_sine_minus_one():
    e = parse("sin(t) - 1", {"t"})
    assert e(t=0.0) == -1.0


def test_quadratic_lagrangian():
    e = parse("u^2/2 + x")
    assert e(t=0.0, x=3.0, u=2.0, z=0.0) == 5.0


def test_unknown_identifier_offset():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("q + 1", {"t"})
    assert info.value.offset == 0


def test_context_rejects_foreign_variable():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("sin(t) * x", {"t"})
    assert info.value.offset == 9


@pytest.mark.parametrize(
    ("src", "offset"),
    [("1 +", 3), ("(t", 2), ("2 * * t", 4), ("t 1", 2), ("3 $ 4", 2)],
)
def test_syntax_error_offsets(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src, {"t"})
    assert info.value.offset == offset


@pytest.mark.parametrize("src", ["sin(t, t)", "pow(t)", "exp()"])
def test_arity_errors(src):
    with pytest.raises(ArityError):
        parse(src, {"t"})


def test_empty_source():
    with pytest.raises(ExprSyntaxError):
        parse("   ")


def test_log_example():
    assert parse("ln(x^2+1)")(x=0.0) == 0.0


def test_exp_example():
    assert parse("exp(t)")(t=1.0) == pytest.approx(2.7182818285, abs=1e-10)


@pytest.mark.parametrize(
    "src", ["sqrt(-1)", "ln(0)", "ln(t - 2)", "(-2)^0.5", "1/(t - 1)"]
)
def test_domain_errors(src):
    with pytest.raises(EvalDomainError):
        parse(src, {"t"})(t=1.0)


def test_domain_error_inside_array():
    with pytest.raises(EvalDomainError):
        parse("sqrt(t)", {"t"})(t=np.array([1.0, -1.0]))


def test_missing_binding():
    with pytest.raises(MissingBindingError):
        evaluate(parse("x + t"), {"t": 1.0})


@pytest.mark.parametrize(("src", "value"), [("2+3*4^2", 50.0), ("-2^2", -4.0)])
def test_precedence(src, value):
    assert parse(src, set())() == value


def test_power_is_right_associative():
    assert parse("2^3^2", set())() == 512.0


def test_integer_power_of_negative_base():
    assert parse("(-2)^3", set())() == -8.0


def test_constants_and_functions():
    e = parse("pi + e + abs(-1) + pow(2, 3) + cos(0)", set())
    assert e() == pytest.approx(math.pi + math.e + 1 + 8 + 1, abs=1e-15)


def test_array_bindings():
    t = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(parse("t^2 + 1", {"t"})(t=t), t**2 + 1)


def test_determinism():
    e = parse("sin(t)*exp(-t) + ln(t^2+1)", {"t"})
    assert e(t=0.3) == e(t=0.3)


# {{{ round trip

_atoms = st.sampled_from(["t", "x", "u", "z", "pi", "e", "2", "0.5", "3.25"])


def _combine(children):
    binary = st.tuples(children, st.sampled_from("+-*/"), children).map(
        lambda p: f"({p[0]} {p[1]} {p[2]})"
    )
    unary = children.map(lambda c: f"-{c}")
    power = children.map(lambda c: f"({c})^2")
    calls = st.tuples(st.sampled_from(["sin", "cos", "abs"]), children).map(
        lambda p: f"{p[0]}({p[1]})"
    )
    return st.one_of(binary, unary, power, calls)


_sources = st.recursive(_atoms, _combine, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(src=_sources, seed=st.integers(0, 2**32 - 1))
def test_round_trip(src, seed):
    first = parse(src)
    second = parse(first.to_source())
    rng = random.Random(seed)
    for _ in range(100):
        env = {v: rng.uniform(-3, 3) for v in "txuz"}
        try:
            lhs = first(**env)
        except EvalDomainError:
            with pytest.raises(EvalDomainError):
                second(**env)
            continue
        rhs = second(**env)
        assert lhs == rhs or (math.isnan(lhs) and math.isnan(rhs))


# }}}
