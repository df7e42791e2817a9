"""Expression engine: grammar, differentiation, evaluation, simplification."""

import math
import random

import pytest

from uiobs.expressions import (
    Add,
    Const,
    Cos,
    Div,
    DomainError,
    Fraction,
    MissingVariableError,
    Mul,
    Neg,
    ParseError,
    Pow,
    Sin,
    Sub,
    UnknownIdentifierError,
    Var,
    VarSpace,
    differentiate,
    evaluate,
    parse_expr,
    remap,
    simplify,
    to_text,
)

POLAR = VarSpace(["r", "phi", "theta"])


def almost(a, b, tol=1e-12):
    return abs(a - b) <= tol * (1.0 + abs(b))


class TestVarSpace:
    def test_order_and_lookup(self):
        assert POLAR.index("theta") == 2
        assert list(POLAR) == ["r", "phi", "theta"]

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            VarSpace(["a", "a"])

    def test_bad_name_rejected(self):
        with pytest.raises(ValueError):
            VarSpace(["2x"])

    def test_primed_names_allowed(self):
        space = VarSpace(["x1'", "x2''"])
        assert space.index("x2''") == 1

    def test_extend_appends(self):
        ext = POLAR.extend(["w1"])
        assert ext.names == ("r", "phi", "theta", "w1")
        with pytest.raises(MissingVariableError):
            POLAR.index("w1")


class TestParse:
    def test_two_variable_leaves(self):
        e = parse_expr("cos(theta - phi)", POLAR)
        assert isinstance(e, Cos)
        assert isinstance(e.arg, Sub)
        assert {e.arg.left.index, e.arg.right.index} == {1, 2}

    def test_unbalanced_parenthesis(self):
        with pytest.raises(ParseError) as err:
            parse_expr("sin(q", POLAR)
        assert err.value.position == len("sin(q")

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifierError) as err:
            parse_expr("v * cos(theta)", POLAR)
        assert err.value.name == "v"

    def test_unknown_function(self):
        with pytest.raises(ParseError):
            parse_expr("sec(theta)", POLAR)

    def test_integer_exponent_required(self):
        with pytest.raises(ParseError):
            parse_expr("r^1.5", POLAR)

    def test_negative_exponent(self):
        e = parse_expr("r^-2", POLAR)
        assert isinstance(e, Pow) and e.exponent == -2

    def test_precedence(self):
        e = parse_expr("1 + 2 * 3", POLAR)
        assert evaluate(e, (0.0, 0.0, 0.0)) == 7.0

    def test_unary_minus_binds_after_power(self):
        e = parse_expr("-r^2", POLAR)
        assert evaluate(e, (3.0, 0.0, 0.0)) == -9.0

    def test_decimal_literals_exact(self):
        e = parse_expr("0.5", POLAR)
        assert isinstance(e, Const) and e.value == Fraction(1, 2)

    def test_trailing_garbage(self):
        with pytest.raises(ParseError):
            parse_expr("r )", POLAR)


class TestDifferentiate:
    def test_chain_rule(self):
        e = parse_expr("sin(theta - phi)/r", POLAR)
        d = differentiate(e, 2, POLAR)
        expected = parse_expr("cos(theta - phi)/r", POLAR)
        for pt in [(1.1, 0.2, 0.9), (2.0, -0.3, 0.4)]:
            assert almost(evaluate(d, pt), evaluate(expected, pt))

    def test_quotient_rule(self):
        e = parse_expr("tan(theta - phi)^2/r", POLAR)
        d = differentiate(e, 0, POLAR)
        expected = parse_expr("-tan(theta - phi)^2/r^2", POLAR)
        for pt in [(1.1, 0.2, 0.9), (0.7, -0.1, 0.5)]:
            assert almost(evaluate(d, pt), evaluate(expected, pt))

    def test_index_out_of_space(self):
        e = parse_expr("r", POLAR)
        with pytest.raises(MissingVariableError):
            differentiate(e, 3, POLAR)

    def test_constant_derivative_is_zero(self):
        d = differentiate(parse_expr("3/4", POLAR), 1, POLAR)
        assert isinstance(d, Const) and d.value == 0


class TestEvaluate:
    def test_cosine(self):
        e = parse_expr("cos(theta - phi)", POLAR)
        assert almost(evaluate(e, (1.0, 0.0, math.pi / 3)), 0.5)

    def test_division_by_zero(self):
        e = parse_expr("1/r", POLAR)
        with pytest.raises(DomainError) as err:
            evaluate(e, (0.0, 0.0, 0.0))
        assert "division by zero" in str(err.value)

    def test_tangent_value(self):
        e = parse_expr("tan(theta - phi)^2/r", POLAR)
        assert almost(evaluate(e, (2.0, 0.0, math.pi / 4)), 0.5)

    def test_sqrt_of_negative(self):
        with pytest.raises(DomainError):
            evaluate(parse_expr("sqrt(r)", POLAR), (-1.0, 0.0, 0.0))

    def test_ln_of_nonpositive(self):
        with pytest.raises(DomainError):
            evaluate(parse_expr("ln(r)", POLAR), (0.0, 0.0, 0.0))

    def test_overflow_reported(self):
        e = parse_expr("exp(exp(r))", POLAR)
        with pytest.raises(DomainError):
            evaluate(e, (100.0, 0.0, 0.0))

    def test_arity_checked(self):
        with pytest.raises(ValueError):
            evaluate(parse_expr("r", POLAR), (1.0,), POLAR)


class TestSimplify:
    def test_annihilator_and_identity(self):
        e = simplify(parse_expr("0 * tan(theta) + r", POLAR))
        assert isinstance(e, Var) and e.index == 0

    def test_syntactic_cancellation(self):
        e = simplify(parse_expr("cos(theta)/cos(theta)", POLAR))
        assert isinstance(e, Const) and e.value == 1

    def test_no_trig_rewriting(self):
        e = parse_expr("sin(theta)^2 + cos(theta)^2", POLAR)
        assert simplify(e) == e

    def test_double_negation(self):
        assert simplify(Neg(Neg(Var(0)))) == Var(0)

    def test_power_flattening(self):
        e = simplify(Pow(Pow(Var(0), 2), 3))
        assert isinstance(e, Pow) and e.exponent == 6

    def test_exact_rational_folding(self):
        e = simplify(parse_expr("1/3 + 1/6", POLAR))
        assert isinstance(e, Const) and e.value == Fraction(1, 2)

    def test_division_by_zero_constant_kept(self):
        e = simplify(Div(Const(1), Const(0)))
        assert isinstance(e, Div)


class TestRemap:
    def test_embedding_kills_new_partials(self):
        ext = POLAR.extend(["w"])
        e = parse_expr("sin(theta - phi)/r", POLAR)
        lifted = remap(e, POLAR, ext)
        d = differentiate(lifted, 3, ext)
        assert isinstance(d, Const) and d.value == 0

    def test_remap_commutes_with_gradient(self):
        ext = POLAR.extend(["w"])
        e = parse_expr("r * cos(theta)", POLAR)
        lifted = remap(e, POLAR, ext)
        pt = (1.2, 0.4, 0.8, 5.0)
        for i in range(3):
            a = evaluate(differentiate(lifted, i), pt)
            b = evaluate(differentiate(e, i), pt[:3])
            assert almost(a, b)

    def test_missing_variable(self):
        smaller = VarSpace(["r", "theta"])
        with pytest.raises(MissingVariableError):
            remap(parse_expr("phi", POLAR), POLAR, smaller)


def random_tree(rng, depth):
    """Random expression over POLAR, kept inside safe numeric domains."""
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return Var(rng.randrange(3))
        return Const(Fraction(rng.randrange(1, 5), rng.randrange(1, 4)))
    kind = rng.randrange(6)
    a = random_tree(rng, depth - 1)
    b = random_tree(rng, depth - 1)
    if kind == 0:
        return Add(a, b)
    if kind == 1:
        return Sub(a, b)
    if kind == 2:
        return Mul(a, b)
    if kind == 3:
        return Div(a, b)
    if kind == 4:
        return Sin(a) if rng.random() < 0.5 else Cos(a)
    return Pow(a, rng.randrange(1, 3))


def random_point(rng):
    return tuple(rng.uniform(0.4, 1.8) for _ in range(3))


class TestRandomizedProperties:
    def test_simplify_preserves_value(self):
        rng = random.Random(7)
        checked = 0
        while checked < 200:
            e = random_tree(rng, 4)
            pt = random_point(rng)
            try:
                original = evaluate(e, pt)
                reduced = evaluate(simplify(e), pt)
            except DomainError:
                continue
            assert abs(reduced - original) <= 1e-10 * (1.0 + abs(original))
            checked += 1

    def test_derivative_matches_finite_differences(self):
        rng = random.Random(11)
        delta = 1e-6
        checked = 0
        while checked < 150:
            e = random_tree(rng, 4)
            v = rng.randrange(3)
            pt = list(random_point(rng))
            try:
                exact = evaluate(differentiate(e, v, POLAR), pt)
                hi = list(pt)
                lo = list(pt)
                hi[v] += delta
                lo[v] -= delta
                numeric = (evaluate(e, hi) - evaluate(e, lo)) / (2 * delta)
            except DomainError:
                continue
            if abs(numeric) > 1e4:
                continue  # finite differences lose validity near poles
            assert abs(exact - numeric) <= 1e-5 * (1.0 + abs(numeric))
            checked += 1

    def test_print_parse_round_trip(self):
        rng = random.Random(13)
        checked = 0
        while checked < 100:
            e = random_tree(rng, 4)
            round_tripped = parse_expr(to_text(e, POLAR), POLAR)
            pt = random_point(rng)
            try:
                a = evaluate(e, pt)
                b = evaluate(round_tripped, pt)
            except DomainError:
                continue
            assert abs(a - b) <= 1e-12 * (1.0 + abs(a))
            checked += 1
