"""Lie calculus operators and the sampled rank engine."""

import random

import numpy as np
import pytest

from uiobs.expressions import (
    Const,
    Fraction,
    Var,
    VarSpace,
    evaluate_many,
    mul,
    parse_expr,
)
from uiobs.geometry import (
    Codistribution,
    Covector,
    SamplePlan,
    SamplingExhausted,
    SpanPruner,
    VectorField,
    contains,
    generic_rank,
    gradient,
    lie_bracket,
    lie_covector,
    lie_scalar,
    same_span,
    span_residual,
    unit_covector,
)

POLAR = VarSpace(["r", "phi", "theta"])
X0 = (1.3, 0.2, 0.9)


def drive_field():
    return VectorField.from_strings(POLAR, ["cos(theta - phi)", "sin(theta - phi)/r", "0"])


def turn_field():
    return VectorField.from_strings(POLAR, ["0", "0", "1"])


def covectors_close(a, b, points, tol=1e-9):
    for pt in points:
        va = evaluate_many(list(a.entries), pt)
        vb = evaluate_many(list(b.entries), pt)
        if any(abs(x - y) > tol * (1 + abs(y)) for x, y in zip(va, vb)):
            return False
    return True


def sample_points(count=20, seed=3):
    rng = random.Random(seed)
    return [tuple(rng.uniform(0.9, 1.7) if i == 0 else rng.uniform(0.1, 1.1) for i in range(3)) for _ in range(count)]


class TestGradient:
    def test_range_output(self):
        cov = gradient(parse_expr("r", POLAR), POLAR)
        assert covectors_close(cov, Covector.from_strings(POLAR, ["1", "0", "0"]), sample_points())

    def test_local_bearing_output(self):
        cov = gradient(parse_expr("theta - phi", POLAR), POLAR)
        assert covectors_close(cov, Covector.from_strings(POLAR, ["0", "-1", "1"]), sample_points())

    def test_constant(self):
        cov = gradient(Const(5), POLAR)
        assert all(isinstance(e, Const) and e.value == 0 for e in cov.entries)


class TestLieScalar:
    def test_range_along_drive(self):
        value = lie_scalar(drive_field(), parse_expr("r", POLAR))
        expected = parse_expr("cos(theta - phi)", POLAR)
        for pt in sample_points():
            a, b = evaluate_many([value, expected], pt)
            assert abs(a - b) < 1e-12

    def test_local_bearing_along_drive(self):
        value = lie_scalar(drive_field(), parse_expr("theta - phi", POLAR))
        expected = parse_expr("-sin(theta - phi)/r", POLAR)
        for pt in sample_points():
            a, b = evaluate_many([value, expected], pt)
            assert abs(a - b) < 1e-12

    def test_constant_scalar(self):
        value = lie_scalar(drive_field(), Const(Fraction(3, 2)))
        assert isinstance(value, Const) and value.value == 0


class TestLieBracket:
    def test_turn_with_drive(self):
        # hand Jacobian computation: [e_theta, drive]
        bracket = lie_bracket(turn_field(), drive_field())
        expected = Covector.from_strings(
            POLAR, ["-sin(theta - phi)", "cos(theta - phi)/r", "0"]
        )
        assert covectors_close(
            Covector(POLAR, bracket.entries), expected, sample_points()
        )

    def test_constant_fields_commute(self):
        a = VectorField.from_strings(POLAR, ["1", "2", "3"])
        b = VectorField.from_strings(POLAR, ["4", "0", "1"])
        bracket = lie_bracket(a, b)
        assert all(isinstance(e, Const) and e.value == 0 for e in bracket.entries)

    def test_self_bracket_vanishes(self):
        f = drive_field()
        bracket = lie_bracket(f, f)
        for pt in sample_points():
            assert all(abs(v) < 1e-9 for v in evaluate_many(list(bracket.entries), pt))

    def test_antisymmetry(self):
        rng = random.Random(5)
        for _ in range(50):
            pt = tuple(rng.uniform(0.5, 1.5) for _ in range(3))
            fg = lie_bracket(drive_field(), turn_field())
            gf = lie_bracket(turn_field(), drive_field())
            va = evaluate_many(list(fg.entries), pt)
            vb = evaluate_many(list(gf.entries), pt)
            assert all(abs(a + b) < 1e-9 for a, b in zip(va, vb))

    def test_jacobi_identity(self):
        rng = random.Random(17)

        def poly_field():
            entries = []
            for _ in range(3):
                coeffs = [rng.randint(-2, 2) for _ in range(4)]
                entries.append(
                    f"{coeffs[0]} + {coeffs[1]}*r + {coeffs[2]}*phi*theta + {coeffs[3]}*theta^2"
                )
            return VectorField.from_strings(POLAR, entries)

        for _ in range(5):
            f, g, h = poly_field(), poly_field(), poly_field()
            total = [
                lie_bracket(f, lie_bracket(g, h)),
                lie_bracket(g, lie_bracket(h, f)),
                lie_bracket(h, lie_bracket(f, g)),
            ]
            for _ in range(4):
                pt = tuple(rng.uniform(-1.0, 1.0) for _ in range(3))
                sums = [0.0, 0.0, 0.0]
                for term in total:
                    for i, v in enumerate(evaluate_many(list(term.entries), pt)):
                        sums[i] += v
                assert all(abs(s) < 1e-7 for s in sums)

    def test_leibniz_product_rule(self):
        f = drive_field()
        a = parse_expr("r * cos(theta)", POLAR)
        b = parse_expr("phi + theta^2", POLAR)
        lhs = lie_scalar(f, mul(a, b))
        for pt in sample_points():
            la, lb, va, vb, lv = evaluate_many(
                [lie_scalar(f, a), lie_scalar(f, b), a, b, lhs], pt
            )
            assert abs(lv - (la * vb + va * lb)) < 1e-9 * (1 + abs(lv))


class TestLieCovector:
    def test_matches_gradient_of_lie_scalar(self):
        f = drive_field()
        h = parse_expr("sin(theta - phi)/r", POLAR)
        lhs = gradient(lie_scalar(f, h), POLAR)
        rhs = lie_covector(f, gradient(h, POLAR))
        assert covectors_close(lhs, rhs, sample_points())

    def test_constant_form_constant_field(self):
        f = VectorField.from_strings(POLAR, ["1", "1", "1"])
        omega = Covector.from_strings(POLAR, ["2", "0", "1"])
        result = lie_covector(f, omega)
        assert all(isinstance(e, Const) and e.value == 0 for e in result.entries)

    def test_against_flow_pullback(self):
        # independent oracle: L_f w ~ (pullback along the Euler flow - w)/t
        space = VarSpace(["x1", "x2"])
        cases = [
            (["x2", "0"], ["0", "1"]),
            (["x1 * x2", "x1 - x2"], ["x2", "x1 * x1"]),
        ]
        t = 1e-4
        rng = random.Random(23)
        for f_texts, w_texts in cases:
            f = VectorField.from_strings(space, f_texts)
            omega = Covector.from_strings(space, w_texts)
            lf = lie_covector(f, omega)
            for _ in range(5):
                pt = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1)])

                def pullback(sign):
                    fval = np.array(evaluate_many(list(f.entries), pt))
                    moved = pt + sign * t * fval
                    wmoved = np.array(evaluate_many(list(omega.entries), moved))
                    jac = np.zeros((2, 2))
                    eps = 1e-6
                    for j in range(2):
                        up = pt.copy()
                        dn = pt.copy()
                        up[j] += eps
                        dn[j] -= eps
                        fu = np.array(evaluate_many(list(f.entries), up))
                        fd = np.array(evaluate_many(list(f.entries), dn))
                        jac[:, j] = (fu - fd) / (2 * eps)
                    dflow = np.eye(2) + sign * t * jac
                    return wmoved @ dflow

                numeric = (pullback(+1) - pullback(-1)) / (2 * t)
                exact = np.array(evaluate_many(list(lf.entries), pt))
                assert np.allclose(numeric, exact, atol=1e-5, rtol=1e-4)


class TestRankEngine:
    def test_axis_pair(self, plan_factory=None):
        plan = SamplePlan.around(X0)
        cod = Codistribution(
            POLAR,
            (
                Covector.from_strings(POLAR, ["1", "0", "0"]),
                Covector.from_strings(POLAR, ["0", "1", "0"]),
            ),
        )
        assert generic_rank(cod, plan) == 2

    def test_proportional_rows(self):
        plan = SamplePlan.around(X0)
        cod = Codistribution(
            POLAR,
            (
                Covector.from_strings(POLAR, ["1", "0", "0"]),
                Covector.from_strings(POLAR, ["2", "0", "0"]),
            ),
        )
        assert generic_rank(cod, plan) == 1

    def test_contains_axis(self):
        plan = SamplePlan.around(X0)
        cod = Codistribution(
            POLAR,
            (
                Covector.from_strings(POLAR, ["1", "0", "0"]),
                Covector.from_strings(POLAR, ["0", "1", "0"]),
            ),
        )
        assert not contains(cod, Covector.from_strings(POLAR, ["0", "0", "1"]), plan)
        assert contains(cod, Covector.from_strings(POLAR, ["3", "-2", "0"]), plan)

    def test_same_span_reflexive(self):
        plan = SamplePlan.around(X0)
        cod = Codistribution(
            POLAR, (gradient(parse_expr("r * theta", POLAR), POLAR),)
        )
        assert same_span(cod, cod, plan)

    def test_same_span_scaled_generators(self):
        plan = SamplePlan.around(X0)
        a = Codistribution(POLAR, (gradient(parse_expr("theta - phi", POLAR), POLAR),))
        b = Codistribution(
            POLAR,
            (
                Covector.from_strings(
                    POLAR, ["0", "-cos(r)", "cos(r)"]
                ),
            ),
        )
        assert same_span(a, b, plan)

    def test_rank_monotone_under_generator_addition(self):
        plan = SamplePlan.around(X0)
        gens = [
            gradient(parse_expr("r", POLAR), POLAR),
            gradient(parse_expr("theta - phi", POLAR), POLAR),
            gradient(parse_expr("r * theta", POLAR), POLAR),
        ]
        last = 0
        for k in range(1, 4):
            rank = generic_rank(Codistribution(POLAR, tuple(gens[:k])), plan)
            assert rank >= last
            last = rank

    def test_contains_implies_rank_unchanged(self):
        plan = SamplePlan.around(X0)
        base = Codistribution(
            POLAR,
            (
                gradient(parse_expr("r", POLAR), POLAR),
                gradient(parse_expr("theta - phi", POLAR), POLAR),
            ),
        )
        extra = gradient(parse_expr("r + 2*(theta - phi)", POLAR), POLAR)
        assert contains(base, extra, plan)
        grown = Codistribution(POLAR, base.generators + (extra,))
        assert generic_rank(grown, plan) == generic_rank(base, plan)

    def test_reproducible_given_seed(self):
        cod = Codistribution(
            POLAR,
            (
                gradient(parse_expr("r * sin(theta)", POLAR), POLAR),
                gradient(parse_expr("tan(theta - phi)", POLAR), POLAR),
            ),
        )
        first = [generic_rank(cod, SamplePlan.around(X0, seed=42)) for _ in range(3)]
        assert len(set(first)) == 1

    def test_sampling_exhausted(self):
        plan = SamplePlan.around(X0)
        bad = Codistribution(
            POLAR, (Covector.from_strings(POLAR, ["1/(r - r)", "0", "0"]),)
        )
        with pytest.raises(SamplingExhausted):
            generic_rank(bad, plan)

    def test_guards_reject_points(self):
        plan = SamplePlan.around(X0, guards=(Const(0),))
        cod = Codistribution(POLAR, (unit_covector(POLAR, 0),))
        with pytest.raises(SamplingExhausted):
            generic_rank(cod, plan)

    def test_span_residual_zero_for_members(self):
        plan = SamplePlan.around(X0)
        base = Codistribution(
            POLAR,
            (
                gradient(parse_expr("r", POLAR), POLAR),
                gradient(parse_expr("theta - phi", POLAR), POLAR),
            ),
        )
        member = gradient(parse_expr("3*r - (theta - phi)", POLAR), POLAR)
        outsider = unit_covector(POLAR, 2)
        assert span_residual(base, [member], plan) < 1e-10
        assert span_residual(base, [outsider], plan) > 1e-3


class TestSamplePlan:
    def test_validation(self):
        with pytest.raises(ValueError):
            SamplePlan.around(X0, samples=0)
        with pytest.raises(ValueError):
            SamplePlan.around(X0, half_width=-1.0)
        with pytest.raises(ValueError):
            SamplePlan(box=((0.0, 0.1),), tolerance=0.0)

    def test_extension_appends_origin_boxes(self):
        plan = SamplePlan.around(X0).extended(2)
        assert plan.dimension == 5
        assert plan.box[3] == (0.0, 0.3)

    def test_x0_is_centers(self):
        assert SamplePlan.around(X0).x0 == X0


class TestSpanPruner:
    def test_drops_dependent_rows(self):
        plan = SamplePlan.around(X0)
        pruner = SpanPruner(plan)
        e1 = [Const(1), Const(0), Const(0)]
        assert pruner.admit(e1)
        assert not pruner.admit([Const(2), Const(0), Const(0)])
        assert pruner.admit([Const(0), Const(1), Const(0)])
        assert not pruner.admit([Const(1), Const(1), Const(0)])
        assert pruner.admit([Const(0), Var(0), Const(1)])
