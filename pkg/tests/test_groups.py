import numpy as np
import pytest
import sympy

from roughsio.groups import (
    GroupSpec,
    HomogeneousPolynomial,
    MonomialTerm,
    apply_field_to_polynomial,
    check_group_axioms,
    dilate,
    estimate_a0,
    eval_polynomial_pullback,
    euclidean,
    heisenberg,
    inverse,
    monomials_up_to_degree,
    multiply,
    parse_group_config,
    quasi_norm,
    sample_box,
    vector_field_coeffs,
)


def builtin_groups():
    return [euclidean(2), euclidean(3), heisenberg()]


def test_multiply_heisenberg_example(h1):
    out = multiply(h1, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(out, [1.0, 1.0, 0.5])


def test_multiply_euclidean_example(e2):
    np.testing.assert_allclose(multiply(e2, [1.0, 2.0], [3.0, 4.0]), [4.0, 6.0])


def test_multiply_dimension_mismatch(e2):
    with pytest.raises(ValueError):
        multiply(e2, [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])


@pytest.mark.parametrize("g", builtin_groups(), ids=lambda g: g.name)
def test_inverse_roundtrip(g):
    rng = np.random.default_rng(1)
    x = sample_box(g, 200, 1.5, rng)
    for prod in (multiply(g, x, inverse(g, x)), multiply(g, inverse(g, x), x)):
        assert np.max(np.abs(prod)) < 1e-12


def test_inverse_heisenberg_is_negation(h1):
    np.testing.assert_allclose(inverse(h1, [1.0, 2.0, 3.0]), [-1.0, -2.0, -3.0])


def test_inverse_origin(h1):
    np.testing.assert_allclose(inverse(h1, h1.origin()), h1.origin())


def test_inverse_polarized_not_negation(polarized_h1):
    g = polarized_h1
    x = np.array([1.0, 2.0, 0.5])
    z = inverse(g, x)
    # (x^-1)_3 = -x_3 + x_1 x_2 for Q_3 = x_1 y_2
    np.testing.assert_allclose(z, [-1.0, -2.0, -0.5 + 2.0])
    assert np.max(np.abs(multiply(g, x, z))) < 1e-12
    assert np.max(np.abs(multiply(g, z, x))) < 1e-12


@pytest.mark.parametrize("g", builtin_groups(), ids=lambda g: g.name)
def test_group_axioms_sampled(g):
    res = check_group_axioms(g, samples=10_000, rng=7)
    assert res["associativity"] < 1e-10
    assert res["identity"] < 1e-10
    assert res["inverse"] < 1e-10


def test_dilate_heisenberg_example(h1):
    np.testing.assert_allclose(dilate(h1, 2.0, [1.0, 1.0, 1.0]), [2.0, 2.0, 4.0])


def test_dilate_identity(h1):
    x = np.array([0.3, -0.7, 0.2])
    np.testing.assert_allclose(dilate(h1, 1.0, x), x)


def test_dilate_rejects_nonpositive(h1):
    with pytest.raises(ValueError):
        dilate(h1, 0.0, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("g", builtin_groups(), ids=lambda g: g.name)
def test_dilation_is_automorphism(g):
    rng = np.random.default_rng(3)
    x = sample_box(g, 10_000, 1.2, rng)
    y = sample_box(g, 10_000, 1.2, rng)
    lam = 2.0 ** rng.uniform(-2, 2, size=10_000)
    lhs = multiply(g, dilate(g, lam, x), dilate(g, lam, y))
    rhs = dilate(g, lam, multiply(g, x, y))
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_quasi_norm_examples(h1, e2):
    assert quasi_norm(h1, [0.0, 0.0, 4.0]) == pytest.approx(2.0)
    assert quasi_norm(e2, [0.5, -0.25]) == pytest.approx(0.5)


def test_quasi_norm_homogeneity(h1):
    rng = np.random.default_rng(5)
    x = sample_box(h1, 500, 1.0, rng)
    np.testing.assert_allclose(
        quasi_norm(h1, dilate(h1, 3.0, x)), 3.0 * quasi_norm(h1, x), rtol=1e-12
    )


def test_quasi_norm_zero_only_at_origin(h1):
    assert quasi_norm(h1, h1.origin()) == 0.0
    assert quasi_norm(h1, [0.0, 0.0, 1e-30]) > 0.0


class TestEstimateA0:
    def test_euclidean_max_norm_is_one(self, e2):
        a0 = estimate_a0(e2, samples=200_000, rng=11, safety=1.0)
        assert a0 == pytest.approx(1.0, abs=1e-9)

    def test_heisenberg_value_and_seed_stability(self, h1):
        # With the symmetric law and the max quasi-norm the true triangle
        # ratio sup is exactly 1 (|x3+y3+(x1 y2-x2 y1)/2| <= (a+b)^2); the
        # sampling oracle must find it and stay put across seeds.
        vals = [
            estimate_a0(h1, samples=300_000, rng=seed, safety=1.0)
            for seed in (1, 2, 3)
        ]
        for v in vals:
            assert 1.0 <= v <= 1.01
        assert (max(vals) - min(vals)) / min(vals) < 0.05

    def test_single_sample_below_many(self, h1):
        one = estimate_a0(h1, samples=1, rng=4, safety=1.0)
        many = estimate_a0(h1, samples=50_000, rng=4, safety=1.0)
        assert one <= many + 1e-12

    def test_triangle_inequality_on_fresh_sample(self, h1):
        g = h1.with_a0(estimate_a0(h1, samples=200_000, rng=9))
        rng = np.random.default_rng(123)
        x = sample_box(g, 1_000_000, 1.0, rng)
        y = dilate(g, 2.0 ** rng.uniform(-3, 3, size=1_000_000), sample_box(g, 1_000_000, 1.0, rng))
        lhs = quasi_norm(g, multiply(g, x, y))
        rhs = g.a0 * (quasi_norm(g, x) + quasi_norm(g, y))
        assert np.all(lhs <= rhs * (1 + 1e-12))


class TestVectorFields:
    def test_heisenberg_left_fields(self, h1):
        fields = vector_field_coeffs(h1, "left")
        # X1 = d1 - (x2/2) d3
        assert set(fields[0]) == {2}
        np.testing.assert_allclose(fields[0][2](np.array([[1.0, 2.0, 3.0]])), [-1.0])
        # X2 = d2 + (x1/2) d3
        assert set(fields[1]) == {2}
        np.testing.assert_allclose(fields[1][2](np.array([[1.0, 2.0, 3.0]])), [0.5])
        # X3 = d3
        assert fields[2] == {}

    def test_euclidean_fields_are_coordinate_derivatives(self, e3):
        for side in ("left", "right"):
            assert vector_field_coeffs(e3, side) == [{}, {}, {}]

    def test_commutator_bracket_on_x3(self, h1):
        # [X1, X2] x_3 should evaluate to 1 (symbolic oracle via sympy below)
        fields = vector_field_coeffs(h1, "left")
        x3 = HomogeneousPolynomial.monomial(3, (0, 0, 1))
        x2x1 = apply_field_to_polynomial(
            h1, fields, 0, apply_field_to_polynomial(h1, fields, 1, x3)
        )
        x1x2 = apply_field_to_polynomial(
            h1, fields, 1, apply_field_to_polynomial(h1, fields, 0, x3)
        )
        bracket = x2x1 - x1x2
        pts = np.random.default_rng(0).normal(size=(20, 3))
        np.testing.assert_allclose(bracket(pts), np.ones(20), atol=1e-12)

        # independent symbolic check
        x1s, x2s, x3s = sympy.symbols("x1 x2 x3")
        f = x3s
        X1 = lambda f: sympy.diff(f, x1s) - x2s / 2 * sympy.diff(f, x3s)
        X2 = lambda f: sympy.diff(f, x2s) + x1s / 2 * sympy.diff(f, x3s)
        assert sympy.simplify(X1(X2(f)) - X2(X1(f))) == 1


class TestPolynomialPullbacks:
    def test_inverse_pullback_homogeneity(self, h1):
        # Example: P = x_3, hom degree 2
        p = HomogeneousPolynomial.monomial(3, (0, 0, 1))
        rng = np.random.default_rng(2)
        x = sample_box(h1, 100, 1.0, rng)
        lam = 1.7
        lhs = eval_polynomial_pullback(h1, p, "inverse", dilate(h1, lam, x))
        rhs = lam**2 * eval_polynomial_pullback(h1, p, "inverse", x)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)

    @pytest.mark.parametrize("g", builtin_groups(), ids=lambda g: g.name)
    def test_inverse_pullback_all_monomials_deg3(self, g):
        rng = np.random.default_rng(6)
        x = sample_box(g, 2_000, 1.0, rng)
        lam = rng.uniform(0.5, 2.0, size=2_000)
        for p in monomials_up_to_degree(g, 3.0):
            deg = p.homogeneous_degree(g.exponents)
            if deg == 0:
                continue
            lhs = eval_polynomial_pullback(g, p, "inverse", dilate(g, lam, x))
            rhs = lam**deg * eval_polynomial_pullback(g, p, "inverse", x)
            assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.max(np.abs(rhs)))

    def test_left_translate_euclidean(self, e2):
        p = HomogeneousPolynomial.monomial(2, (1, 0))
        x = np.array([[0.5, 0.25]])
        y = np.array([2.0, -1.0])
        out = eval_polynomial_pullback(e2, p, "left_translate", x, y)
        np.testing.assert_allclose(out, [2.5])

    def test_left_translate_degree_bound_sympy_oracle(self, h1):
        # P = x_3; P(y x) expands into monomials of homogeneous degree <= 2 in x
        x1, x2, x3, y1, y2, y3 = sympy.symbols("x1 x2 x3 y1 y2 y3")
        prod3 = y3 + x3 + (y1 * x2 - y2 * x1) / 2
        poly = sympy.Poly(sympy.expand(prod3), x1, x2, x3)
        weights = {x1: 1, x2: 1, x3: 2}
        for monom in poly.monoms():
            deg = monom[0] * 1 + monom[1] * 1 + monom[2] * 2
            assert deg <= 2
        # numeric agreement with the implementation
        p = HomogeneousPolynomial.monomial(3, (0, 0, 1))
        rng = np.random.default_rng(8)
        xs = sample_box(h1, 50, 1.0, rng)
        y = np.array([0.3, -0.2, 0.1])
        got = eval_polynomial_pullback(h1, p, "left_translate", xs, y)
        expected = [
            float(prod3.subs({x1: a, x2: b, x3: c, y1: 0.3, y2: -0.2, y3: 0.1}))
            for a, b, c in xs
        ]
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestSpecValidation:
    def test_term_degree_validation(self):
        with pytest.raises(ValueError, match="weighted degree"):
            GroupSpec(
                name="bad", n=3, exponents=(1.0, 1.0, 2.0),
                terms=(MonomialTerm(2, 1.0, (1, 0, 0), (0, 0, 0)),),
            )

    def test_term_structure_validation(self):
        with pytest.raises(ValueError, match="coordinate"):
            GroupSpec(
                name="bad", n=3, exponents=(1.0, 1.0, 2.0),
                terms=(MonomialTerm(1, 1.0, (0, 0, 1), (0, 0, 0)),),
            )

    def test_homogeneous_dimension(self, h1, e3):
        assert h1.homogeneous_dimension == 4.0
        assert e3.homogeneous_dimension == 3.0

    def test_config_roundtrip(self, polarized_h1):
        res = check_group_axioms(polarized_h1, samples=5_000, rng=3)
        assert max(res.values()) < 1e-10

    def test_config_errors(self):
        with pytest.raises(ValueError, match="dim and exponents"):
            parse_group_config("name broken\n")
