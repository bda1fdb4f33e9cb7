import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from glass_model import (
    GlassKind,
    GlassTemplate,
    basis_matrix,
    basis_vector,
    invert,
    monomial_exponents,
    monomial_label,
    n_monomials,
)
from split_circuit import DualStamp, LinearizedStamp, SplitPhasor

small = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


def random_template(order, seed, kind=GlassKind.VOLTAGE_DEPENDENT, center=(0.0, 0.0)):
    rng = np.random.default_rng(seed)
    m = n_monomials(order)
    return GlassTemplate(kind, order, center, rng.normal(size=m), rng.normal(size=m))


class TestMonomials:
    def test_counts(self):
        assert [n_monomials(n) for n in range(7)] == [1, 3, 6, 10, 15, 21, 28]
        assert all(len(monomial_exponents(n)) == n_monomials(n) for n in range(7))

    def test_canonical_order(self):
        assert monomial_exponents(2) == ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2))
        assert monomial_exponents(3)[6:] == ((3, 0), (0, 3), (2, 1), (1, 2))
        assert monomial_exponents(4)[10:] == ((4, 0), (0, 4), (3, 1), (2, 2), (1, 3))

    def test_order_cap(self):
        with pytest.raises(ValueError):
            monomial_exponents(7)
        with pytest.raises(ValueError):
            monomial_exponents(-1)

    def test_labels(self):
        assert monomial_label((0, 0)) == "1"
        assert monomial_label((2, 1), ("V_R", "V_I")) == "V_R^2*V_I"
        assert monomial_label((0, 3), ("I_R", "I_I")) == "I_I^3"

    def test_basis_examples(self):
        assert list(basis_vector(1, (1.0, 0.0))) == [1.0, 1.0, 0.0]
        assert list(basis_vector(2, (2.0, 3.0))) == [1.0, 2.0, 3.0, 6.0, 4.0, 9.0]

    @given(small, small)
    def test_basis_matrix_rows_equal_vectors(self, b_r, b_i):
        row = basis_matrix(4, [b_r], [b_i], (0.3, -0.1))[0]
        assert np.array_equal(row, basis_vector(4, (b_r, b_i), (0.3, -0.1)))


class TestEvaluation:
    def test_aggregate_template_anchor(self, aggregate_template):
        a = aggregate_template.evaluate((1.0, 0.0))
        assert a.re == pytest.approx(0.092314, abs=1e-12)
        assert a.im == pytest.approx(-0.1712, abs=1e-12)

    def test_first_order_stamp_is_constant(self, aggregate_template):
        expected = np.array([[-8.86e-04, 0.0014], [-0.0012, -0.0035]])
        for prev in [(1.0, 0.0), (0.9, -0.2), (1.1, 0.3)]:
            s = aggregate_template.stamp(prev, node=3)
            assert isinstance(s, LinearizedStamp)
            assert s.node == 3
            assert np.allclose(s.jac, expected, rtol=0, atol=1e-15)
            assert s.hist == pytest.approx((0.0932, -0.170), abs=1e-15)

    def test_zero_template(self):
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 2, (0, 0), np.zeros(6), np.zeros(6))
        assert t.is_degenerate
        assert tuple(t.evaluate((0.7, 0.2))) == (0.0, 0.0)

    def test_current_dependent_stamp(self):
        t = random_template(2, 4, GlassKind.CURRENT_DEPENDENT)
        assert isinstance(t.stamp((0.1, 0.2)), DualStamp)
        assert t.variable_names == ("I_R", "I_I")

    @given(small, small)
    @settings(max_examples=50)
    def test_stamp_reproduces_value_at_expansion_point(self, b_r, b_i):
        t = random_template(5, 8, center=(0.2, -0.4))
        exact = t.evaluate((b_r, b_i))
        linear = t.stamp((b_r, b_i)).current((b_r, b_i))
        scale = 1 + np.abs(t.coeffs_r).sum() * 10 ** 5
        assert linear.re == pytest.approx(exact.re, abs=1e-12 * scale)
        assert linear.im == pytest.approx(exact.im, abs=1e-12 * scale)

    def test_evaluate_many_matches_evaluate(self):
        t = random_template(3, 2)
        b_r, b_i = np.array([0.9, 1.0, 1.1]), np.array([-0.1, 0.0, 0.2])
        a_r, a_i = t.evaluate_many(b_r, b_i)
        for k in range(3):
            a = t.evaluate((b_r[k], b_i[k]))
            assert (a_r[k], a_i[k]) == pytest.approx((a.re, a.im))

    def test_evaluate_many_about_a_phasor_center(self):
        t = random_template(3, 4, center=SplitPhasor(0.5, 0.1))
        b_r, b_i = np.array([0.9, 1.2]), np.array([0.05, -0.3])
        phi = basis_matrix(3, b_r, b_i, t.center)
        assert np.array_equal(phi[1], basis_vector(3, (1.2, -0.3), (0.5, 0.1)))
        a_r, _ = t.evaluate_many(b_r, b_i)
        assert a_r[0] == pytest.approx(t.evaluate((0.9, 0.05)).re)

    def test_rejects_wrong_coefficient_count(self):
        with pytest.raises(ValueError):
            GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 2, (0, 0), np.zeros(5), np.zeros(6))

    def test_rejects_non_finite_coefficients(self):
        with pytest.raises(ValueError):
            GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 1, (0, 0), [0.0, np.nan, 0.0], np.zeros(3))


class TestReexpansion:
    @given(small, small, small, small)
    @settings(max_examples=50)
    def test_recenter_preserves_values(self, c_r, c_i, b_r, b_i):
        t = random_template(4, 21, center=(0.5, 0.1))
        moved = t.recenter((c_r, c_i))
        a, b = t.evaluate((b_r, b_i)), moved.evaluate((b_r, b_i))
        assert b.re == pytest.approx(a.re, rel=1e-9, abs=1e-9)
        assert b.im == pytest.approx(a.im, rel=1e-9, abs=1e-9)

    def test_absolute(self):
        t = random_template(3, 9, center=(1.0, 0.0))
        absolute = t.absolute()
        assert absolute.center == SplitPhasor(0.0, 0.0)
        assert tuple(absolute.evaluate((1.05, 0.02))) == pytest.approx(tuple(t.evaluate((1.05, 0.02))))

    def test_absolute_shifts_toward_the_origin(self):
        # A = B_R - 1 written about (1, 0)
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 1, (1.0, 0.0), [0.0, 1.0, 0.0], [0.0, 0.0, 0.0])
        absolute = t.absolute()
        assert np.allclose(absolute.coeffs_r, [-1.0, 1.0, 0.0], atol=1e-15)
        assert tuple(absolute.evaluate((1.0, 0.0))) == pytest.approx((0.0, 0.0), abs=1e-15)
        assert absolute.evaluate((3.0, 0.0)).re == pytest.approx(2.0)

    def test_recenter_between_offset_centers(self):
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 2, (1.0, 0.5), [0.0, 0.0, 0.0, 0.0, 1.0, 0.0], np.zeros(6))
        moved = t.recenter((0.25, -0.5))
        # (B_R - 1)^2 = ((B_R - 0.25) - 0.75)^2
        assert np.allclose(moved.coeffs_r, [0.5625, -1.5, 0.0, 0.0, 1.0, 0.0], atol=1e-14)

    def test_derivative_round_trip(self):
        t = random_template(6, 33, center=(0.9, 0.1))
        rebuilt = GlassTemplate.from_derivatives(t.kind, t.order, t.center, t.derivatives())
        assert np.allclose(rebuilt.coeffs_r, t.coeffs_r, rtol=1e-14, atol=0)
        assert np.allclose(rebuilt.coeffs_i, t.coeffs_i, rtol=1e-14, atol=0)

    def test_derivatives_are_taylor_terms(self):
        # A = B_R^2 * B_I about the origin: d^3 A / dB_R^2 dB_I = 2
        coeffs = np.zeros(10)
        coeffs[monomial_exponents(3).index((2, 1))] = 1.0
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 3, (0, 0), coeffs, np.zeros(10))
        assert t.derivatives()[(2, 1)] == (2.0, 0.0)

    def test_rescale_to_per_unit(self):
        t = random_template(3, 5, center=(0.0, 0.0))
        t = GlassTemplate(t.kind, t.order, t.center, t.coeffs_r, t.coeffs_i, "si", ((330.0, 380.0), (0.0, 0.0)))
        v_base, i_base = 380.0, 10000.0 / 380.0
        pu = t.rescale(v_base, i_base, "per-unit")
        assert pu.units == "per-unit"
        assert np.allclose(pu.domain, [[330.0 / 380.0, 1.0], [0.0, 0.0]])
        si = t.evaluate((350.0, 5.0))
        scaled = pu.evaluate((350.0 / v_base, 5.0 / v_base))
        assert scaled.re * i_base == pytest.approx(si.re, rel=1e-10)
        assert scaled.im * i_base == pytest.approx(si.im, rel=1e-10)


class TestDomainAndInversion:
    def test_contains(self):
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 1, (0, 0), np.ones(3), np.ones(3),
                          domain=((0.9, 1.1), (0.0, 0.0)))
        assert t.contains((1.0, 0.0))
        assert not t.contains((1.2, 0.0))
        assert not t.contains((1.0, 0.1))
        assert random_template(1, 1).contains((100.0, 100.0))

    def test_invert_linear_template(self):
        t = GlassTemplate(GlassKind.CURRENT_DEPENDENT, 1, (0, 0), [0.9, 0.5, -0.1], [0.05, 0.1, 0.5])
        b = invert(t, (1.0, 0.1))
        assert tuple(t.evaluate(b)) == pytest.approx((1.0, 0.1), abs=1e-12)

    def test_invert_cubic_template(self):
        coeffs_r = np.zeros(10)
        coeffs_i = np.zeros(10)
        coeffs_r[1], coeffs_i[2] = 1.0, 1.0
        coeffs_r[6], coeffs_i[7] = 0.1, 0.1
        t = GlassTemplate(GlassKind.VOLTAGE_DEPENDENT, 3, (0, 0), coeffs_r, coeffs_i)
        b = invert(t, (0.5, -0.3))
        assert tuple(t.evaluate(b)) == pytest.approx((0.5, -0.3), abs=1e-10)

    def test_equality(self):
        assert random_template(2, 3) == random_template(2, 3)
        assert random_template(2, 3) != random_template(2, 4)
