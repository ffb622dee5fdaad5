import unittest

import numpy as np

from geometry import holed_square, l_shape, square, t_hull, two_notch_domain
from moments import (
    MonomialSpec,
    antiderivative_flux,
    boundary_moments,
    enumerate_monomials,
    eval_monomials,
    integrate_exponents,
    moment_norm_sq,
    monomial_gradients,
    vandermonde,
)
from quadrature import polygon_rule


def _square_integral(a: int, b: int) -> float:
    """Integral of x^a y^b over [-1, 1]^2."""
    one = lambda k: 0.0 if k % 2 else 2.0 / (k + 1)
    return one(a) * one(b)


class MonomialSpecTests(unittest.TestCase):
    def test_sizes_of_both_spaces(self):
        for p in range(7):
            with self.subTest(p=p):
                self.assertEqual(MonomialSpec("P", p).N, (p + 1) * (p + 2) // 2)
                self.assertEqual(MonomialSpec("Q", p).N, (p + 1) ** 2)
                self.assertEqual(MonomialSpec("P", p).maxdeg, p)
                self.assertEqual(MonomialSpec("Q", p).maxdeg, 2 * p)

    def test_graded_order_starts_with_constant(self):
        self.assertEqual(
            enumerate_monomials(MonomialSpec("P", 2)),
            [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
        )
        exps = MonomialSpec("Q", 3).exponents
        self.assertEqual(exps[0], (0, 0))
        self.assertEqual([sum(e) for e in exps], sorted(sum(e) for e in exps))
        self.assertEqual(max(exps), (3, 3))

    def test_invalid_specs_are_rejected(self):
        for args in (("R", 2), ("P", -1), ("Q", 1.5), ("P", True)):
            with self.subTest(args=args), self.assertRaises(ValueError):
                MonomialSpec(*args)
        with self.assertRaises(ValueError):
            MonomialSpec("P", 2, d=3)


class EvaluationTests(unittest.TestCase):
    def test_rows_match_explicit_powers(self):
        spec = MonomialSpec("Q", 2)
        pts = np.array([[0.3, -0.7], [1.5, 2.0]])
        rows = eval_monomials(spec, pts)
        expected = np.array([[x ** a * y ** b for a, b in spec.exponents] for x, y in pts])
        np.testing.assert_allclose(rows, expected, rtol=1e-14)
        np.testing.assert_allclose(eval_monomials(spec, pts[0]), expected[0], rtol=1e-14)
        np.testing.assert_allclose(vandermonde(spec, pts), expected, rtol=1e-14)

    def test_gradients_match_finite_differences(self):
        spec = MonomialSpec("P", 4)
        pt = np.array([[0.21, -0.34]])
        gx, gy = monomial_gradients(spec, pt)
        h = 1e-6
        fdx = (eval_monomials(spec, pt + [h, 0]) - eval_monomials(spec, pt - [h, 0])) / (2 * h)
        fdy = (eval_monomials(spec, pt + [0, h]) - eval_monomials(spec, pt - [0, h])) / (2 * h)
        np.testing.assert_allclose(gx, fdx, atol=1e-8)
        np.testing.assert_allclose(gy, fdy, atol=1e-8)

    def test_flux_divergence_reproduces_monomial(self):
        spec = MonomialSpec("P", 3)
        pt = np.array([0.4, 0.6])
        h = 1e-5
        for j, (a, b) in enumerate(spec.exponents):
            with self.subTest(exponent=(a, b)):
                div = (
                    antiderivative_flux(spec, j, 0, pt + [h, 0]) - antiderivative_flux(spec, j, 0, pt - [h, 0])
                    + antiderivative_flux(spec, j, 1, pt + [0, h]) - antiderivative_flux(spec, j, 1, pt - [0, h])
                ) / (2 * h)
                self.assertAlmostEqual(div, pt[0] ** a * pt[1] ** b, places=7)

    def test_vandermonde_needs_points(self):
        with self.assertRaises(ValueError):
            vandermonde(MonomialSpec("P", 1), np.empty((0, 2)))


class MomentTests(unittest.TestCase):
    def test_square_moments_are_exact(self):
        spec = MonomialSpec("Q", 5)
        moments = boundary_moments(square(), spec)
        expected = [_square_integral(a, b) for a, b in spec.exponents]
        np.testing.assert_allclose(moments.values, expected, atol=1e-13)
        self.assertEqual(len(moments), spec.N)

    def test_boundary_moments_agree_with_area_quadrature(self):
        spec = MonomialSpec("P", 6)
        for poly in (l_shape(), t_hull(), holed_square(), two_notch_domain()):
            with self.subTest(vertices=len(poly), holes=len(poly.holes)):
                rule = polygon_rule(poly, spec.maxdeg)
                expected = rule.weights @ vandermonde(spec, rule.nodes)
                moments = boundary_moments(poly, spec).values
                np.testing.assert_allclose(moments, expected, rtol=1e-11, atol=1e-11 * np.abs(expected).max())

    def test_moment_norm_sums_squared_monomials(self):
        spec = MonomialSpec("P", 3)
        expected = sum(_square_integral(2 * a, 2 * b) for a, b in spec.exponents)
        self.assertAlmostEqual(moment_norm_sq(square(), spec), expected, places=12)

    def test_moment_norm_applies_column_scale(self):
        spec = MonomialSpec("P", 2)
        scale = np.arange(1.0, spec.N + 1.0)
        expected = sum(s * s * _square_integral(2 * a, 2 * b) for s, (a, b) in zip(scale, spec.exponents))
        self.assertAlmostEqual(moment_norm_sq(square(), spec, scale), expected, places=12)

    def test_integrate_exponents_handles_single_row(self):
        np.testing.assert_allclose(integrate_exponents(square(), [(2, 0)]), [4.0 / 3.0], rtol=1e-14)


if __name__ == "__main__":
    unittest.main()
