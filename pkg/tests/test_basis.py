import unittest

import numpy as np

from basis import (
    BENCHMARK_FUNCTIONS,
    BasisError,
    build_basis,
    eval_modal,
    eval_modal_gradient,
    eval_nodal,
    eval_nodal_gradient,
    eval_orthonormal,
    filter_modes,
    gfc_decay_check,
    gfc_transform,
    interpolate,
    interpolation_error,
    interpolation_operator_norm,
    lebesgue_bound,
    lebesgue_estimate,
    nodal_values,
    permuted_partial_errors,
    project_moments,
    reconstruct_nodal,
    weierstrass_permutation,
)
from candidates import candidate_count_for, fill_to_count, random_points
from fekete import approximate_fekete, chebyshev_grid, equispaced_grid, fekete_from_nodes
from geometry import BOX_HALF_WIDTH, hexagon, holed_square, l_shape, normalize_hull, square, t_hull
from moments import MonomialSpec, eval_monomials
from quadrature import polygon_rule


def _basis(poly, space, p, route="direct"):
    normalized, amap = normalize_hull(poly)
    spec = MonomialSpec(space, p)
    cands = fill_to_count(normalized, candidate_count_for(spec))
    return build_basis(approximate_fekete(normalized, spec, cands), route), amap


class NodalBasisTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.square_p8, cls.square_map = _basis(square(), "P", 8)
        cls.samples = random_points(cls.square_p8.poly, 100, seed=11).points

    def test_cardinality_at_nodes(self):
        b = self.square_p8
        np.testing.assert_allclose(eval_nodal(b, b.nodes), np.eye(b.N), atol=1e-8)

    def test_partition_of_unity(self):
        b = self.square_p8
        np.testing.assert_allclose(eval_nodal(b, self.samples).sum(axis=1), 1.0, atol=1e-8)

    def test_single_point_returns_vector(self):
        b = self.square_p8
        values = eval_nodal(b, b.nodes[3])
        self.assertEqual(values.shape, (b.N,))
        self.assertAlmostEqual(values[3], 1.0, places=8)

    def test_polynomials_are_reproduced(self):
        b = self.square_p8
        coeffs = np.random.default_rng(5).normal(size=b.spec.N)
        exact = eval_monomials(b.spec, self.samples) @ coeffs
        at_nodes = eval_monomials(b.spec, b.nodes) @ coeffs
        np.testing.assert_allclose(interpolate(b, at_nodes, self.samples), exact, atol=1e-8 * np.abs(coeffs).sum())

    def test_gradients_of_partition_of_unity_vanish(self):
        b = self.square_p8
        gx, gy = eval_nodal_gradient(b, self.samples)
        np.testing.assert_allclose(gx.sum(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(gy.sum(axis=1), 0.0, atol=1e-6)

    def test_points_outside_box_are_flagged(self):
        b = self.square_p8
        _, flags = eval_nodal(b, np.array([[0.0, 0.0], [1.0, 1.0]]), return_flag=True)
        self.assertEqual(flags.tolist(), [False, True])

    def test_routes_agree(self):
        direct, _ = _basis(t_hull(), "P", 8, "direct")
        reusable = build_basis(direct.fekete, "reusable")
        pts = random_points(direct.poly, 100, seed=2).points
        np.testing.assert_allclose(eval_nodal(direct, pts), eval_nodal(reusable, pts), atol=1e-8)
        with self.assertRaises(BasisError):
            build_basis(direct.fekete, "inverse")


class ModalBasisTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.b, _ = _basis(square(), "P", 8)
        cls.rule = polygon_rule(cls.b.poly, 2 * cls.b.spec.maxdeg)

    def test_modes_are_orthonormal_on_the_nodes(self):
        modes = eval_modal(self.b, self.b.nodes)
        np.testing.assert_allclose(modes.T @ modes, np.eye(self.b.N), atol=1e-8)

    def test_modal_values_at_nodes_are_left_singular_vectors(self):
        np.testing.assert_allclose(eval_modal(self.b, self.b.nodes), self.b.U, atol=1e-8)

    def test_orthonormal_modes_rescale_modal_ones(self):
        pts = self.rule.nodes[::7]
        expected = eval_modal(self.b, pts) * (self.b.sigma / self.b.fnorm)
        np.testing.assert_allclose(eval_orthonormal(self.b, pts), expected, rtol=1e-8, atol=1e-10 * np.abs(expected).max())

    def test_first_mode_keeps_one_sign(self):
        t = BOX_HALF_WIDTH
        values = eval_modal(self.b, equispaced_grid(50, (-t, -t, t, t)), 1)[:, 0]
        self.assertTrue(np.all(values > 0) or np.all(values < 0))

    def test_sigma_is_descending_and_positive(self):
        self.assertTrue(np.all(self.b.sigma > 0))
        self.assertTrue(np.all(np.diff(self.b.sigma) <= 1e-12 * self.b.sigma[0]))

    def test_modal_gradient_matches_nodal_chain(self):
        pts = self.rule.nodes[:5]
        mx, my = eval_modal_gradient(self.b, pts)
        nx, ny = eval_nodal_gradient(self.b, pts)
        np.testing.assert_allclose(mx, nx @ self.b.U, atol=1e-6)
        np.testing.assert_allclose(my, ny @ self.b.U, atol=1e-6)

    def test_truncated_evaluation_and_bad_mode_count(self):
        self.assertEqual(eval_modal(self.b, self.b.nodes, 5).shape, (self.b.N, 5))
        for k_m in (0, self.b.N + 1):
            with self.subTest(k_m=k_m), self.assertRaises(BasisError):
                eval_orthonormal(self.b, self.b.nodes, k_m)


class GfcTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.b, _ = _basis(hexagon(), "P", 6)

    def test_round_trip_recovers_nodal_values(self):
        u = np.random.default_rng(1).normal(size=self.b.N)
        np.testing.assert_allclose(reconstruct_nodal(gfc_transform(self.b, u)), u, atol=1e-8)

    def test_single_mode_needs_only_its_prefix(self):
        u = eval_modal(self.b, self.b.nodes)[:, 4]
        gfc = gfc_transform(self.b, u, 5)
        self.assertEqual(gfc.k_m, 5)
        np.testing.assert_allclose(gfc.w, np.eye(self.b.N)[4, :5], atol=1e-8)
        np.testing.assert_allclose(reconstruct_nodal(gfc), u, atol=1e-8)

    def test_filter_tail_is_dropped_energy(self):
        u = np.random.default_rng(2).normal(size=self.b.N)
        w = gfc_transform(self.b, u).w
        filtered, tail = filter_modes(self.b, u, 10)

        self.assertAlmostEqual(tail, float(np.linalg.norm(w[10:])), places=10)
        self.assertAlmostEqual(
            float(np.linalg.norm(u - filtered)), float(np.linalg.norm(w[10:])), places=8
        )
        with self.assertRaises(BasisError):
            filter_modes(self.b, u, 0)

    def test_decay_bound_holds(self):
        u = BENCHMARK_FUNCTIONS["sin2pi"](self.b.nodes[:, 0], self.b.nodes[:, 1])
        report = gfc_decay_check(self.b, u)
        self.assertTrue(report.bound_holds)
        self.assertEqual(len(report.w_abs), self.b.N)

    def test_nodal_parseval(self):
        b = self.b
        u = np.random.default_rng(3).normal(size=b.N)
        w = gfc_transform(b, u).w
        self.assertAlmostEqual(float(np.linalg.norm(w)), float(np.linalg.norm(u)), places=10)
        np.testing.assert_allclose(eval_modal(b, b.nodes) @ w, u, atol=1e-8)


class LebesgueTests(unittest.TestCase):
    def test_bound_covers_operator_norm(self):
        for poly, space, p in ((square(), "P", 4), (l_shape(), "P", 5), (hexagon(), "Q", 3), (t_hull(), "P", 6)):
            with self.subTest(vertices=len(poly), space=space, p=p):
                b, _ = _basis(poly, space, p)
                norm = interpolation_operator_norm(b)
                self.assertGreater(norm, 0.0)
                self.assertLessEqual(norm, lebesgue_bound(b) * (1 + 1e-8))

    def test_bound_blows_up_for_near_duplicate_nodes(self):
        normalized, _ = normalize_hull(square())
        spec = MonomialSpec("Q", 2)
        t = BOX_HALF_WIDTH
        nodes = equispaced_grid(3, (-t, -t, t, t))
        clean = lebesgue_bound(build_basis(fekete_from_nodes(normalized, spec, nodes)))

        nodes[5] = nodes[4] + np.array([1e-7, 0.0])
        crowded = lebesgue_bound(build_basis(fekete_from_nodes(normalized, spec, nodes)))
        self.assertGreater(crowded, 1e6)
        self.assertGreater(crowded, 1e4 * clean)

    def test_estimate_is_at_least_one(self):
        b, _ = _basis(square(), "Q", 4)
        samples = random_points(b.poly, 500, seed=4)
        self.assertGreaterEqual(lebesgue_estimate(b, samples), 1.0 - 1e-8)
        self.assertAlmostEqual(lebesgue_estimate(b, b.nodes), 1.0, places=6)

    def test_fekete_nodes_beat_equispaced_nodes(self):
        fekete, _ = _basis(square(), "Q", 10)
        t = BOX_HALF_WIDTH
        spec = MonomialSpec("Q", 10)
        equispaced = build_basis(fekete_from_nodes(fekete.poly, spec, equispaced_grid(11, (-t, -t, t, t))))
        samples = random_points(fekete.poly, 10000, seed=8)
        self.assertLessEqual(lebesgue_estimate(fekete, samples), 0.1 * lebesgue_estimate(equispaced, samples))


class FilteringTests(unittest.TestCase):
    def test_leading_modes_carry_a_smooth_field(self):
        normalized, amap = normalize_hull(square())
        t = BOX_HALF_WIDTH
        fek = approximate_fekete(normalized, MonomialSpec("Q", 19), chebyshev_grid(20, (-t, -t, t, t)))
        b = build_basis(fek)
        u = nodal_values(b, BENCHMARK_FUNCTIONS["radial4pi"], amap)
        errors = {k: float(np.linalg.norm(u - filter_modes(b, u, k)[0])) for k in (200, 360, 400)}

        self.assertLessEqual(errors[400], 1e-8)
        self.assertGreaterEqual(errors[200], 100 * errors[360])


class CorpusTests(unittest.TestCase):
    def test_cardinality_on_every_reference_hull(self):
        for poly in (square(), hexagon(), t_hull(), holed_square()):
            for p in (6, 10):
                with self.subTest(vertices=len(poly), holes=len(poly.holes), p=p):
                    b, _ = _basis(poly, "P", p)
                    np.testing.assert_allclose(eval_nodal(b, b.nodes), np.eye(b.N), atol=1e-8)

    def test_routes_agree_at_degree_ten(self):
        direct, _ = _basis(t_hull(), "P", 10)
        reusable = build_basis(direct.fekete, "reusable")
        pts = random_points(direct.poly, 200, seed=6).points
        np.testing.assert_allclose(eval_nodal(direct, pts), eval_nodal(reusable, pts), atol=1e-8)

    def test_t_hull_error_falls_faster_than_geometric(self):
        degrees = (4, 8, 12, 16)
        errors = []
        for p in degrees:
            b, amap = _basis(t_hull(), "P", p)
            errors.append(interpolation_error(b, BENCHMARK_FUNCTIONS["sin2pi"], amap))
        logs = np.log10(errors)

        self.assertLessEqual(errors[-1], 1e-4)
        self.assertTrue(np.all(np.diff(logs) < 0))
        self.assertLess(logs[-1] - logs[0], 3 * (logs[1] - logs[0]))


class ProjectionTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.b, cls.amap = _basis(square(), "P", 6)

    def test_permutation_sorts_coefficients(self):
        W = project_moments(self.b, BENCHMARK_FUNCTIONS["cos3pi"], self.amap)
        perm = weierstrass_permutation(self.b, W)
        magnitudes = np.abs(W @ self.b.ortho_factor)[perm]

        self.assertEqual(sorted(perm.tolist()), list(range(self.b.N)))
        self.assertTrue(np.all(np.diff(magnitudes) <= 0))

    def test_partial_errors_do_not_increase(self):
        perm, errors = permuted_partial_errors(self.b, BENCHMARK_FUNCTIONS["sin2pi"], self.amap)
        self.assertEqual(len(errors), self.b.N)
        self.assertTrue(np.all(np.diff(errors) <= 1e-10))

    def test_interpolation_error_shrinks_with_degree(self):
        smooth = lambda x, y: np.exp(0.5 * x + 0.3 * y)
        errors = []
        for p in (2, 4, 6):
            b, amap = _basis(square(), "P", p)
            errors.append(interpolation_error(b, smooth, amap))
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[2], errors[1])


if __name__ == "__main__":
    unittest.main()
