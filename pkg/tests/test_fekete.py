import unittest
from unittest.mock import patch

import numpy as np

from candidates import candidate_count_for, fill_to_count
from fekete import (
    FeketeError,
    approximate_fekete,
    chebyshev_grid,
    compare_svd_qr,
    equispaced_grid,
    fekete_from_nodes,
    physical_rule,
    qr_precondition,
    svd_precondition,
    triangle_lattice,
    weights_positive,
)
from geometry import (
    BOX_HALF_WIDTH,
    Polygon,
    hexagon,
    holed_square,
    l_shape,
    normalize_hull,
    points_in_polygon,
    signed_area,
    square,
    t_hull,
)
from moments import MonomialSpec, boundary_moments, vandermonde


def _setup(poly, space, p, oversample=10.0):
    normalized, amap = normalize_hull(poly)
    spec = MonomialSpec(space, p)
    return normalized, amap, spec, fill_to_count(normalized, candidate_count_for(spec, oversample))


class PreconditionTests(unittest.TestCase):
    def test_svd_preconditioned_matrix_is_orthonormal(self):
        normalized, _, spec, _ = _setup(square(), "P", 2)
        pts = fill_to_count(normalized, 60).points[:60]
        vmat = vandermonde(spec, pts)
        for s in (1, 2):
            with self.subTest(s=s):
                pre = svd_precondition(vmat, s)
                sv = np.linalg.svd(pre.V1, compute_uv=False)
                np.testing.assert_allclose(sv, 1.0, atol=1e-8)
                np.testing.assert_allclose(vmat @ pre.P0, pre.V1, atol=1e-10)

    def test_qr_preconditioned_matrix_is_orthonormal(self):
        normalized, _, spec, cands = _setup(hexagon(), "Q", 3)
        vmat = vandermonde(spec, cands.points)
        pre = qr_precondition(vmat)
        np.testing.assert_allclose(pre.V1.T @ pre.V1, np.eye(spec.N), atol=1e-10)
        np.testing.assert_allclose(vmat @ pre.P0, pre.V1, atol=1e-10)

    def test_second_qr_pass_restores_orthogonality(self):
        _, _, spec, cands = _setup(square(), "Q", 14)
        vmat = vandermonde(spec, cands.points)
        vmat = vmat / np.abs(vmat).max(axis=0)
        drift = []
        for s in (1, 2):
            V1 = qr_precondition(vmat, s).V1
            drift.append(float(np.abs(V1.T @ V1 - np.eye(spec.N)).max()))

        self.assertGreater(drift[0], 1e-9)
        self.assertLess(drift[1], 1e-12)
        with self.assertRaises(FeketeError):
            qr_precondition(vmat, 0)

    def test_preconditioning_rejects_short_or_deficient_input(self):
        with self.assertRaises(FeketeError):
            svd_precondition(np.ones((3, 5)))
        with self.assertRaises(FeketeError):
            svd_precondition(np.ones((10, 3)))
        with self.assertRaises(FeketeError):
            svd_precondition(np.eye(4), s=0)


class ApproximateFeketeTests(unittest.TestCase):
    def assert_valid_rule(self, fek, normalized, spec):
        self.assertEqual(fek.N, spec.N)
        self.assertEqual(len(set(fek.indices.tolist())), spec.N)
        self.assertTrue(np.all(points_in_polygon(normalized, fek.points)))
        moments = boundary_moments(normalized, spec).values
        reproduced = vandermonde(spec, fek.points).T @ fek.weights
        np.testing.assert_allclose(reproduced, moments, rtol=1e-8, atol=1e-8)
        self.assertAlmostEqual(fek.weights.sum() / signed_area(normalized), 1.0, places=8)

    def test_selection_reproduces_moments(self):
        cases = (
            (square(), "P", 5),
            (square(), "Q", 4),
            (hexagon(), "P", 6),
            (l_shape(), "Q", 3),
            (t_hull(), "P", 6),
        )
        for poly, space, p in cases:
            normalized, _, spec, cands = _setup(poly, space, p)
            for preconditioner in ("svd", "qr"):
                with self.subTest(vertices=len(poly), space=space, p=p, pre=preconditioner):
                    fek = approximate_fekete(normalized, spec, cands, preconditioner=preconditioner)
                    self.assert_valid_rule(fek, normalized, spec)

    def test_matching_pursuit_reproduces_moments(self):
        normalized, _, spec, cands = _setup(square(), "P", 5)
        fek = approximate_fekete(normalized, spec, cands, "omp")

        self.assertEqual(fek.method, "omp")
        self.assert_valid_rule(fek, normalized, spec)

    def test_repeated_preconditioning(self):
        normalized, _, spec, cands = _setup(square(), "P", 6)
        fek = approximate_fekete(normalized, spec, cands, s=3)
        self.assert_valid_rule(fek, normalized, spec)

    def test_chebyshev_grid_keeps_every_node(self):
        normalized, amap, spec, _ = _setup(square(), "Q", 12)
        t = BOX_HALF_WIDTH
        grid = chebyshev_grid(13, (-t, -t, t, t))
        fek = approximate_fekete(normalized, spec, grid)

        self.assertEqual(sorted(fek.indices.tolist()), list(range(169)))
        self.assertAlmostEqual(fek.weights.sum() / amap.scale ** 2, 4.0, delta=1e-6)

    def test_svd_route_weights_are_positive(self):
        cases = (
            (square(), "P", 1),
            (square(), "P", 2),
            (square(), "P", 8),
            (hexagon(), "P", 6),
            (l_shape(), "Q", 3),
            (t_hull(), "P", 6),
            (holed_square(), "P", 4),
        )
        for poly, space, p in cases:
            normalized, _, spec, cands = _setup(poly, space, p)
            with self.subTest(vertices=len(poly), space=space, p=p):
                fek = approximate_fekete(normalized, spec, cands)
                self.assertEqual(fek.negative_weights(), 0)
                self.assertTrue(weights_positive(fek.weights))
                self.assert_valid_rule(fek, normalized, spec)

    def test_weight_sums_do_not_grow_with_degree(self):
        totals = []
        for p in range(4, 15):
            normalized, amap, spec, cands = _setup(square(), "P", p)
            fek = approximate_fekete(normalized, spec, cands)
            totals.append(float(np.abs(fek.weights).sum()) / amap.scale ** 2)
        np.testing.assert_allclose(totals, 4.0, rtol=1e-7)
        self.assertTrue(np.all(np.diff(totals) <= 1e-7))

    def test_one_sided_candidates_cannot_carry_positive_weights(self):
        normalized, _, spec, _ = _setup(square(), "P", 2)
        t = BOX_HALF_WIDTH
        one_sided = equispaced_grid(8, (0.2 * t, -0.9 * t, 0.9 * t, 0.9 * t))
        with self.assertRaises(FeketeError) as captured:
            approximate_fekete(normalized, spec, one_sided)
        self.assertIn("not positive", str(captured.exception))

        with patch("fekete.POSITIVE_MAX_DEGREE", 1), self.assertLogs("SHull.fekete", level="WARNING") as logs:
            fek = approximate_fekete(normalized, spec, one_sided)
        self.assertIn("not positive", "\n".join(logs.output))
        self.assertGreater(fek.negative_weights(), 0)

    def test_qr_route_keeps_greedy_support(self):
        normalized, amap, _, cands = _setup(square(), "P", 8)
        rows = compare_svd_qr(normalized, "P", range(4, 9), cands, amap=amap)
        svd = [r for r in rows if r.preconditioner == "svd"]
        qr = [r for r in rows if r.preconditioner == "qr"]

        for row in svd:
            with self.subTest(p=row.p):
                self.assertEqual(row.negative_weights, 0)
                self.assertLessEqual(row.sum_abs_weights, row.sum_weights + 1e-9)
        self.assertTrue(any(r.sum_abs_weights > r.sum_weights + 1e-3 for r in qr))
        self.assertNotEqual(
            [(r.negative_weights, round(r.lebesgue, 6)) for r in svd],
            [(r.negative_weights, round(r.lebesgue, 6)) for r in qr],
        )

    def test_svd_route_error_falls_with_degree(self):
        normalized, amap, _, cands = _setup(square(), "Q", 12)
        rows = compare_svd_qr(normalized, "Q", (4, 6, 8, 10, 12), cands, amap=amap)
        errors = [r.interp_error for r in rows if r.preconditioner == "svd"]
        self.assertTrue(all(b < a for a, b in zip(errors, errors[1:])))
        self.assertLess(errors[-1], 0.05)

    def test_chebyshev_grid_at_degree_nineteen(self):
        normalized, amap, spec, _ = _setup(square(), "Q", 19)
        t = BOX_HALF_WIDTH
        fek = approximate_fekete(normalized, spec, chebyshev_grid(20, (-t, -t, t, t)))

        self.assertEqual(fek.N, 400)
        self.assertAlmostEqual(fek.weights.sum() / amap.scale ** 2, 4.0, delta=1e-6)
        self.assertLessEqual(float(np.abs(fek.weights).sum()) / amap.scale ** 2, 5.0)

    def test_invalid_selection_requests(self):
        normalized, _, spec, cands = _setup(square(), "P", 3)
        with self.assertRaises(FeketeError):
            approximate_fekete(square(), spec, fill_to_count(square(), 100))
        with self.assertRaises(FeketeError):
            approximate_fekete(normalized, spec, cands.points[: spec.N - 1])
        with self.assertRaises(FeketeError):
            approximate_fekete(normalized, spec, cands, "lu")
        with self.assertRaises(FeketeError):
            approximate_fekete(normalized, spec, cands, preconditioner="lu")


class FixedNodeTests(unittest.TestCase):
    def test_triangle_lattice_rule_is_exact(self):
        tri = Polygon([(0.0, 0.0), (0.4, 0.0), (0.0, 0.4)])
        for p in (1, 2, 4):
            with self.subTest(p=p):
                spec = MonomialSpec("P", p)
                nodes = triangle_lattice(tri.vertices, p)
                fek = fekete_from_nodes(tri, spec, nodes)
                self.assertEqual(fek.N, spec.N)
                self.assertAlmostEqual(fek.weights.sum(), 0.08, places=12)
                np.testing.assert_allclose(
                    vandermonde(spec, fek.points).T @ fek.weights,
                    boundary_moments(tri, spec).values,
                    rtol=1e-10,
                    atol=1e-13,
                )

    def test_node_count_and_location_are_checked(self):
        normalized, _, spec, _ = _setup(square(), "Q", 2)
        t = BOX_HALF_WIDTH
        with self.assertRaises(FeketeError):
            fekete_from_nodes(normalized, spec, equispaced_grid(2, (-t, -t, t, t)))
        with self.assertRaises(FeketeError):
            fekete_from_nodes(normalized, spec, equispaced_grid(3, (-1, -1, 1, 1)))

    def test_grids_have_expected_layout(self):
        grid = chebyshev_grid(4)
        self.assertEqual(grid.shape, (16, 2))
        self.assertTrue(np.all(np.abs(grid) < 1.0))
        self.assertEqual(equispaced_grid(3).tolist()[0], [-1.0, -1.0])
        self.assertEqual(triangle_lattice([(0, 0), (1, 0), (0, 1)], 0).shape, (1, 2))


class PhysicalRuleTests(unittest.TestCase):
    def test_physical_weights_sum_to_physical_area(self):
        normalized, amap, spec, cands = _setup(l_shape(), "P", 4)
        fek = approximate_fekete(normalized, spec, cands)
        pts, w = physical_rule(fek, amap)

        self.assertAlmostEqual(w.sum(), 3.0, places=9)
        self.assertTrue(np.all(points_in_polygon(l_shape(), pts)))


class ComparisonTests(unittest.TestCase):
    def test_rows_cover_both_preconditioners(self):
        normalized, amap, _, cands = _setup(square(), "P", 6)
        rows = compare_svd_qr(normalized, "P", [2, 4, 6], cands, amap=amap)

        self.assertEqual([(r.p, r.preconditioner) for r in rows], [
            (2, "svd"), (2, "qr"), (4, "svd"), (4, "qr"), (6, "svd"), (6, "qr"),
        ])
        for row in rows:
            with self.subTest(p=row.p, pre=row.preconditioner):
                self.assertAlmostEqual(row.sum_weights, 4.0, places=7)
                self.assertGreaterEqual(row.sum_abs_weights, row.sum_weights - 1e-9)
                self.assertGreaterEqual(row.lebesgue, 1.0 - 1e-8)
                self.assertTrue(np.isfinite(row.interp_error))


if __name__ == "__main__":
    unittest.main()
