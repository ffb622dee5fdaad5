import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from geometry import Polygon, triangulate
from logger_utils import get_logger
from moments import MonomialSpec, boundary_moments, vandermonde


log = get_logger(__name__)

MAX_EDGE_DEGREE = 41
MAX_AREA_DEGREE = 20


class QuadratureError(ValueError):
    """Raised for unsupported degrees or degenerate integration domains."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) @ self.weights


@lru_cache(maxsize=128)
def _unit_gauss(n: int) -> tuple:
    nodes, weights = roots_legendre(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _check_degree(degree: int, cap: int) -> None:
    if isinstance(degree, bool) or not isinstance(degree, int) or degree < 0:
        raise QuadratureError(f"Degree must be a non-negative integer, got {degree!r}")
    if degree > cap:
        raise QuadratureError(f"Degree {degree} exceeds the supported maximum {cap}")


def edge_rule(a, b, degree: int) -> QuadratureRule:
    _check_degree(degree, MAX_EDGE_DEGREE)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        raise QuadratureError("Edge endpoints coincide")
    t, w = _unit_gauss(degree // 2 + 1)
    return QuadratureRule(nodes=a + t[:, None] * (b - a), weights=w * length, degree=degree)


def _collapsed_rule(tri: np.ndarray, degree: int) -> tuple:
    tri = np.asarray(tri, dtype=float)
    a, b, c = tri
    twice_area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    scale = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
    if twice_area <= 1e-12 * scale ** 2:
        raise QuadratureError(f"Degenerate triangle {tri.tolist()}")
    t, w = _unit_gauss(math.ceil((degree + 2) / 2))
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    u, v, wu, wv = u.ravel(), v.ravel(), wu.ravel(), wv.ravel()
    nodes = (1 - u)[:, None] * a + (u * (1 - v))[:, None] * b + (u * v)[:, None] * c
    return nodes, wu * wv * twice_area * u


def triangle_rule(tri, degree: int) -> QuadratureRule:
    _check_degree(degree, MAX_AREA_DEGREE)
    nodes, weights = _collapsed_rule(tri, degree)
    return QuadratureRule(nodes=nodes, weights=weights, degree=degree)


def _stack(poly: Polygon, degree: int) -> tuple:
    parts = [_collapsed_rule(t, degree) for t in triangulate(poly)]
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def polygon_rule(poly: Polygon, degree: int) -> QuadratureRule:
    _check_degree(degree, MAX_AREA_DEGREE)
    nodes, weights = _stack(poly, degree)
    return QuadratureRule(nodes=nodes, weights=weights, degree=degree)


def dense_polygon_rule(poly: Polygon, degree: int) -> QuadratureRule:
    """Collapsed product rule without the degree cap, for Gram matrices of high-degree spaces."""
    if degree < 0:
        raise QuadratureError(f"Degree must be non-negative, got {degree}")
    nodes, weights = _stack(poly, degree)
    return QuadratureRule(nodes=nodes, weights=weights, degree=degree)


def integrate_monomials(poly: Polygon, spec: MonomialSpec) -> np.ndarray:
    if spec.maxdeg > MAX_AREA_DEGREE:
        log.debug("Degree %d above quadrature cap; using boundary moments", spec.maxdeg)
        return boundary_moments(poly, spec).values
    rule = polygon_rule(poly, spec.maxdeg)
    return rule.weights @ vandermonde(spec, rule.nodes)


def integrate(poly: Polygon, func, degree: int) -> float:
    rule = polygon_rule(poly, degree)
    return float(rule.weights @ np.asarray(func(rule.nodes[:, 0], rule.nodes[:, 1]), dtype=float))
