import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from geometry import Polygon, signed_area
from logger_utils import get_logger


log = get_logger(__name__)

SPACES = ("P", "Q")


@dataclass(frozen=True)
class MonomialSpec:
    """Monomial space P (total degree <= p) or Q (degree <= p per axis)."""

    space: str
    p: int
    d: int = 2
    exponents: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"Polynomial space must be P or Q, got {self.space!r}")
        if isinstance(self.p, bool) or not isinstance(self.p, int) or self.p < 0:
            raise ValueError(f"Degree must be a non-negative integer, got {self.p!r}")
        if self.d != 2:
            raise ValueError(f"Only d = 2 is supported, got {self.d}")
        object.__setattr__(self, "exponents", tuple(enumerate_monomials(self)))

    @property
    def N(self) -> int:
        return len(self.exponents)

    @property
    def maxdeg(self) -> int:
        return self.p if self.space == "P" else self.d * self.p

    def exponent_array(self) -> np.ndarray:
        return np.array(self.exponents, dtype=int).reshape(-1, self.d)


@dataclass(frozen=True, eq=False)
class MomentVector:
    values: np.ndarray
    spec: MonomialSpec

    def __len__(self) -> int:
        return len(self.values)


def _graded_key(exponent: tuple) -> tuple:
    return (sum(exponent),) + tuple(-e for e in exponent)


def enumerate_monomials(spec: MonomialSpec) -> list:
    ranges = [range(spec.p + 1)] * spec.d
    exps = itertools.product(*ranges)
    if spec.space == "P":
        exps = (e for e in exps if sum(e) <= spec.p)
    return sorted(exps, key=_graded_key)


def _points(pts) -> np.ndarray:
    if hasattr(pts, "points"):
        pts = pts.points
    return np.atleast_2d(np.asarray(pts, dtype=float))


def _power_rows(pts: np.ndarray, exps: np.ndarray) -> np.ndarray:
    top = int(exps.max()) if exps.size else 0
    result = np.ones((len(pts), len(exps)))
    for axis in range(exps.shape[1]):
        table = pts[:, axis:axis + 1] ** np.arange(top + 1)
        result *= table[:, exps[:, axis]]
    return result


def eval_monomials(spec: MonomialSpec, pts) -> np.ndarray:
    """Monomial rows f(x); a single point gives a length-N vector."""
    single = np.ndim(pts) == 1
    rows = _power_rows(_points(pts), spec.exponent_array())
    return rows[0] if single else rows


def monomial_gradients(spec: MonomialSpec, pts) -> tuple:
    pts = _points(pts)
    exps = spec.exponent_array()
    grads = []
    for axis in range(spec.d):
        lowered = exps.copy()
        lowered[:, axis] = np.maximum(lowered[:, axis] - 1, 0)
        grads.append(_power_rows(pts, lowered) * exps[:, axis])
    return tuple(grads)


def vandermonde(spec: MonomialSpec, pts) -> np.ndarray:
    pts = _points(pts)
    if len(pts) < 1:
        raise ValueError("Vandermonde needs at least one point")
    return _power_rows(pts, spec.exponent_array())


def _flux_rows(exps: np.ndarray, pts: np.ndarray, axis: int) -> np.ndarray:
    raised = exps.copy()
    raised[:, axis] += 1
    d = exps.shape[1]
    return _power_rows(pts, raised) / (d * raised[:, axis])


def antiderivative_flux(spec: MonomialSpec, j: int, k: int, pt) -> float:
    """Component k of F with div F = f_j, split evenly across the axes."""
    exps = spec.exponent_array()[j:j + 1]
    return float(_flux_rows(exps, _points(pt), k)[0, 0])


def integrate_exponents(poly: Polygon, exps: np.ndarray) -> np.ndarray:
    """Integrals of x^a y^b over poly by reduction to Gauss-Legendre edge sums."""
    exps = np.asarray(exps, dtype=int).reshape(-1, 2)
    degree = int(exps.sum(axis=1).max()) + 1
    nodes, weights = roots_legendre(math.ceil((degree + 1) / 2))
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    total = np.zeros(len(exps))
    for a, b in poly.edges():
        pts = a + t[:, None] * (b - a)
        dx, dy = b - a
        f1 = _flux_rows(exps, pts, 0)
        f2 = _flux_rows(exps, pts, 1)
        total += w @ (f1 * dy - f2 * dx)
    return total


def boundary_moments(poly: Polygon, spec: MonomialSpec) -> MomentVector:
    values = integrate_exponents(poly, spec.exponent_array())
    area = signed_area(poly)
    if abs(values[0] - area) > 1e-12 * max(1.0, abs(area)) * 10:
        log.warning("Constant moment %r differs from area %r", values[0], area)
    return MomentVector(values=values, spec=spec)


def moment_norm_sq(poly: Polygon, spec: MonomialSpec, scale=None) -> float:
    """Integral of f.f over the polygon, each monomial first multiplied by ``scale``."""
    values = integrate_exponents(poly, 2 * spec.exponent_array())
    if scale is not None:
        values = values * np.asarray(scale, dtype=float) ** 2
    return float(values.sum())
