from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from fekete import FeketeSet
from geometry import BOX_HALF_WIDTH, BOX_TOLERANCE, Polygon
from logger_utils import get_logger
from moments import MonomialSpec, eval_monomials, moment_norm_sq, monomial_gradients, vandermonde
from quadrature import MAX_AREA_DEGREE, dense_polygon_rule, polygon_rule


log = get_logger(__name__)

ROUTES = ("direct", "reusable")
MODAL_SIGMA_FLOOR = 1e-12


class BasisError(ValueError):
    """Raised when a hull basis cannot be built or evaluated."""


@dataclass(frozen=True, eq=False)
class HullBasis:
    """Nodal, modal and orthonormal bases on one normalized hull.

    psi = f a, psi_bar = f modal_factor = psi U, psi_tilde = psi_bar sigma / fnorm.
    U, sigma come from the SVD of the column-scaled Vandermonde at the nodes, so
    psi_bar is orthonormal on the nodes; fnorm is the L2 norm of the scaled monomials.
    """

    poly: Polygon
    spec: MonomialSpec
    nodes: np.ndarray
    weights: np.ndarray
    a: np.ndarray
    modal_factor: np.ndarray
    ortho_factor: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    fnorm: float
    route: str
    fekete: Optional[FeketeSet] = None

    @property
    def N(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class GfcVector:
    w: np.ndarray
    basis: HullBasis

    @property
    def k_m(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class GfcDecayReport:
    w_abs: np.ndarray
    sigma: np.ndarray
    breve_norm: float
    envelope: float
    bound_holds: bool
    nodal_bound_holds: bool


def build_basis(fek: FeketeSet, route: str = "direct") -> HullBasis:
    """Nodal coefficients plus the modal factor V S^-1 of the restricted Vandermonde SVD."""
    if route not in ROUTES:
        raise BasisError(f"Unknown coefficient route '{route}'")
    spec = fek.spec
    scale = fek.col_scale
    Uf, Sf, Vft = fek.svd
    support = fek.support_svd[1]
    if support[-1] <= MODAL_SIGMA_FLOOR:
        raise BasisError(f"Degenerate node set: preconditioned sigma_min = {support[-1]:.3g}")
    if route == "direct":
        a = scale[:, None] * ((Vft.T / Sf) @ Uf.T)
    else:
        U1, S1, V1t = fek.support_svd
        a = scale[:, None] * (fek.precondition @ (V1t.T / S1) @ U1.T)

    modal = scale[:, None] * (Vft.T / Sf)
    fnorm = float(np.sqrt(moment_norm_sq(fek.poly, spec, scale)))
    log.debug(
        "Built %s basis %s%d: N=%d, Lebesgue bound %.4g", route, spec.space, spec.p, spec.N, fnorm / Sf[-1]
    )
    return HullBasis(
        poly=fek.poly,
        spec=spec,
        nodes=fek.points,
        weights=fek.weights,
        a=a,
        modal_factor=modal,
        ortho_factor=modal * (Sf / fnorm),
        U=Uf,
        sigma=Sf,
        fnorm=fnorm,
        route=route,
        fekete=fek,
    )


def outside_box(pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return np.any(np.abs(pts) > BOX_HALF_WIDTH + BOX_TOLERANCE, axis=1)


def _rows(b: HullBasis, pts, factor: np.ndarray, k_m: Optional[int], return_flag: bool):
    single = np.ndim(pts) == 1
    pts2 = np.atleast_2d(np.asarray(pts, dtype=float))
    k = b.N if k_m is None else k_m
    if not 1 <= k <= b.N:
        raise BasisError(f"Mode count must lie in 1..{b.N}, got {k}")
    values = eval_monomials(b.spec, pts2) @ factor[:, :k]
    if single:
        values = values[0]
    if return_flag:
        return values, outside_box(pts2)
    return values


def eval_nodal(b: HullBasis, pts, *, return_flag: bool = False):
    return _rows(b, pts, b.a, None, return_flag)


def eval_modal(b: HullBasis, pts, k_m: Optional[int] = None, *, return_flag: bool = False):
    return _rows(b, pts, b.modal_factor, k_m, return_flag)


def eval_orthonormal(b: HullBasis, pts, k_m: Optional[int] = None, *, return_flag: bool = False):
    return _rows(b, pts, b.ortho_factor, k_m, return_flag)


def eval_nodal_gradient(b: HullBasis, pts) -> tuple:
    gx, gy = monomial_gradients(b.spec, pts)
    return gx @ b.a, gy @ b.a


def eval_modal_gradient(b: HullBasis, pts) -> tuple:
    gx, gy = monomial_gradients(b.spec, pts)
    return gx @ b.modal_factor, gy @ b.modal_factor


def interpolate(b: HullBasis, values, pts) -> np.ndarray:
    return eval_nodal(b, pts) @ np.asarray(values, dtype=float)


def gfc_transform(b: HullBasis, u_nodal, k_m: Optional[int] = None) -> GfcVector:
    k = b.N if k_m is None else k_m
    if not 1 <= k <= b.N:
        raise BasisError(f"Mode count must lie in 1..{b.N}, got {k}")
    return GfcVector(w=b.U[:, :k].T @ np.asarray(u_nodal, dtype=float), basis=b)


def reconstruct_nodal(gfc: GfcVector) -> np.ndarray:
    return gfc.basis.U[:, : gfc.k_m] @ gfc.w


def filter_modes(b: HullBasis, u_nodal, k_m: int) -> tuple:
    w = gfc_transform(b, u_nodal).w
    if not 1 <= k_m <= b.N:
        raise BasisError(f"Mode count must lie in 1..{b.N}, got {k_m}")
    filtered = b.U[:, :k_m] @ w[:k_m]
    return filtered, float(np.linalg.norm(w[k_m:]))


def gfc_decay_check(b: HullBasis, u_nodal) -> GfcDecayReport:
    u = np.asarray(u_nodal, dtype=float)
    w = b.U.T @ u
    w_abs = np.abs(w)
    breve = float(np.linalg.norm(w / b.sigma))
    return GfcDecayReport(
        w_abs=w_abs,
        sigma=b.sigma.copy(),
        breve_norm=breve,
        envelope=float(np.max(w_abs / b.sigma)),
        bound_holds=bool(np.all(w_abs <= b.sigma * breve * (1 + 1e-10) + 1e-14)),
        nodal_bound_holds=bool(np.all(w_abs <= b.sigma * np.linalg.norm(u) + 1e-10)),
    )


def lebesgue_bound(b: HullBasis) -> float:
    """||f|| / sigma_min: bounds the L2 norm of nodal values -> interpolant."""
    return float(b.fnorm / b.sigma.min())


def lebesgue_estimate(b: HullBasis, samples) -> float:
    pts = samples.points if hasattr(samples, "points") else samples
    return float(np.abs(eval_nodal(b, pts)).sum(axis=1).max())


def interpolation_operator_norm(b: HullBasis) -> float:
    """L2 norm of nodal values -> interpolant, from the largest mass-matrix eigenvalue."""
    rule = dense_polygon_rule(b.poly, 2 * b.spec.maxdeg)
    psi = eval_nodal(b, rule.nodes)
    mass = psi.T @ (rule.weights[:, None] * psi)
    return float(np.sqrt(linalg.eigvalsh(mass)[-1]))


def project_moments(b: HullBasis, func, amap=None) -> np.ndarray:
    """W_j = integral of f_j u over the normalized hull."""
    rule = polygon_rule(b.poly, MAX_AREA_DEGREE)
    u = _sample(func, rule.nodes, amap)
    return (vandermonde(b.spec, rule.nodes) * rule.weights[:, None]).T @ u


def weierstrass_permutation(b: HullBasis, W) -> np.ndarray:
    coeffs = np.asarray(W, dtype=float) @ b.ortho_factor
    return np.argsort(-np.abs(coeffs), kind="stable")


def permuted_partial_errors(b: HullBasis, func, amap=None) -> tuple:
    """L2 errors of the best approximation from the first 1..N modes in Weierstrass order.

    The modes are not L2 orthogonal, so each error is a least-squares projection
    onto the span of the leading modes; the errors never increase.
    """
    perm = weierstrass_permutation(b, project_moments(b, func, amap))
    rule = polygon_rule(b.poly, MAX_AREA_DEGREE)
    root = np.sqrt(rule.weights)
    u = root * _sample(func, rule.nodes, amap)
    Q, _ = linalg.qr(root[:, None] * eval_modal(b, rule.nodes)[:, perm], mode="economic")
    captured = np.cumsum((Q.T @ u) ** 2)
    errors = np.sqrt(np.maximum(float(u @ u) - captured, 0.0))
    return perm, errors


def _sample(func, pts: np.ndarray, amap) -> np.ndarray:
    phys = pts if amap is None else amap.inverse(pts)
    return np.asarray(func(phys[:, 0], phys[:, 1]), dtype=float)


def nodal_values(b: HullBasis, func, amap=None) -> np.ndarray:
    return _sample(func, b.nodes, amap)


def interpolation_error(b: HullBasis, func, amap=None) -> float:
    """L2 interpolation error, in physical measure when amap is given."""
    rule = polygon_rule(b.poly, MAX_AREA_DEGREE)
    err = eval_nodal(b, rule.nodes) @ nodal_values(b, func, amap) - _sample(func, rule.nodes, amap)
    value = float(np.sqrt(rule.weights @ err ** 2))
    return value if amap is None else value / amap.scale


def cos3pi(x, y):
    return np.cos(3 * np.pi * x) * np.cos(3 * np.pi * y)


def sin2pi(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def radial4pi(x, y):
    return np.cos(4 * np.pi * np.sqrt(x ** 2 + y ** 2))


BENCHMARK_FUNCTIONS = {"cos3pi": cos3pi, "sin2pi": sin2pi, "radial4pi": radial4pi}
