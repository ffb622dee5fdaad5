from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.optimize import nnls

from candidates import PointSet
from geometry import BOX_HALF_WIDTH, Polygon, is_normalized, points_in_polygon, signed_area
from logger_utils import get_logger
from moments import MonomialSpec, boundary_moments, vandermonde


log = get_logger(__name__)

RANK_RTOL = 1e-15
TIE_RTOL = 1e-12
SINGULAR_RTOL = 1e-12
MOMENT_RTOL = 1e-8
METHODS = ("qr", "omp")
PRECONDITIONERS = ("svd", "qr")

# weights at or below WEIGHT_FLOOR * mean weight count as non-positive
WEIGHT_FLOOR = 1e-10
POSITIVE_MAX_DEGREE = 12
EXCHANGE_ROWS = 8
MIN_SWAP_VOLUME = 1e-2
EXCHANGES_PER_POINT = 4
NNLS_RTOL = 1e-10


class FeketeError(ValueError):
    """Raised when Fekete selection or its preconditioning fails."""


@dataclass(frozen=True, eq=False)
class SvdPrecondition:
    V1: np.ndarray
    P0: np.ndarray
    U0: np.ndarray
    S0: np.ndarray
    V0: np.ndarray
    s: int


@dataclass(frozen=True, eq=False)
class QrPrecondition:
    V1: np.ndarray
    P0: np.ndarray
    R: np.ndarray
    s: int = 1


@dataclass(frozen=True, eq=False)
class FeketeSet:
    points: np.ndarray
    weights: np.ndarray
    indices: np.ndarray
    svd: tuple
    support_svd: tuple
    precondition: np.ndarray
    col_scale: np.ndarray
    moments: np.ndarray
    spec: MonomialSpec
    poly: Polygon
    method: str
    preconditioner: str = "svd"

    @property
    def N(self) -> int:
        return len(self.points)

    def negative_weights(self) -> int:
        return int(np.count_nonzero(self.weights < 0))


def _rank_check(S: np.ndarray, N: int) -> None:
    deficient = int(np.count_nonzero(S <= RANK_RTOL * S[0])) if S[0] > 0 else N
    if deficient:
        raise FeketeError(f"Vandermonde is rank deficient: {deficient} of {N} columns are dependent")


def svd_precondition(vmat: np.ndarray, s: int = 1) -> SvdPrecondition:
    vmat = np.asarray(vmat, dtype=float)
    if vmat.ndim != 2:
        raise FeketeError(f"Vandermonde must be a matrix, got shape {vmat.shape}")
    M, N = vmat.shape
    if M < N:
        raise FeketeError(f"Need at least {N} candidates, got {M}")
    if s < 1:
        raise FeketeError(f"Preconditioning iterations must be >= 1, got {s}")
    U0, S0, V0t = linalg.svd(vmat, full_matrices=False)
    _rank_check(S0, N)
    P = V0t.T / S0
    V1 = U0
    for _ in range(s - 1):
        Uk, Sk, Vkt = linalg.svd(V1, full_matrices=False)
        P = P @ (Vkt.T / Sk)
        V1 = Uk
    return SvdPrecondition(V1=V1, P0=P, U0=U0, S0=S0, V0=V0t.T, s=s)


def qr_precondition(vmat: np.ndarray, s: int = 1) -> QrPrecondition:
    """``s`` passes of V <- V R^-1, R from a Householder QR of the current V.

    V1 is the explicit product, so one pass is orthonormal only to about
    eps * cond(vmat); a second pass restores orthogonality.
    """
    vmat = np.asarray(vmat, dtype=float)
    if vmat.ndim != 2:
        raise FeketeError(f"Vandermonde must be a matrix, got shape {vmat.shape}")
    M, N = vmat.shape
    if M < N:
        raise FeketeError(f"Need at least {N} candidates, got {M}")
    if s < 1:
        raise FeketeError(f"Preconditioning iterations must be >= 1, got {s}")
    V1 = vmat
    P = np.eye(N)
    R = None
    for _ in range(s):
        (R,) = linalg.qr(V1, mode="r")
        R = R[:N]
        _rank_check(np.sort(np.abs(np.diag(R)))[::-1], N)
        step = linalg.solve_triangular(R, np.eye(N))
        V1 = V1 @ step
        P = P @ step
    return QrPrecondition(V1=V1, P0=P, R=R, s=s)


def _pick(scores: np.ndarray, taken: np.ndarray) -> int:
    scores = np.where(taken, -np.inf, scores)
    best = scores.max()
    return int(np.flatnonzero(scores >= best * (1.0 - TIE_RTOL))[0])


def _support_weights(V1: np.ndarray, sel: np.ndarray, mu: np.ndarray) -> np.ndarray:
    U, S, Vt = linalg.svd(V1[sel].T)
    if S[-1] <= SINGULAR_RTOL * S[0]:
        raise FeketeError(f"Restricted system is singular (sigma_min/sigma_max = {S[-1] / S[0]:.3g})")
    return Vt.T @ ((U.T @ mu) / S)


def _pivoted_rows(V1: np.ndarray, taken: np.ndarray) -> np.ndarray:
    """Extend the rows marked in ``taken`` to N rows by greedy residual-norm pivoting."""
    M, N = V1.shape
    taken = np.array(taken, dtype=bool)
    residual = np.array(V1, dtype=float)
    if taken.any():
        Q = linalg.orth(V1[taken].T)
        residual -= (residual @ Q) @ Q.T
    for _ in range(N - int(taken.sum())):
        norms = np.sqrt(np.einsum("ij,ij->i", residual, residual))
        i = _pick(norms, taken)
        if norms[i] <= 0:
            raise FeketeError("Pivoted selection ran out of independent candidates")
        taken[i] = True
        q = residual[i] / norms[i]
        residual -= np.outer(residual @ q, q)
    return np.flatnonzero(taken)


def select_support_qr(V1: np.ndarray, mu: np.ndarray) -> tuple:
    """Greedy column-pivoted Gram-Schmidt on the columns of V1^T."""
    sel = _pivoted_rows(V1, np.zeros(len(V1), dtype=bool))
    return sel, _support_weights(V1, sel, mu)


def select_support_omp(V1: np.ndarray, mu: np.ndarray) -> tuple:
    """Orthogonal matching pursuit with exactly N atoms (rows of V1)."""
    M, N = V1.shape
    atoms = np.array(V1, dtype=float)
    taken = np.zeros(M, dtype=bool)
    basis = np.zeros((N, 0))
    target = np.asarray(mu, dtype=float)
    scale = max(float(np.linalg.norm(target)), 1e-300)
    for _ in range(N):
        r = target - basis @ (basis.T @ target)
        spread = np.sqrt(np.einsum("ij,ij->i", atoms, atoms))
        eligible = spread > 1e-10 * spread[~taken].max()
        if np.linalg.norm(r) <= 1e-14 * scale:
            scores = spread
        else:
            scores = np.where(eligible, np.abs(atoms @ r), -np.inf)
        i = _pick(scores, taken)
        taken[i] = True
        q = atoms[i] / spread[i]
        q -= basis @ (basis.T @ q)
        q /= np.linalg.norm(q)
        basis = np.column_stack([basis, q])
        atoms -= np.outer(atoms @ q, q)
    sel = np.flatnonzero(taken)
    return sel, _support_weights(V1, sel, mu)


def weights_positive(weights: np.ndarray) -> bool:
    weights = np.asarray(weights, dtype=float)
    floor = WEIGHT_FLOOR * abs(float(weights.sum())) / len(weights)
    return bool(np.all(weights > floor))


def exchange_to_positive(V1: np.ndarray, mu: np.ndarray, sel) -> tuple:
    """Swap support rows for candidates while the smallest weight keeps rising.

    With C = V1[sel]^-T V1^T, trading support row j for candidate k scales the
    support volume by |C[j, k]| and gives weights w - (w_j / C[j, k]) C[:, k],
    with w_j / C[j, k] on the entering point. Each pass takes the best swap over
    the EXCHANGE_ROWS lightest rows; swaps below MIN_SWAP_VOLUME are not tried.
    """
    M, N = V1.shape
    sel = np.array(sel)
    weights = _support_weights(V1, sel, mu)
    swaps = 0
    for _ in range(EXCHANGES_PER_POINT * N):
        if M == N or weights_positive(weights):
            break
        C = linalg.solve(V1[sel].T, V1.T)
        C[:, sel] = 0.0
        best, swap = float(weights.min()), None
        margin = TIE_RTOL * float(np.abs(weights).mean())
        for j in np.argsort(weights, kind="stable")[:EXCHANGE_ROWS]:
            usable = np.abs(C[j]) >= MIN_SWAP_VOLUME
            if not usable.any():
                continue
            entering = np.where(usable, weights[j] / np.where(usable, C[j], 1.0), 0.0)
            trial = weights[:, None] - C * entering
            trial[j] = entering
            score = np.where(usable, trial.min(axis=0), -np.inf)
            k = int(np.argmax(score))
            if score[k] > best + margin:
                best, swap = float(score[k]), (int(j), k)
        if swap is None:
            break
        sel[swap[0]] = swap[1]
        weights = _support_weights(V1, sel, mu)
        swaps += 1
    order = np.argsort(sel)
    log.debug("Weight exchange made %d swaps, min weight %.3g", swaps, weights.min())
    return sel[order], weights[order]


def nonnegative_support(V1: np.ndarray, mu: np.ndarray) -> Optional[np.ndarray]:
    """N rows holding the support of a non-negative solution of V1^T w = mu, or None."""
    M, N = V1.shape
    try:
        x, residual = nnls(V1.T, mu)
    except RuntimeError as exc:
        log.debug("NNLS did not converge: %s", exc)
        return None
    if residual > NNLS_RTOL * max(float(np.linalg.norm(mu)), 1e-300):
        log.debug("No non-negative rule on these candidates (residual %.3g)", residual)
        return None
    taken = np.zeros(M, dtype=bool)
    taken[np.argsort(-x, kind="stable")[: min(N, int(np.count_nonzero(x > 0)))]] = True
    return _pivoted_rows(V1, taken)


def enforce_positive(V1: np.ndarray, mu: np.ndarray, sel) -> tuple:
    """Exchange from the greedy support, then from an NNLS support if that is not enough."""
    sel, weights = exchange_to_positive(V1, mu, sel)
    if weights_positive(weights):
        return sel, weights
    start = nonnegative_support(V1, mu)
    if start is None:
        return sel, weights
    alt_sel, alt_weights = exchange_to_positive(V1, mu, start)
    if weights_positive(alt_weights) or alt_weights.min() > weights.min():
        return alt_sel, alt_weights
    return sel, weights


def _equilibrate(vmat: np.ndarray) -> np.ndarray:
    peak = np.abs(vmat).max(axis=0)
    if np.any(peak == 0):
        raise FeketeError(f"Vandermonde is rank deficient: {int(np.count_nonzero(peak == 0))} zero columns")
    return 1.0 / peak


def _check_moments(vsel: np.ndarray, weights: np.ndarray, moments: np.ndarray) -> None:
    gap = np.abs(vsel.T @ weights - moments)
    bad = np.flatnonzero(gap > MOMENT_RTOL * np.maximum(1.0, np.abs(moments)))
    if bad.size:
        raise FeketeError(
            f"Fekete rule misses {bad.size} moments (worst index {bad[np.argmax(gap[bad])]}, "
            f"error {gap.max():.3g})"
        )


def _assemble(poly, spec, pts, sel, weights, vmat, scale, m, pre, method, preconditioner) -> FeketeSet:
    _check_moments(vmat[sel], weights, m)
    restricted = linalg.svd(vmat[sel] * scale)
    support = linalg.svd(pre.V1[sel])
    log.info(
        "Selected %d Fekete points from %d candidates (%s%d, %s/%s), sum w = %.12g",
        len(sel), len(pts), spec.space, spec.p, method, preconditioner, weights.sum(),
    )
    return FeketeSet(
        points=pts[sel],
        weights=weights,
        indices=sel,
        svd=restricted,
        support_svd=support,
        precondition=pre.P0,
        col_scale=scale,
        moments=m,
        spec=spec,
        poly=poly,
        method=method,
        preconditioner=preconditioner,
    )


def _report_weights(spec: MonomialSpec, weights: np.ndarray, preconditioner: str) -> None:
    if weights_positive(weights):
        return
    floor = WEIGHT_FLOOR * abs(float(weights.sum())) / len(weights)
    message = (
        f"{int(np.count_nonzero(weights <= floor))} of {len(weights)} Fekete weights are not positive "
        f"({spec.space}{spec.p}, {preconditioner} route, min {weights.min():.3g})"
    )
    if preconditioner == "svd" and spec.p <= POSITIVE_MAX_DEGREE:
        raise FeketeError(message)
    log.warning(message)


def approximate_fekete(
    poly: Polygon,
    spec: MonomialSpec,
    cands: PointSet,
    method: str = "qr",
    *,
    s: int = 1,
    preconditioner: str = "svd",
) -> FeketeSet:
    """Approximate Fekete points and positive-weight quadrature from a candidate set.

    The svd route repairs non-positive weights by row exchange and raises
    FeketeError when that fails at degree <= POSITIVE_MAX_DEGREE. The qr route
    keeps the greedy support as selected and only warns.
    """
    if method not in METHODS:
        raise FeketeError(f"Unknown selection method '{method}'")
    if preconditioner not in PRECONDITIONERS:
        raise FeketeError(f"Unknown preconditioner '{preconditioner}'")
    if not is_normalized(poly):
        raise FeketeError(f"Polygon must be normalized into |x_i| <= {BOX_HALF_WIDTH:.4f} before selection")
    pts = cands.points if isinstance(cands, PointSet) else np.asarray(cands, dtype=float)
    if len(pts) < spec.N:
        raise FeketeError(f"{len(pts)} candidates cannot support N = {spec.N} Fekete points")

    vmat = vandermonde(spec, pts)
    scale = _equilibrate(vmat)
    m = boundary_moments(poly, spec).values
    if preconditioner == "svd":
        pre = svd_precondition(vmat * scale, s)
    else:
        pre = qr_precondition(vmat * scale, s)
    mu = pre.P0.T @ (m * scale)
    select = select_support_qr if method == "qr" else select_support_omp
    sel, weights = select(pre.V1, mu)
    if preconditioner == "svd" and len(pts) > spec.N and not weights_positive(weights):
        sel, weights = enforce_positive(pre.V1, mu, sel)
    fek = _assemble(poly, spec, pts, sel, weights, vmat, scale, m, pre, method, preconditioner)
    _report_weights(spec, weights, preconditioner)
    return fek


def fekete_from_nodes(poly: Polygon, spec: MonomialSpec, nodes) -> FeketeSet:
    """Quadrature and factors for a fixed unisolvent node set; boundary nodes are allowed."""
    pts = np.atleast_2d(np.asarray(nodes, dtype=float))
    if len(pts) != spec.N:
        raise FeketeError(f"Expected exactly {spec.N} nodes, got {len(pts)}")
    if not np.all(points_in_polygon(poly, pts, include_boundary=True)):
        raise FeketeError("Every node must lie in the closed polygon")
    vmat = vandermonde(spec, pts)
    scale = _equilibrate(vmat)
    m = boundary_moments(poly, spec).values
    pre = svd_precondition(vmat * scale)
    sel = np.arange(spec.N)
    weights = _support_weights(pre.V1, sel, pre.P0.T @ (m * scale))
    return _assemble(poly, spec, pts, sel, weights, vmat, scale, m, pre, "fixed", "svd")


def physical_rule(fek: FeketeSet, amap) -> tuple:
    return amap.inverse(fek.points), fek.weights / amap.scale ** 2


def chebyshev_grid(n: int, box=(-1.0, -1.0, 1.0, 1.0)) -> np.ndarray:
    """Tensor grid of the n Chebyshev roots per axis (all strictly interior)."""
    t = np.cos((2 * np.arange(n) + 1) * np.pi / (2 * n))[::-1]
    x0, y0, x1, y1 = box
    xs = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * t
    ys = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * t
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def equispaced_grid(n: int, box=(-1.0, -1.0, 1.0, 1.0)) -> np.ndarray:
    x0, y0, x1, y1 = box
    gx, gy = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def triangle_lattice(tri, p: int) -> np.ndarray:
    """Equispaced barycentric lattice of degree p; the centroid when p = 0."""
    a, b, c = np.asarray(tri, dtype=float)[:3]
    if p == 0:
        return ((a + b + c) / 3.0)[None, :]
    rows = []
    for j in range(p + 1):
        for i in range(p + 1 - j):
            rows.append(a + (i / p) * (b - a) + (j / p) * (c - a))
    return np.array(rows)


@dataclass(frozen=True)
class ComparisonRow:
    p: int
    preconditioner: str
    lebesgue: float
    sum_abs_weights: float
    sum_weights: float
    interp_error: float
    negative_weights: int


def compare_svd_qr(
    poly: Polygon,
    space: str,
    degrees,
    cands: PointSet,
    *,
    samples: Optional[np.ndarray] = None,
    func=None,
    amap=None,
    method: str = "qr",
) -> list:
    """Report Lebesgue estimate, weight sums and interpolation error per degree for both preconditioners."""
    from basis import build_basis, cos3pi, interpolation_error, lebesgue_estimate

    func = cos3pi if func is None else func
    samples = cands.points if samples is None else samples
    area_scale = 1.0 if amap is None else amap.scale ** 2
    rows = []
    for p in degrees:
        spec = MonomialSpec(space, p)
        for preconditioner in PRECONDITIONERS:
            fek = approximate_fekete(poly, spec, cands, method, preconditioner=preconditioner)
            b = build_basis(fek)
            rows.append(ComparisonRow(
                p=p,
                preconditioner=preconditioner,
                lebesgue=lebesgue_estimate(b, samples),
                sum_abs_weights=float(np.abs(fek.weights).sum()) / area_scale,
                sum_weights=float(fek.weights.sum()) / area_scale,
                interp_error=interpolation_error(b, func, amap),
                negative_weights=fek.negative_weights(),
            ))
    log.info("Compared SVD and QR preconditioning on %d degrees (area %.6g)", len(rows) // 2, signed_area(poly))
    return rows
