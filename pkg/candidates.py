import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from geometry import Polygon, bounding_box, points_in_polygon, signed_area
from logger_utils import get_logger
from moments import MonomialSpec


log = get_logger(__name__)

DEFAULT_OVERSAMPLE = 10.0
DEFAULT_SEED = 42
RELAX_STEP = 0.2
RANGE_FACTOR = 1.2
MAX_BACKTRACKS = 8
BISECTIONS = 30


class CandidateError(ValueError):
    """Raised when a candidate point set cannot be generated or is invalid."""


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    owner: Polygon

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise CandidateError(f"Point set must be a non-empty (M, 2) array, got shape {pts.shape}")
        outside = np.flatnonzero(~points_in_polygon(self.owner, pts))
        if outside.size:
            raise CandidateError(f"{outside.size} points are not strictly inside the polygon (first: {outside[0]})")
        if len(pts) > 1:
            gap = min_pairwise_distance(pts)
            if gap <= 1e-10 * self.owner.diameter:
                raise CandidateError(f"Points are not pairwise distinct (min distance {gap:g})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def min_pairwise_distance(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return math.inf
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].min())


def candidate_count_for(spec: MonomialSpec, oversample: float = DEFAULT_OVERSAMPLE) -> int:
    if not oversample >= 2:
        raise CandidateError(f"Oversampling factor must be at least 2, got {oversample}")
    return math.ceil(oversample * spec.N)


def _lattice(poly: Polygon, spacing: float) -> np.ndarray:
    x0, y0, x1, y1 = bounding_box(poly)
    xs = np.arange(x0 + 0.5 * spacing, x1, spacing)
    ys = np.arange(y0 + 0.5 * spacing, y1, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[points_in_polygon(poly, pts)]


def fill_pattern(poly: Polygon, spacing: float) -> PointSet:
    if not 0 < spacing < poly.diameter:
        raise CandidateError(f"Spacing must lie in (0, {poly.diameter:g}), got {spacing}")
    pts = _lattice(poly, spacing)
    if len(pts) == 0:
        raise CandidateError(f"Spacing {spacing:g} leaves no interior points; use a smaller spacing")
    return PointSet(pts, poly)


def fill_to_count(poly: Polygon, count: int, shrink: float = 0.9) -> PointSet:
    spacing = min(math.sqrt(signed_area(poly) / max(count, 1)), 0.5 * poly.diameter)
    for _ in range(200):
        pts = _lattice(poly, spacing)
        if len(pts) >= count:
            log.debug("Lattice spacing %.4g gives %d >= %d candidates", spacing, len(pts), count)
            return PointSet(pts, poly)
        spacing *= shrink
    raise CandidateError(f"Could not place {count} lattice points in the polygon")


def random_points(poly: Polygon, count: int, seed: int = DEFAULT_SEED) -> PointSet:
    if count < 1:
        raise CandidateError(f"Point count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = bounding_box(poly)
    kept = []
    total = 0
    while total < count:
        batch = rng.uniform((x0, y0), (x1, y1), size=(2 * count, 2))
        batch = batch[points_in_polygon(poly, batch)]
        kept.append(batch)
        total += len(batch)
    return PointSet(np.vstack(kept)[:count], poly)


def _repulsion(pts: np.ndarray, reach: float) -> np.ndarray:
    move = np.zeros_like(pts)
    pairs = cKDTree(pts).query_pairs(reach, output_type="ndarray")
    if len(pairs) == 0:
        return move
    i, j = pairs[:, 0], pairs[:, 1]
    sep = pts[i] - pts[j]
    r = np.linalg.norm(sep, axis=1)
    push = (np.maximum(0.0, reach - r) / r)[:, None] * sep
    np.add.at(move, i, push)
    np.add.at(move, j, -push)
    return move


def _pull_inside(poly: Polygon, old: np.ndarray, step: np.ndarray) -> np.ndarray:
    new = old + step
    out = np.flatnonzero(~points_in_polygon(poly, new))
    if out.size:
        lo = np.zeros(out.size)
        hi = np.ones(out.size)
        for _ in range(BISECTIONS):
            mid = 0.5 * (lo + hi)
            ok = points_in_polygon(poly, old[out] + mid[:, None] * step[out])
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        new[out] = old[out] + lo[:, None] * step[out]
    return new


def gravitational_relax(
    poly: Polygon,
    seed: PointSet,
    iters: int,
    step: float = RELAX_STEP,
    history: Optional[list] = None,
) -> PointSet:
    """Spread points apart by pairwise short-range repulsion in pseudo-time.

    The minimum pairwise distance never decreases: a step that would shrink it
    is halved, and dropped after MAX_BACKTRACKS halvings.
    """
    if len(seed) < 2:
        raise CandidateError("Relaxation needs at least two points")
    if iters < 0:
        raise CandidateError(f"Iteration count must be non-negative, got {iters}")
    if iters == 0:
        return seed

    pts = np.array(seed.points)
    reach = RANGE_FACTOR * math.sqrt(signed_area(poly) / len(pts))
    cap = step * reach
    gap = min_pairwise_distance(pts)
    for it in range(iters):
        disp = step * _repulsion(pts, reach)
        norms = np.linalg.norm(disp, axis=1)
        too_far = norms > cap
        disp[too_far] *= (cap / norms[too_far])[:, None]
        for _ in range(MAX_BACKTRACKS + 1):
            trial = _pull_inside(poly, pts, disp)
            trial_gap = min_pairwise_distance(trial)
            if trial_gap >= gap:
                pts, gap = trial, trial_gap
                break
            disp *= 0.5
        if history is not None:
            history.append(gap)
        log.debug("Relaxation iteration %d: min distance %.6g", it + 1, gap)
    return PointSet(pts, poly)
