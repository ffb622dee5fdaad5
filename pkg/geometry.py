import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from logger_utils import get_logger


log = get_logger(__name__)

BOX_HALF_WIDTH = math.tanh(0.5)
AREA_EPS = 1e-12
BOX_TOLERANCE = 1e-9


class GeometryError(ValueError):
    """Raised for invalid polygons or failed geometric constructions."""


def _as_loop(points: Iterable[Sequence[float]]) -> np.ndarray:
    loop = np.array(points, dtype=float)
    if loop.ndim != 2 or loop.shape[1] != 2:
        raise GeometryError(f"A loop must be a list of (x, y) pairs, got shape {loop.shape}")
    if not np.all(np.isfinite(loop)):
        raise GeometryError("Loop coordinates must be finite")
    loop.setflags(write=False)
    return loop


def loop_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, q, r, eps: float) -> bool:
    """r is collinear with pq; test whether it lies within the segment box."""
    return (
        min(p[0], q[0]) - eps <= r[0] <= max(p[0], q[0]) + eps
        and min(p[1], q[1]) - eps <= r[1] <= max(p[1], q[1]) + eps
    )


def segments_intersect(p1, p2, q1, q2, eps: float) -> bool:
    """True when the closed segments p1p2 and q1q2 cross or touch."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    lin = math.sqrt(eps)
    if abs(d1) <= eps and _on_segment(q1, q2, p1, lin):
        return True
    if abs(d2) <= eps and _on_segment(q1, q2, p2, lin):
        return True
    if abs(d3) <= eps and _on_segment(p1, p2, q1, lin):
        return True
    if abs(d4) <= eps and _on_segment(p1, p2, q2, lin):
        return True
    return False


def _loop_edges(loop: np.ndarray):
    n = len(loop)
    for i in range(n):
        yield loop[i], loop[(i + 1) % n]


@dataclass(frozen=True, eq=False)
class Polygon:
    vertices: np.ndarray
    holes: tuple = ()
    diameter: float = field(init=False)

    def __post_init__(self):
        outer = _as_loop(self.vertices)
        holes = tuple(_as_loop(h) for h in self.holes)
        object.__setattr__(self, "vertices", outer)
        object.__setattr__(self, "holes", holes)
        loops = (outer,) + holes
        for index, loop in enumerate(loops):
            if len(loop) < 3:
                raise GeometryError(f"Loop {index} has {len(loop)} vertices; at least 3 are required")
        every = np.vstack(loops)
        diameter = float(pdist(every).max())
        if diameter <= 0.0:
            raise GeometryError("Polygon has zero extent")
        object.__setattr__(self, "diameter", diameter)

        eps = self.area_eps
        for index, loop in enumerate(loops):
            gaps = np.linalg.norm(loop - np.roll(loop, -1, axis=0), axis=1)
            if np.any(gaps <= AREA_EPS * diameter):
                raise GeometryError(f"Loop {index} repeats a vertex")
            area = loop_area(loop)
            if index == 0 and not area > eps:
                raise GeometryError(f"Outer loop must be counter-clockwise with positive area, got {area:g}")
            if index > 0 and not area < -eps:
                raise GeometryError(f"Hole {index - 1} must be clockwise with negative area, got {area:g}")
        self._check_simple(loops, eps)
        for index, hole in enumerate(holes):
            if not np.all(_crossing_parity(outer, hole)):
                raise GeometryError(f"Hole {index} is not inside the outer loop")

    @staticmethod
    def _check_simple(loops, eps: float) -> None:
        edges = []
        for li, loop in enumerate(loops):
            n = len(loop)
            for i in range(n):
                edges.append((li, i, n, loop[i], loop[(i + 1) % n]))
        for k, (la, ia, na, a0, a1) in enumerate(edges):
            for lb, ib, nb, b0, b1 in edges[k + 1:]:
                if la == lb and (ib == (ia + 1) % na or ia == (ib + 1) % na):
                    # adjacent edges only meet at the shared vertex unless they fold back
                    shared = a1 if ib == (ia + 1) % na else a0
                    far_a = a0 if shared is a1 else a1
                    far_b = b1 if ib == (ia + 1) % na else b0
                    if abs(_cross(shared, far_a, far_b)) <= eps and np.dot(far_a - shared, far_b - shared) > 0:
                        raise GeometryError(f"Loop {la} folds back on itself at vertex {ia}")
                    continue
                if segments_intersect(a0, a1, b0, b1, eps):
                    raise GeometryError(
                        f"Polygon is self-intersecting (loop {la} edge {ia}, loop {lb} edge {ib})"
                    )

    @property
    def area_eps(self) -> float:
        return AREA_EPS * self.diameter ** 2

    @property
    def loops(self) -> tuple:
        return (self.vertices,) + self.holes

    def edges(self):
        for loop in self.loops:
            yield from _loop_edges(loop)

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class AffineMap:
    scale: float
    translate: tuple

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError(f"Map scale must be positive, got {self.scale}")

    def forward(self, pts) -> np.ndarray:
        return self.scale * (np.asarray(pts, dtype=float) + np.asarray(self.translate))

    def inverse(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) / self.scale - np.asarray(self.translate)

    def apply(self, poly: Polygon) -> Polygon:
        return Polygon(self.forward(poly.vertices), tuple(self.forward(h) for h in poly.holes))


@dataclass(frozen=True, eq=False)
class ConvexPartition:
    pieces: list
    parent: Polygon
    start: int = 0
    diagonals: list = field(default_factory=list)

    def check(self) -> None:
        eps = self.parent.area_eps
        for index, piece in enumerate(self.pieces):
            if not is_convex(piece, eps):
                raise GeometryError(f"Partition piece {index} is not convex")
        total = sum(signed_area(p) for p in self.pieces)
        parent = signed_area(self.parent)
        if abs(total - parent) > 1e-9 * abs(parent):
            raise GeometryError(f"Partition area {total!r} differs from polygon area {parent!r}")


def signed_area(poly: Polygon) -> float:
    return sum(loop_area(loop) for loop in poly.loops)


def centroid(poly: Polygon) -> np.ndarray:
    cx = cy = 0.0
    for loop in poly.loops:
        nxt = np.roll(loop, -1, axis=0)
        cross = loop[:, 0] * nxt[:, 1] - nxt[:, 0] * loop[:, 1]
        cx += float(np.dot(loop[:, 0] + nxt[:, 0], cross))
        cy += float(np.dot(loop[:, 1] + nxt[:, 1], cross))
    area = signed_area(poly)
    return np.array([cx, cy]) / (6.0 * area)


def bounding_box(poly: Polygon) -> tuple:
    lo = poly.vertices.min(axis=0)
    hi = poly.vertices.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def diameter(poly: Polygon) -> float:
    return poly.diameter


def _crossing_parity(loop: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for a, b in _loop_edges(loop):
        straddle = (a[1] > y) != (b[1] > y)
        if not np.any(straddle):
            continue
        dy = b[1] - a[1]
        safe = dy if dy != 0 else 1.0
        xint = a[0] + (y - a[1]) * (b[0] - a[0]) / safe
        inside ^= straddle & (x < xint)
    return inside


def _segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((pts - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(pts - closest, axis=1)


def boundary_distance(poly: Polygon, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = np.full(len(pts), np.inf)
    for a, b in poly.edges():
        dist = np.minimum(dist, _segment_distance(pts, a, b))
    return dist


def points_in_polygon(poly: Polygon, pts, *, include_boundary: bool = False) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    inside = np.zeros(len(pts), dtype=bool)
    for loop in poly.loops:
        inside ^= _crossing_parity(loop, pts)
    near = boundary_distance(poly, pts) <= AREA_EPS * poly.diameter
    if include_boundary:
        return inside | near
    return inside & ~near


def point_in_polygon(poly: Polygon, pt) -> bool:
    return bool(points_in_polygon(poly, [pt])[0])


def _turns(loop: np.ndarray) -> np.ndarray:
    prev = np.roll(loop, 1, axis=0)
    nxt = np.roll(loop, -1, axis=0)
    e1 = loop - prev
    e2 = nxt - loop
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


def reflex_vertices(poly: Polygon) -> list:
    turns = _turns(poly.vertices)
    return [int(i) for i in np.flatnonzero(turns < -poly.area_eps)]


def is_convex(poly: Polygon, eps: Optional[float] = None) -> bool:
    if poly.holes:
        return False
    eps = poly.area_eps if eps is None else eps
    return bool(np.all(_turns(poly.vertices) >= -eps))


def is_normalized(poly: Polygon, tolerance: float = BOX_TOLERANCE) -> bool:
    return bool(np.all(np.abs(np.vstack(poly.loops)) <= BOX_HALF_WIDTH + tolerance))


def normalize_hull(poly: Polygon) -> tuple:
    area = signed_area(poly)
    if not area > poly.area_eps:
        raise GeometryError(f"Cannot normalize a polygon with area {area:g}")
    center = centroid(poly)
    extent = float(np.abs(np.vstack(poly.loops) - center).max())
    amap = AffineMap(scale=BOX_HALF_WIDTH / extent, translate=(float(-center[0]), float(-center[1])))
    return amap.apply(poly), amap


def _in_cone(loop: np.ndarray, i: int, j: int, eps: float) -> bool:
    n = len(loop)
    a = loop[i]
    a0 = loop[(i - 1) % n]
    a1 = loop[(i + 1) % n]
    b = loop[j]
    if _cross(a, a1, a0) >= -eps:
        return _cross(a, b, a0) > eps and _cross(b, a, a1) > eps
    return not (_cross(a, b, a1) >= -eps and _cross(b, a, a0) >= -eps)


def _is_diagonal(loop, i, j, diagonals, eps) -> bool:
    n = len(loop)
    if not (_in_cone(loop, i, j, eps) and _in_cone(loop, j, i, eps)):
        return False
    a, b = loop[i], loop[j]
    for k in range(n):
        k1 = (k + 1) % n
        if k in (i, j) or k1 in (i, j):
            continue
        if segments_intersect(a, b, loop[k], loop[k1], eps):
            return False
    for v, u in diagonals:
        if v in (i, j) or u in (i, j):
            continue
        if segments_intersect(a, b, loop[v], loop[u], eps):
            return False
    return True


def _split_face(faces: list, loop: np.ndarray, v: int, u: int) -> None:
    midpoint = 0.5 * (loop[v] + loop[u])
    for index, face in enumerate(faces):
        if v not in face or u not in face:
            continue
        if not _crossing_parity(loop[face], midpoint[None, :])[0]:
            continue
        i, j = sorted((face.index(v), face.index(u)))
        faces[index:index + 1] = [face[i:j + 1], face[j:] + face[:i + 1]]
        return
    raise GeometryError(f"Diagonal ({v}, {u}) does not split any face")


def _face_with_edge(faces: list, v: int, u: int) -> int:
    for index, face in enumerate(faces):
        n = len(face)
        for k in range(n):
            if face[k] == v and face[(k + 1) % n] == u:
                return index
    raise GeometryError(f"No face has the directed edge ({v}, {u})")


def _rotate_to(face: list, first: int) -> list:
    k = face.index(first)
    return face[k:] + face[:k]


def _convex_at(face: list, loop: np.ndarray, vertex: int, eps: float) -> bool:
    n = len(face)
    k = face.index(vertex)
    return _cross(loop[face[k - 1]], loop[face[k]], loop[face[(k + 1) % n]]) >= -eps


def hertel_mehlhorn(poly: Polygon, start: int = 0) -> ConvexPartition:
    if poly.holes:
        raise GeometryError("Convex partitioning needs a polygon without holes")
    loop = poly.vertices
    n = len(loop)
    if not 0 <= start < n:
        raise GeometryError(f"Start vertex {start} is outside 0..{n - 1}")
    eps = poly.area_eps

    diagonals = []
    faces = [list(range(n))]
    for step in range(n):
        v = (start + step) % n
        for offset in range(2, n - 1):
            u = (v + offset) % n
            if (v, u) in diagonals or (u, v) in diagonals:
                continue
            if _is_diagonal(loop, v, u, diagonals, eps):
                diagonals.append((v, u))
                _split_face(faces, loop, v, u)
    log.debug("Triangulated %d-gon from vertex %d with %d diagonals", n, start, len(diagonals))

    kept = []
    for v, u in diagonals:
        fa = _face_with_edge(faces, v, u)
        fb = _face_with_edge(faces, u, v)
        merged = _rotate_to(faces[fa], u) + _rotate_to(faces[fb], v)[1:-1]
        if _convex_at(merged, loop, v, eps) and _convex_at(merged, loop, u, eps):
            faces = [f for k, f in enumerate(faces) if k not in (fa, fb)] + [merged]
        else:
            kept.append((v, u))

    pieces = [Polygon(loop[face]) for face in faces]
    partition = ConvexPartition(pieces=pieces, parent=poly, start=start, diagonals=kept)
    partition.check()
    log.info(
        "Partitioned %d-gon (%d reflex) from vertex %d into %d convex pieces",
        n, len(reflex_vertices(poly)), start, len(pieces),
    )
    return partition


def _bridge_holes(poly: Polygon) -> list:
    loop = [tuple(p) for p in poly.vertices]
    eps = poly.area_eps
    pending = sorted(poly.holes, key=lambda h: -float(h[:, 0].max()))
    for index, hole in enumerate(pending):
        hole_pts = [tuple(p) for p in hole]
        m = int(np.argmax(hole[:, 0]))
        h = np.array(hole_pts[m])
        blockers = [(np.array(loop[k]), np.array(loop[(k + 1) % len(loop)])) for k in range(len(loop))]
        for other in pending[index:]:
            blockers.extend(_loop_edges(other))
        best = None
        for k, cand in enumerate(loop):
            c = np.array(cand)
            dist = float(np.linalg.norm(c - h))
            if best is not None and dist >= best[0]:
                continue
            if not point_in_polygon(poly, 0.5 * (c + h)):
                continue
            clear = True
            for e0, e1 in blockers:
                if np.allclose(e0, c) or np.allclose(e1, c) or np.allclose(e0, h) or np.allclose(e1, h):
                    continue
                if segments_intersect(c, h, e0, e1, eps):
                    clear = False
                    break
            if clear:
                best = (dist, k)
        if best is None:
            raise GeometryError(f"No bridge found for hole {index}")
        idx = best[1]
        loop = loop[:idx + 1] + hole_pts[m:] + hole_pts[:m + 1] + loop[idx:]
    return loop


def _ear_clip(points: list, eps: float) -> list:
    pts = [np.array(p) for p in points]
    triangles = []
    while len(pts) > 3:
        n = len(pts)
        for k in range(n):
            a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
            if _cross(a, b, c) <= eps:
                continue
            blocked = False
            for q in pts:
                if np.array_equal(q, a) or np.array_equal(q, b) or np.array_equal(q, c):
                    continue
                if _cross(a, b, q) >= -eps and _cross(b, c, q) >= -eps and _cross(c, a, q) >= -eps:
                    blocked = True
                    break
            if blocked:
                continue
            triangles.append(np.array([a, b, c]))
            del pts[k]
            break
        else:
            raise GeometryError("Ear clipping found no ear; polygon is degenerate")
    if abs(_cross(*pts)) > eps:
        triangles.append(np.array(pts))
    return triangles


def triangulate(poly: Polygon) -> list:
    eps = poly.area_eps
    if not poly.holes and is_convex(poly):
        v = poly.vertices
        triangles = [
            np.array([v[0], v[k], v[k + 1]])
            for k in range(1, len(v) - 1)
            if _cross(v[0], v[k], v[k + 1]) > eps
        ]
    else:
        loop = _bridge_holes(poly) if poly.holes else [tuple(p) for p in poly.vertices]
        triangles = _ear_clip(loop, eps)
    if not triangles:
        raise GeometryError("Polygon is degenerate (collinear vertices)")
    total = sum(0.5 * _cross(*t) for t in triangles)
    area = signed_area(poly)
    if abs(total - area) > 1e-9 * abs(area):
        raise GeometryError(f"Triangulation area {total!r} does not match polygon area {area!r}")
    return triangles


def rectangle(x0: float, y0: float, x1: float, y1: float) -> Polygon:
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def square(half_width: float = 1.0) -> Polygon:
    return rectangle(-half_width, -half_width, half_width, half_width)


def regular_polygon(sides: int, radius: float = 1.0, center=(0.0, 0.0), phase: float = 0.0) -> Polygon:
    if sides < 3:
        raise GeometryError(f"A regular polygon needs at least 3 sides, got {sides}")
    angles = phase + 2.0 * np.pi * np.arange(sides) / sides
    return Polygon(np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)]))


def hexagon(radius: float = 1.0) -> Polygon:
    return regular_polygon(6, radius)


def t_hull() -> Polygon:
    s = 1.0 / 6.0
    return Polygon([(-s, -0.5), (s, -0.5), (s, s), (0.5, s), (0.5, 0.5), (-0.5, 0.5), (-0.5, s), (-s, s)])


def l_shape() -> Polygon:
    return Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])


def holed_square() -> Polygon:
    return Polygon(
        [(-1, -1), (1, -1), (1, 1), (-1, 1)],
        holes=([(-0.5, -0.5), (-0.5, 0.5), (0.5, 0.5), (0.5, -0.5)],),
    )


def two_notch_domain() -> Polygon:
    return Polygon([
        (-2.0, -2.0), (2.0, -2.0), (3.0, -1.0), (3.0, 0.5), (2.0, 0.9),
        (1.0, 1.0), (0.8, 3.0), (-0.8, 3.0), (-1.0, 1.0), (-2.5, 0.5),
    ])


REFERENCE_SHAPES = {
    "square": square,
    "hexagon": hexagon,
    "t_hull": t_hull,
    "l_shape": l_shape,
    "holed_square": holed_square,
    "two_notch": two_notch_domain,
}


def reference_shape(name: str) -> Polygon:
    try:
        return REFERENCE_SHAPES[name]()
    except KeyError:
        raise GeometryError(
            f"Unknown shape '{name}'; choose one of {', '.join(sorted(REFERENCE_SHAPES))}"
        ) from None
