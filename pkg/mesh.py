from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from basis import HullBasis, build_basis
from candidates import DEFAULT_OVERSAMPLE, candidate_count_for, fill_to_count
from config_utils import thread_count
from fekete import approximate_fekete, fekete_from_nodes, triangle_lattice
from geometry import Polygon, normalize_hull, rectangle
from logger_utils import get_logger
from moments import MonomialSpec


log = get_logger(__name__)

FAMILIES = ("hull-P", "hull-Q", "tri-lagrange")
KEY_DIGITS = 10


class MeshError(ValueError):
    """Raised when a hull mesh is inconsistent or a family cannot be built on it."""


@dataclass(frozen=True)
class MeshEdge:
    left: int
    left_edge: int
    right: Optional[int]
    right_edge: Optional[int]
    a: tuple
    b: tuple

    @property
    def is_boundary(self) -> bool:
        return self.right is None

    def normal(self) -> np.ndarray:
        """Outward unit normal of the left hull."""
        t = np.subtract(self.b, self.a)
        return np.array([t[1], -t[0]]) / np.linalg.norm(t)


@dataclass(frozen=True, eq=False)
class HullMesh:
    hulls: tuple
    maps: tuple
    normalized: tuple
    bases: tuple
    edges: tuple
    family: str
    degrees: tuple

    def __len__(self) -> int:
        return len(self.hulls)

    @property
    def dof(self) -> int:
        return sum(b.N for b in self.bases)

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([b.N for b in self.bases])])

    def boundary_edges(self) -> list:
        return [e for e in self.edges if e.is_boundary]

    def interior_edges(self) -> list:
        return [e for e in self.edges if not e.is_boundary]

    def h_min(self) -> float:
        return min(h.diameter for h in self.hulls)


def _grid(nx: int, ny: int, box) -> tuple:
    if nx < 1 or ny < 1:
        raise MeshError(f"Mesh size must be at least 1x1, got {nx}x{ny}")
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"Mesh box must have positive extent, got {box}")
    return np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)


def quad_mesh_polygons(nx: int, ny: int, box=(-1.0, -1.0, 1.0, 1.0)) -> list:
    xs, ys = _grid(nx, ny, box)
    return [rectangle(xs[i], ys[j], xs[i + 1], ys[j + 1]) for j in range(ny) for i in range(nx)]


def triangle_mesh_polygons(nx: int, ny: int, box=(-1.0, -1.0, 1.0, 1.0)) -> list:
    """Each quad of the nx-by-ny grid split along its rising diagonal."""
    xs, ys = _grid(nx, ny, box)
    polys = []
    for j in range(ny):
        for i in range(nx):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            polys.append(Polygon([(x0, y0), (x1, y0), (x1, y1)]))
            polys.append(Polygon([(x0, y0), (x1, y1), (x0, y1)]))
    return polys


def _point_key(pt) -> tuple:
    return tuple(round(float(c), KEY_DIGITS) + 0.0 for c in pt)


def connect_edges(hulls: Sequence[Polygon]) -> tuple:
    found = {}
    order = []
    for h, poly in enumerate(hulls):
        for k, (a, b) in enumerate(poly.edges()):
            key = frozenset((_point_key(a), _point_key(b)))
            if len(key) != 2:
                raise MeshError(f"Hull {h} edge {k} is degenerate after rounding")
            if key not in found:
                found[key] = []
                order.append(key)
            found[key].append((h, k, a, b))
    edges = []
    for key in order:
        owners = found[key]
        if len(owners) > 2:
            raise MeshError(f"Edge {sorted(key)} is shared by {len(owners)} hulls")
        h, k, a, b = owners[0]
        if len(owners) == 1:
            edges.append(MeshEdge(h, k, None, None, tuple(map(float, a)), tuple(map(float, b))))
            continue
        h2, k2, a2, b2 = owners[1]
        if not (np.allclose(a, b2, atol=1e-10) and np.allclose(b, a2, atol=1e-10)):
            raise MeshError(f"Hulls {h} and {h2} share an edge with matching orientation; check loop order")
        edges.append(MeshEdge(h, k, h2, k2, tuple(map(float, a)), tuple(map(float, b))))
    return tuple(edges)


def _shape_key(family: str, p: int, normalized: Polygon) -> tuple:
    loops = tuple(tuple(_point_key(v) for v in loop) for loop in normalized.loops)
    return family, p, loops


def build_hull_basis(
    normalized: Polygon,
    family: str,
    p: int,
    *,
    oversample: float = DEFAULT_OVERSAMPLE,
    method: str = "qr",
) -> HullBasis:
    if family == "tri-lagrange":
        if len(normalized) != 3 or normalized.holes:
            raise MeshError(f"Family 'tri-lagrange' needs triangles, got a {len(normalized)}-gon")
        spec = MonomialSpec("P", p)
        fek = fekete_from_nodes(normalized, spec, triangle_lattice(normalized.vertices, p))
    else:
        spec = MonomialSpec(family[-1], p)
        cands = fill_to_count(normalized, candidate_count_for(spec, oversample))
        fek = approximate_fekete(normalized, spec, cands, method)
    return build_basis(fek)


def build_mesh(
    polygons: Sequence[Polygon],
    family: str,
    degree: Union[int, Sequence[int]],
    *,
    oversample: float = DEFAULT_OVERSAMPLE,
    method: str = "qr",
    threads: Optional[int] = None,
) -> HullMesh:
    if family not in FAMILIES:
        raise MeshError(f"Unknown basis family '{family}'; choose one of {', '.join(FAMILIES)}")
    if not polygons:
        raise MeshError("A mesh needs at least one hull")
    degrees = [degree] * len(polygons) if isinstance(degree, int) else list(degree)
    if len(degrees) != len(polygons):
        raise MeshError(f"Got {len(degrees)} degrees for {len(polygons)} hulls")

    pairs = [normalize_hull(poly) for poly in polygons]
    normalized = tuple(pair[0] for pair in pairs)
    maps: tuple = tuple(pair[1] for pair in pairs)
    keys = [_shape_key(family, p, n) for p, n in zip(degrees, normalized)]
    unique = {}
    for key, shape, p in zip(keys, normalized, degrees):
        unique.setdefault(key, (shape, p))

    def work(item):
        shape, p = item
        return build_hull_basis(shape, family, p, oversample=oversample, method=method)

    workers = min(thread_count(threads), len(unique))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        built = dict(zip(unique, pool.map(work, unique.values())))
    bases = tuple(built[key] for key in keys)

    mesh = HullMesh(
        hulls=tuple(polygons),
        maps=maps,
        normalized=normalized,
        bases=bases,
        edges=connect_edges(polygons),
        family=family,
        degrees=tuple(degrees),
    )
    log.info(
        "Built %s mesh: %d hulls, %d distinct shapes, %d edges, %d DOF per field",
        family, len(mesh), len(unique), len(mesh.edges), mesh.dof,
    )
    return mesh


def benchmark_polygons(family: str, nx: int, ny: int, box=(-1.0, -1.0, 1.0, 1.0)) -> list:
    if family == "tri-lagrange":
        return triangle_mesh_polygons(nx, ny, box)
    return quad_mesh_polygons(nx, ny, box)
