import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from basis import ROUTES, HullBasis, build_basis
from candidates import DEFAULT_OVERSAMPLE, candidate_count_for, fill_to_count, gravitational_relax
from config_utils import atomic_write_json
from fekete import approximate_fekete
from geometry import AffineMap, GeometryError, Polygon, normalize_hull, regular_polygon
from logger_utils import get_logger
from moments import SPACES, MonomialSpec
from version import TABLE_VERSION


log = get_logger(__name__)

_MATRIX_FIELDS = ("a", "modal_factor", "ortho_factor", "U")


class TableError(ValueError):
    """Raised for malformed basis tables or lookups that miss."""


class UnsupportedTableVersionError(TableError):
    """Raised when a table was written by a newer release."""


def master_hull(sides: int) -> Polygon:
    """Regular polygon inscribed in the unit circle, first vertex at angle 0."""
    if isinstance(sides, bool) or not isinstance(sides, int) or sides < 3:
        raise TableError(f"A master hull needs at least 3 sides, got {sides!r}")
    return regular_polygon(sides, 1.0)


def _require_int(data: dict[str, Any], key: str, minimum: int) -> int:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise TableError(f"Record '{key}' must be an integer >= {minimum}, got {value!r}")
    return value


def _require_array(data: dict[str, Any], key: str, shape: tuple) -> np.ndarray:
    if key not in data:
        raise TableError(f"Record is missing '{key}'")
    try:
        value = np.asarray(data[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise TableError(f"Record '{key}' is not numeric: {exc}") from exc
    if value.shape != shape:
        raise TableError(f"Record '{key}' must have shape {shape}, got {value.shape}")
    if not np.all(np.isfinite(value)):
        raise TableError(f"Record '{key}' contains non-finite values")
    return value


@dataclass(frozen=True, eq=False)
class TableRecord:
    d: int
    sides: int
    p: int
    space: str
    route: str
    vertices: np.ndarray
    scale: float
    translate: tuple
    points: np.ndarray
    weights: np.ndarray
    a: np.ndarray
    modal_factor: np.ndarray
    ortho_factor: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    fnorm: float

    @property
    def key(self) -> tuple:
        return (self.d, self.sides, self.p, self.space, self.route)

    @property
    def amap(self) -> AffineMap:
        return AffineMap(scale=self.scale, translate=self.translate)

    def to_dict(self) -> dict[str, Any]:
        data = {
            "d": self.d,
            "sides": self.sides,
            "p": self.p,
            "space": self.space,
            "route": self.route,
            "vertices": np.asarray(self.vertices).tolist(),
            "scale": float(self.scale),
            "translate": [float(t) for t in self.translate],
            "points": np.asarray(self.points).tolist(),
            "weights": np.asarray(self.weights).tolist(),
            "sigma": np.asarray(self.sigma).tolist(),
            "fnorm": float(self.fnorm),
        }
        for name in _MATRIX_FIELDS:
            data[name] = np.asarray(getattr(self, name)).tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TableRecord":
        if not isinstance(data, dict):
            raise TableError("Each table record must be a JSON object")
        d = _require_int(data, "d", 2)
        if d != 2:
            raise TableError(f"Only d = 2 records are supported, got {d}")
        sides = _require_int(data, "sides", 3)
        p = _require_int(data, "p", 0)
        space = data.get("space")
        if space not in SPACES:
            raise TableError(f"Record 'space' must be one of {SPACES}, got {space!r}")
        route = data.get("route")
        if route not in ROUTES:
            raise TableError(f"Record 'route' must be one of {ROUTES}, got {route!r}")
        n = MonomialSpec(space, p).N

        vertices = _require_array(data, "vertices", (sides, 2))
        translate = _require_array(data, "translate", (2,))
        scale = data.get("scale")
        if isinstance(scale, bool) or not isinstance(scale, (int, float)) or not scale > 0:
            raise TableError(f"Record 'scale' must be a positive number, got {scale!r}")
        fnorm = data.get("fnorm")
        if isinstance(fnorm, bool) or not isinstance(fnorm, (int, float)) or not fnorm > 0:
            raise TableError(f"Record 'fnorm' must be a positive number, got {fnorm!r}")
        matrices = {name: _require_array(data, name, (n, n)) for name in _MATRIX_FIELDS}
        return cls(
            d=d,
            sides=sides,
            p=p,
            space=space,
            route=route,
            vertices=vertices,
            scale=float(scale),
            translate=(float(translate[0]), float(translate[1])),
            points=_require_array(data, "points", (n, 2)),
            weights=_require_array(data, "weights", (n,)),
            sigma=_require_array(data, "sigma", (n,)),
            fnorm=float(fnorm),
            **matrices,
        )


def record_from_basis(b: HullBasis, amap: AffineMap) -> TableRecord:
    if b.poly.holes:
        raise TableError("Hulls with holes cannot be tabulated")
    return TableRecord(
        d=b.spec.d,
        sides=len(b.poly),
        p=b.spec.p,
        space=b.spec.space,
        route=b.route,
        vertices=np.array(b.poly.vertices),
        scale=float(amap.scale),
        translate=tuple(float(t) for t in amap.translate),
        points=np.array(b.nodes),
        weights=np.array(b.weights),
        a=b.a,
        modal_factor=b.modal_factor,
        ortho_factor=b.ortho_factor,
        U=b.U,
        sigma=b.sigma,
        fnorm=b.fnorm,
    )


def basis_from_record(record: TableRecord) -> HullBasis:
    try:
        poly = Polygon(record.vertices)
    except GeometryError as exc:
        raise TableError(f"Record {record.key} has an invalid hull: {exc}") from exc
    return HullBasis(
        poly=poly,
        spec=MonomialSpec(record.space, record.p),
        nodes=record.points,
        weights=record.weights,
        a=record.a,
        modal_factor=record.modal_factor,
        ortho_factor=record.ortho_factor,
        U=record.U,
        sigma=record.sigma,
        fnorm=record.fnorm,
        route=record.route,
    )


def build_master_record(
    sides: int,
    space: str,
    p: int,
    route: str = "direct",
    *,
    oversample: float = DEFAULT_OVERSAMPLE,
    relax_iters: int = 0,
    method: str = "qr",
) -> TableRecord:
    normalized, amap = normalize_hull(master_hull(sides))
    spec = MonomialSpec(space, p)
    cands = fill_to_count(normalized, candidate_count_for(spec, oversample))
    if relax_iters:
        cands = gravitational_relax(normalized, cands, relax_iters)
    fek = approximate_fekete(normalized, spec, cands, method)
    record = record_from_basis(build_basis(fek, route), amap)
    log.info("Tabulated master hull: sides=%d %s%d route=%s N=%d", sides, space, p, route, spec.N)
    return record


def write_table(path: str | os.PathLike[str], records: list) -> None:
    keys = [r.key for r in records]
    if len(set(keys)) != len(keys):
        raise TableError("Table records must have unique keys")
    atomic_write_json(path, {"version": TABLE_VERSION, "records": [r.to_dict() for r in records]})
    log.info("Wrote %d table records to %s", len(records), path)


def load_table(path: str | os.PathLike[str]) -> list:
    target = Path(path)
    try:
        with target.open("r", encoding="utf-8") as handle:
            data = json.load(handle)
    except (OSError, UnicodeError, json.JSONDecodeError) as exc:
        raise TableError(f"Could not read table '{target}': {exc}") from exc
    if not isinstance(data, dict):
        raise TableError(f"Table '{target}' must contain a JSON object")
    version = data.get("version")
    if isinstance(version, bool) or not isinstance(version, int) or version < 1:
        raise TableError(f"Table '{target}' has an invalid version: {version!r}")
    if version > TABLE_VERSION:
        raise UnsupportedTableVersionError(
            f"Table '{target}' is v{version}; this build supports v{TABLE_VERSION}"
        )
    records = data.get("records")
    if not isinstance(records, list):
        raise TableError(f"Table '{target}' must hold a 'records' list")
    loaded = [TableRecord.from_dict(item) for item in records]
    log.debug("Loaded %d table records from %s", len(loaded), target)
    return loaded


def lookup(records: list, d: int, sides: int, p: int, space: str, route: str) -> TableRecord:
    key = (d, sides, p, space, route)
    for record in records:
        if record.key == key:
            return record
    raise TableError(f"No table record for key (d={d}, sides={sides}, p={p}, space={space}, route={route})")


def load_basis(
    path: str | os.PathLike[str], *, sides: Optional[int] = None, p: Optional[int] = None,
    space: Optional[str] = None, route: Optional[str] = None,
) -> tuple:
    """Basis and map from a table; the key filters may be omitted for single-record tables."""
    records = load_table(path)
    wanted = {"sides": sides, "p": p, "space": space, "route": route}
    matches = [r for r in records if all(v is None or getattr(r, k) == v for k, v in wanted.items())]
    if len(matches) != 1:
        raise TableError(f"Table '{path}' has {len(matches)} records matching {wanted}; expected exactly one")
    record = matches[0]
    return basis_from_record(record), record.amap
