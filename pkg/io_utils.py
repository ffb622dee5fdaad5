import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from geometry import GeometryError, Polygon
from logger_utils import get_logger


log = get_logger(__name__)


class PolygonFormatError(ValueError):
    """Raised when a polygon or CSV file does not follow the expected layout."""


def _tokens(text: str) -> list:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((number, line.split()))
    return lines


def _int_field(entry: tuple, what: str) -> int:
    number, fields = entry
    if len(fields) != 1:
        raise PolygonFormatError(f"Line {number}: expected {what}, got {' '.join(fields)!r}")
    try:
        return int(fields[0])
    except ValueError as exc:
        raise PolygonFormatError(f"Line {number}: {what} must be an integer, got {fields[0]!r}") from exc


def _read_polygon_block(lines: list, pos: int) -> tuple:
    if pos >= len(lines):
        raise PolygonFormatError("Unexpected end of file; expected 'd nloops'")
    number, header = lines[pos]
    if len(header) != 2:
        raise PolygonFormatError(f"Line {number}: expected 'd nloops', got {' '.join(header)!r}")
    try:
        d, nloops = int(header[0]), int(header[1])
    except ValueError as exc:
        raise PolygonFormatError(f"Line {number}: 'd nloops' must be integers") from exc
    if d != 2:
        raise PolygonFormatError(f"Line {number}: only d = 2 is supported, got {d}")
    if nloops < 1:
        raise PolygonFormatError(f"Line {number}: a polygon needs at least one loop, got {nloops}")
    pos += 1
    loops = []
    for _ in range(nloops):
        if pos >= len(lines):
            raise PolygonFormatError("Unexpected end of file; expected a vertex count")
        count = _int_field(lines[pos], "a vertex count")
        pos += 1
        if pos + count > len(lines):
            raise PolygonFormatError(f"Unexpected end of file; loop declares {count} vertices")
        loop = []
        for number, fields in lines[pos:pos + count]:
            if len(fields) != 2:
                raise PolygonFormatError(f"Line {number}: expected 'x y', got {' '.join(fields)!r}")
            try:
                loop.append((float(fields[0]), float(fields[1])))
            except ValueError as exc:
                raise PolygonFormatError(f"Line {number}: coordinates must be numbers") from exc
        loops.append(loop)
        pos += count
    try:
        poly = Polygon(loops[0], tuple(loops[1:]))
    except GeometryError as exc:
        raise PolygonFormatError(f"Invalid polygon: {exc}") from exc
    return poly, pos


def parse_polygon(text: str) -> Polygon:
    lines = _tokens(text)
    poly, pos = _read_polygon_block(lines, 0)
    if pos != len(lines):
        raise PolygonFormatError(f"Line {lines[pos][0]}: unexpected trailing content")
    return poly


def parse_pieces(text: str) -> list:
    lines = _tokens(text)
    if not lines:
        raise PolygonFormatError("Empty pieces file")
    count = _int_field(lines[0], "a piece count")
    pieces = []
    pos = 1
    for _ in range(count):
        poly, pos = _read_polygon_block(lines, pos)
        pieces.append(poly)
    if pos != len(lines):
        raise PolygonFormatError(f"Line {lines[pos][0]}: unexpected trailing content")
    return pieces


def _read_text(path: str | os.PathLike[str]) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeError) as exc:
        raise PolygonFormatError(f"Could not read '{path}': {exc}") from exc


def read_polygon(path: str | os.PathLike[str]) -> Polygon:
    poly = parse_polygon(_read_text(path))
    log.debug("Read polygon with %d vertices and %d holes from %s", len(poly), len(poly.holes), path)
    return poly


def read_pieces(path: str | os.PathLike[str]) -> list:
    return parse_pieces(_read_text(path))


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def format_polygon(poly: Polygon) -> str:
    out = [f"2 {len(poly.loops)}"]
    for loop in poly.loops:
        out.append(str(len(loop)))
        out.extend(f"{format_float(x)} {format_float(y)}" for x, y in loop)
    return "\n".join(out) + "\n"


def write_polygon(path: str | os.PathLike[str], poly: Polygon) -> None:
    Path(path).write_text(format_polygon(poly), encoding="utf-8")


def write_pieces(path: str | os.PathLike[str], pieces: Sequence[Polygon]) -> None:
    text = f"{len(pieces)}\n" + "".join(format_polygon(p) for p in pieces)
    Path(path).write_text(text, encoding="utf-8")
    log.info("Wrote %d pieces to %s", len(pieces), path)


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_csv(path: str | os.PathLike[str], header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write a CSV with a header row; floats carry 17 significant digits."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    log.debug("Wrote %d rows to %s", count, path)
    return count


def read_csv(path: str | os.PathLike[str], columns: Sequence[str] = ()) -> dict:
    """Numeric columns of a CSV keyed by header name."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            rows = [row for row in reader if row]
    except (OSError, UnicodeError) as exc:
        raise PolygonFormatError(f"Could not read '{path}': {exc}") from exc
    if not header:
        raise PolygonFormatError(f"CSV '{path}' has no header row")
    missing = [c for c in columns if c not in header]
    if missing:
        raise PolygonFormatError(f"CSV '{path}' lacks columns {missing}")
    for index, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise PolygonFormatError(f"CSV '{path}' line {index}: expected {len(header)} fields, got {len(row)}")
    try:
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise PolygonFormatError(f"CSV '{path}' holds non-numeric data: {exc}") from exc
    return {name: data[:, i] for i, name in enumerate(header)}
