"""
Georeferenced rasters, the PYR1 binary format, polygon rasterization and
zonal statistics.

Coordinates are planar longitude/latitude. A raster's cell edge is stored in
meters (``cell_size``); its extent in degrees uses a nominal
``METERS_PER_DEGREE`` so that polygons given in lon/lat can be burned onto it.

PYR1 layout (little-endian)::

    magic "PYR1" | version u32 | rows u32 | cols u32 |
    origin_x f64 | origin_y f64 | cell_size f64 | dtype u8 | payload f64[rows*cols]
"""

from __future__ import annotations

import json
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    FormatError,
    GeometryError,
    LengthError,
    ShapeError,
)

MAGIC = b"PYR1"
VERSION = 1
DTYPE_F64 = 0
_HEADER = struct.Struct("<4sIIIdddB")
HEADER_SIZE = _HEADER.size  # 41

METERS_PER_DEGREE = 111_320.0
CANONICAL_NAN = np.frombuffer(struct.pack("<Q", 0x7FF8000000000000), dtype="<f8")[0]


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """One channel on a regular grid.

    ``origin_x``/``origin_y`` locate the upper-left corner of the upper-left
    cell. Rows run southward, columns eastward. NaN marks nodata.
    """

    values: np.ndarray
    origin_x: float = 0.0
    origin_y: float = 0.0
    cell_size: float = 300.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 2:
            raise ShapeError(f"raster values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError("raster needs at least one row and one column")
        if not (np.isfinite(self.cell_size) and self.cell_size > 0):
            raise GeometryError(f"cell_size must be positive, got {self.cell_size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin_x", float(self.origin_x))
        object.__setattr__(self, "origin_y", float(self.origin_y))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def cell_deg(self) -> float:
        """Cell edge in degrees."""
        return self.cell_size / METERS_PER_DEGREE

    def same_geometry(self, other: "RasterGrid") -> bool:
        return (
            self.shape == other.shape
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.cell_size == other.cell_size
        )

    def like(self, values) -> "RasterGrid":
        """New raster with this geometry and the given values."""
        return RasterGrid(values, self.origin_x, self.origin_y, self.cell_size)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Longitude and latitude of every cell center, each shaped like the grid."""
        d = self.cell_deg
        lon = self.origin_x + (np.arange(self.cols) + 0.5) * d
        lat = self.origin_y - (np.arange(self.rows) + 0.5) * d
        return np.meshgrid(lon, lat)

    def to_pixel(self, lon, lat):
        """Fractional (column, row) coordinates; cell (r, c) spans [c, c+1) x [r, r+1)."""
        d = self.cell_deg
        return (np.asarray(lon, float) - self.origin_x) / d, (self.origin_y - np.asarray(lat, float)) / d

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return self.same_geometry(other) and self.values.tobytes() == other.values.tobytes()

    __hash__ = None


def check_same_geometry(*grids: RasterGrid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not first.same_geometry(g):
            raise ShapeError(
                f"geometry mismatch: {first.shape}@({first.origin_x}, {first.origin_y}, "
                f"{first.cell_size}) vs {g.shape}@({g.origin_x}, {g.origin_y}, {g.cell_size})"
            )


def _canonical_payload(values: np.ndarray) -> bytes:
    out = values.astype("<f8", copy=True)
    out[np.isnan(out)] = CANONICAL_NAN
    return out.tobytes()


def encode_raster(grid: RasterGrid) -> bytes:
    header = _HEADER.pack(
        MAGIC, VERSION, grid.rows, grid.cols, grid.origin_x, grid.origin_y, grid.cell_size, DTYPE_F64
    )
    return header + _canonical_payload(grid.values)


def decode_raster(data: bytes) -> RasterGrid:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < HEADER_SIZE:
        raise LengthError(f"header truncated: {len(data)} < {HEADER_SIZE} bytes")
    _, version, rows, cols, ox, oy, cell, dtype = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported PYR1 version {version}")
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}")
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid dimensions {rows}x{cols}")
    n = rows * cols
    if n > sys.maxsize // 8:
        raise CapacityError(f"{rows}x{cols} cells exceed the addressable size")
    expected = HEADER_SIZE + 8 * n
    if len(data) != expected:
        raise LengthError(f"payload has {len(data) - HEADER_SIZE} bytes, expected {8 * n}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=HEADER_SIZE).reshape(rows, cols)
    return RasterGrid(values.astype(np.float64), ox, oy, cell)


def write_raster(grid: RasterGrid, path) -> None:
    """Write ``grid`` as a PYR1 file. NaN cells are stored as the canonical quiet NaN."""
    Path(path).write_bytes(encode_raster(grid))


def read_raster(path) -> RasterGrid:
    return decode_raster(Path(path).read_bytes())


@dataclass(frozen=True)
class ProjectPolygon:
    """A project boundary: first ring is the outer shell, the rest are holes."""

    project_id: str
    rings: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.project_id:
            raise GeometryError("project_id must be nonempty")
        rings = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.rings)
        if not rings:
            raise GeometryError(f"{self.project_id}: polygon has no rings")
        for ring in rings:
            if len(ring) < 4:
                raise GeometryError(f"{self.project_id}: ring has {len(ring)} vertices, need >= 4")
            if ring[0] != ring[-1]:
                raise GeometryError(f"{self.project_id}: ring is not closed")
        object.__setattr__(self, "rings", rings)

    @classmethod
    def rectangle(cls, project_id, west, south, east, north):
        ring = [(west, south), (east, south), (east, north), (west, north), (west, south)]
        return cls(project_id, (ring,))


def load_polygons(path) -> list[ProjectPolygon]:
    doc = json.loads(Path(path).read_text())
    try:
        projects = [ProjectPolygon(p["id"], p["rings"]) for p in doc["projects"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed project document ({exc})") from exc
    ids = [p.project_id for p in projects]
    if len(set(ids)) != len(ids):
        raise GeometryError(f"{path}: duplicate project ids")
    return projects


def save_polygons(polygons, path) -> None:
    doc = {"projects": [{"id": p.project_id, "rings": [[list(v) for v in r] for r in p.rings]} for p in polygons]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _crossings(px: np.ndarray, py: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Parity of ray crossings to +x for every point (even-odd rule).

    Evaluated in pixel space (y grows southward), so a cell center on a left or
    top edge counts as inside and one on a right or bottom edge as outside.
    """
    inside = np.zeros(px.shape, dtype=bool)
    xs, ys = ring[:, 0], ring[:, 1]
    for i in range(len(ring) - 1):
        x0, y0, x1, y1 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        if y0 == y1:
            continue
        straddle = (y0 > py) != (y1 > py)
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddle & (px < xint)
    return inside


def rasterize_polygon(poly: ProjectPolygon, template: RasterGrid) -> RasterGrid:
    """1.0 where the cell center lies inside ``poly`` (holes excluded), else 0.0."""
    rows, cols = template.shape
    px, py = np.meshgrid(np.arange(cols) + 0.5, np.arange(rows) + 0.5)
    inside = np.zeros((rows, cols), dtype=bool)
    for ring in poly.rings:
        if len(ring) < 4:
            raise GeometryError(f"{poly.project_id}: degenerate ring")
        u, v = template.to_pixel(*np.asarray(ring).T)
        inside ^= _crossings(px, py, np.column_stack([u, v]))
    return template.like(inside.astype(np.float64))


def zonal_fraction(mask: RasterGrid, layer: RasterGrid, predicate_threshold: float) -> float:
    """Share of valid in-zone cells where ``layer >= predicate_threshold``; NaN for an empty zone."""
    check_same_geometry(mask, layer)
    zone = (mask.values == 1.0) & ~np.isnan(layer.values)
    n = int(zone.sum())
    if n == 0:
        return float("nan")
    return int((layer.values[zone] >= predicate_threshold).sum()) / n
