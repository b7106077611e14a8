"""
Static feature assembly.

A :class:`FeatureRegistry` fixes the order and provenance of every static
channel. The default layout has 54 channels:

=================  =====  ==============================================
group              count  source
=================  =====  ==============================================
landcover_onehot       6  class of the cell itself
landcover_radius      18  class shares within 500 m, 1 km, 2 km
bioclim               19  ``bio01`` .. ``bio19`` rasters
topography             6  elevation, slope, aspect, roughness, TPI, TRI
human                  3  GDP, distance to cities, accessibility
extra                  2  latitude, longitude of the cell center
=================  =====  ==============================================

Everything here works on whole rasters at once; the per-cell functions
(:func:`onehot_landcover`, :func:`radius_fractions`) are thin views onto the
same arithmetic and are what the tests cross-check against brute force.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ClassError, CoverageError, FitError, RegistryError, ShapeError
from .raster_store import RasterGrid, check_same_geometry


class LandCoverClass(IntEnum):
    CLOSED_FOREST = 0
    OPEN_FOREST = 1
    GRASSLAND = 2
    URBAN = 3
    AGRICULTURE = 4
    OTHER = 5


N_CLASSES = len(LandCoverClass)
CLASS_NAMES = [c.name.lower() for c in LandCoverClass]
DEFAULT_RADII_M = (500.0, 1000.0, 2000.0)
STD_FLOOR = 1e-8
LANDCOVER_LAYER = "landcover"

GROUPS = ("landcover_onehot", "landcover_radius", "bioclim", "topography", "human", "extra")
GROUP_SIZES = {"landcover_onehot": 6, "landcover_radius": 18, "bioclim": 19, "topography": 6, "human": 3}

TOPOGRAPHY = ("elevation", "slope", "aspect", "roughness", "tpi", "tri")
HUMAN = ("gdp", "dist_city", "accessibility")
# channels computed from the land-cover raster's geometry instead of a layer
DERIVED_SOURCES = {"@latitude", "@longitude"}


@dataclass(frozen=True)
class Channel:
    name: str
    group: str
    source: str
    mean: float = 0.0
    std: float = 1.0


@dataclass(frozen=True)
class FeatureRegistry:
    channels: tuple
    radii_m: tuple = DEFAULT_RADII_M
    fitted: bool = False

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise RegistryError("channel names must be unique")
        for c in self.channels:
            if c.group not in GROUPS:
                raise RegistryError(f"unknown group {c.group!r} for channel {c.name}")
        counts = {g: sum(c.group == g for c in self.channels) for g in GROUPS}
        if counts["landcover_radius"] != N_CLASSES * len(self.radii_m):
            raise RegistryError("landcover_radius channels must cover 6 classes at every radius")
        for g, n in GROUP_SIZES.items():
            if g == "landcover_radius":
                continue
            if counts[g] != n:
                raise RegistryError(f"group {g} has {counts[g]} channels, expected {n}")

    @property
    def total_static(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.channels]

    def layer_sources(self) -> set[str]:
        return {c.source for c in self.channels if c.source not in DERIVED_SOURCES}

    def digest(self) -> str:
        """Stable hash of the channel layout (names, groups, sources); ignores stats."""
        layout = [[c.name, c.group, c.source] for c in self.channels]
        return hashlib.sha256(json.dumps([layout, list(self.radii_m)]).encode()).hexdigest()

    def to_json(self) -> str:
        doc = {
            "radii_m": list(self.radii_m),
            "fitted": self.fitted,
            "channels": [
                {"name": c.name, "group": c.group, "source": c.source, "mean": c.mean, "std": c.std}
                for c in self.channels
            ],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FeatureRegistry":
        try:
            doc = json.loads(text)
            channels = tuple(
                Channel(c["name"], c["group"], c["source"], float(c.get("mean", 0.0)), float(c.get("std", 1.0)))
                for c in doc["channels"]
            )
            return cls(channels, tuple(doc.get("radii_m", DEFAULT_RADII_M)), bool(doc.get("fitted", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise RegistryError(f"malformed registry document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FeatureRegistry":
        return cls.from_json(Path(path).read_text())


def _radius_label(r: float) -> str:
    return f"{r / 1000:g}km" if r >= 1000 else f"{r:g}m"


def default_registry(radii_m=DEFAULT_RADII_M, extra=("latitude", "longitude")) -> FeatureRegistry:
    ch = [Channel(f"lc_{n}", "landcover_onehot", LANDCOVER_LAYER) for n in CLASS_NAMES]
    for r in radii_m:
        ch += [Channel(f"lc{_radius_label(r)}_{n}", "landcover_radius", LANDCOVER_LAYER) for n in CLASS_NAMES]
    ch += [Channel(f"bio{i:02d}", "bioclim", f"bio{i:02d}") for i in range(1, 20)]
    ch += [Channel(n, "topography", n) for n in TOPOGRAPHY]
    ch += [Channel(n, "human", n) for n in HUMAN]
    for n in extra:
        source = f"@{n}" if f"@{n}" in DERIVED_SOURCES else n
        ch.append(Channel(n, "extra", source))
    return FeatureRegistry(tuple(ch), tuple(float(r) for r in radii_m))


def _class_codes(values: np.ndarray) -> np.ndarray:
    """Integer class per cell, -1 for NaN; rejects anything outside 0..5."""
    valid = ~np.isnan(values)
    v = values[valid]
    if np.any((v != np.round(v)) | (v < 0) | (v >= N_CLASSES)):
        bad = v[(v != np.round(v)) | (v < 0) | (v >= N_CLASSES)][0]
        raise ClassError(f"land-cover value {bad} is not a class code 0..5")
    codes = np.full(values.shape, -1, dtype=np.int64)
    codes[valid] = v.astype(np.int64)
    return codes


def onehot_landcover(class_raster: RasterGrid, row: int, col: int):
    """Indicator vector of the cell's class, plus a masked flag (True for NaN cells)."""
    value = class_raster.values[row, col]
    out = np.zeros(N_CLASSES)
    if np.isnan(value):
        return out, True
    if value != int(value) or not 0 <= value < N_CLASSES:
        raise ClassError(f"land-cover value {value} at ({row}, {col}) is not a class code 0..5")
    out[int(value)] = 1.0
    return out, False


def disc_offsets(radius_m: float, cell_size: float) -> np.ndarray:
    """(drow, dcol) pairs whose cell centers lie within ``radius_m`` of the origin cell's center."""
    reach = int(np.floor(radius_m / cell_size))
    d = np.arange(-reach, reach + 1)
    dr, dc = np.meshgrid(d, d, indexing="ij")
    inside = (dr * dr + dc * dc) * cell_size * cell_size <= radius_m * radius_m
    return np.column_stack([dr[inside], dc[inside]])


def _disc_kernel(radius_m: float, cell_size: float) -> np.ndarray:
    reach = int(np.floor(radius_m / cell_size))
    d = np.arange(-reach, reach + 1)
    dr, dc = np.meshgrid(d, d, indexing="ij")
    return ((dr * dr + dc * dc) * cell_size * cell_size <= radius_m * radius_m).astype(np.float64)


def radius_fraction_maps(class_raster: RasterGrid, radii_m=DEFAULT_RADII_M) -> np.ndarray:
    """Class shares around every cell, shape (rows, cols, 6 * len(radii)).

    Cells with no valid neighbour in some disc get NaN there.
    """
    codes = _class_codes(class_raster.values)
    valid = (codes >= 0).astype(np.float64)
    out = np.empty(class_raster.shape + (N_CLASSES * len(radii_m),))
    for i, r in enumerate(radii_m):
        kernel = _disc_kernel(r, class_raster.cell_size)
        total = ndimage.correlate(valid, kernel, mode="constant", cval=0.0)
        # counts are small integers, so the convolution sums are exact
        total = np.rint(total)
        with np.errstate(invalid="ignore", divide="ignore"):
            for c in range(N_CLASSES):
                count = np.rint(ndimage.correlate((codes == c).astype(np.float64), kernel, mode="constant", cval=0.0))
                out[..., i * N_CLASSES + c] = np.where(total > 0, count / np.where(total > 0, total, 1.0), np.nan)
    return out


def radius_fractions(class_raster: RasterGrid, row: int, col: int, radii_m=DEFAULT_RADII_M) -> np.ndarray:
    """Class shares in discs around one cell, ordered radius-major, 6 classes each."""
    codes = _class_codes(class_raster.values)
    if codes[row, col] < 0:
        raise CoverageError(f"center cell ({row}, {col}) has no land-cover class")
    rows, cols = codes.shape
    out = np.empty(N_CLASSES * len(radii_m))
    for i, r in enumerate(radii_m):
        offs = disc_offsets(r, class_raster.cell_size)
        rr, cc = offs[:, 0] + row, offs[:, 1] + col
        keep = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
        found = codes[rr[keep], cc[keep]]
        found = found[found >= 0]
        if len(found) == 0:
            raise CoverageError(f"no valid land-cover cell within {r} m of ({row}, {col})")
        counts = np.bincount(found, minlength=N_CLASSES).astype(np.float64)
        out[i * N_CLASSES:(i + 1) * N_CLASSES] = counts / float(len(found))
    return out


def _resolve_layers(layers: dict, registry: FeatureRegistry) -> RasterGrid:
    missing = sorted(s for s in registry.layer_sources() if s not in layers)
    if missing:
        raise RegistryError(f"missing layers for channels: {', '.join(missing)}")
    if LANDCOVER_LAYER not in layers:
        raise RegistryError("a 'landcover' layer is required")
    base = layers[LANDCOVER_LAYER]
    check_same_geometry(base, *(layers[s] for s in sorted(registry.layer_sources())))
    return base


def feature_cube(layers: dict, registry: FeatureRegistry) -> tuple[np.ndarray, np.ndarray]:
    """Raw static features for every cell.

    Returns ``(cube, valid)`` where ``cube`` has shape (rows, cols, n_channels)
    and ``valid`` marks cells with a land-cover class and finite values in
    every channel.
    """
    base = _resolve_layers(layers, registry)
    codes = _class_codes(base.values)
    lon, lat = base.cell_centers()
    radius = radius_fraction_maps(base, registry.radii_m)
    cube = np.empty(base.shape + (registry.total_static,))
    onehot_i = radius_i = 0
    for j, ch in enumerate(registry.channels):
        if ch.group == "landcover_onehot":
            cube[..., j] = np.where(codes < 0, np.nan, (codes == onehot_i).astype(np.float64))
            onehot_i += 1
        elif ch.group == "landcover_radius":
            cube[..., j] = radius[..., radius_i]
            radius_i += 1
        elif ch.source == "@latitude":
            cube[..., j] = lat
        elif ch.source == "@longitude":
            cube[..., j] = lon
        else:
            cube[..., j] = layers[ch.source].values
    valid = (codes >= 0) & np.all(np.isfinite(cube), axis=-1)
    return cube, valid


@dataclass(frozen=True)
class FeatureVector:
    static_features: np.ndarray
    kbdi_annual_mean: float = 0.0


class MaskedLocation(Exception):
    """Raised by :func:`assemble_features` for a cell that must be skipped (water, missing data)."""


def assemble_features(location, layers: dict, registry: FeatureRegistry, kbdi_annual_mean: float = 0.0) -> FeatureVector:
    """Raw static features of one cell ``location = (row, col)`` in registry order."""
    row, col = location
    base = _resolve_layers(layers, registry)
    onehot, masked = onehot_landcover(base, row, col)
    if masked:
        raise MaskedLocation(f"cell ({row}, {col}) has no land cover (water)")
    radius = radius_fractions(base, row, col, registry.radii_m)
    lon, lat = base.cell_centers()
    out = np.empty(registry.total_static)
    onehot_i = radius_i = 0
    for j, ch in enumerate(registry.channels):
        if ch.group == "landcover_onehot":
            out[j] = onehot[onehot_i]
            onehot_i += 1
        elif ch.group == "landcover_radius":
            out[j] = radius[radius_i]
            radius_i += 1
        elif ch.source == "@latitude":
            out[j] = lat[row, col]
        elif ch.source == "@longitude":
            out[j] = lon[row, col]
        else:
            out[j] = layers[ch.source].values[row, col]
    if not np.all(np.isfinite(out)):
        bad = [registry.channels[j].name for j in np.flatnonzero(~np.isfinite(out))]
        raise MaskedLocation(f"cell ({row}, {col}) has missing values in {', '.join(bad)}")
    return FeatureVector(out, float(kbdi_annual_mean))


def fit_normalizer(samples, registry: FeatureRegistry) -> FeatureRegistry:
    """Per-channel mean/std from training rows (array of shape (n, n_channels))."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise FitError("cannot fit a normalizer on an empty sample set")
    if x.shape[1] != registry.total_static:
        raise ShapeError(f"samples have {x.shape[1]} channels, registry has {registry.total_static}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    channels = tuple(
        replace(c, mean=0.0, std=1.0) if c.group == "landcover_onehot" else replace(c, mean=float(m), std=float(s))
        for c, m, s in zip(registry.channels, mean, std)
    )
    return replace(registry, channels=channels, fitted=True)


def normalize_static(x, registry: FeatureRegistry) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != registry.total_static:
        raise ShapeError(f"got {x.shape[-1]} channels, registry has {registry.total_static}")
    mean = np.array([c.mean for c in registry.channels])
    std = np.maximum(np.array([c.std for c in registry.channels]), STD_FLOOR)
    onehot = np.array([c.group == "landcover_onehot" for c in registry.channels])
    return np.where(onehot, x, (x - mean) / std)


def normalize_kbdi(kbdi):
    return np.asarray(kbdi, dtype=np.float64) / 800.0


def apply_normalizer(v: FeatureVector, registry: FeatureRegistry) -> FeatureVector:
    """z-scored static channels (one-hots untouched) and KBDI scaled into [0, 1]."""
    return FeatureVector(normalize_static(v.static_features, registry), float(normalize_kbdi(v.kbdi_annual_mean)))
