"""
Sampling, labeling and the temporal train/validation split, plus a seeded
synthetic world for desk-scale experiments.

The synthetic world draws fire from a known probability

    p* = logistic(a + b * KBDI/800 + c * closed_forest_share_1km + d * is_grassland)

so that a trained model's skill can be checked against ground truth.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CapacityError, CoverageError, FormatError, SpecError
from .features import (
    HUMAN,
    LANDCOVER_LAYER,
    N_CLASSES,
    TOPOGRAPHY,
    FeatureVector,
    LandCoverClass,
    radius_fraction_maps,
)
from .kbdi import DailyWeatherSeries, annual_means, kbdi_series, write_weather_csv
from .model import logistic
from .raster_store import ProjectPolygon, RasterGrid, check_same_geometry, read_raster, save_polygons, write_raster

MASK64 = (1 << 64) - 1


def derive_seed(root: int, label: str) -> int:
    """Independent 64-bit stream seed for ``label`` under ``root``."""
    digest = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
    return (int(root) ^ digest) & MASK64


@dataclass(frozen=True)
class SampleRecord:
    row: int
    col: int
    year: int
    label: int
    features: FeatureVector | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_years: tuple = (2001, 2009)
    validation_years: tuple = (2010, 2021)
    seed: int = 0

    def __post_init__(self):
        (t0, t1), (v0, v1) = self.train_years, self.validation_years
        if t0 > t1 or v0 > v1:
            raise SpecError(f"empty year range in {self}")
        if not t1 < v0:
            raise SpecError(f"train years {t0}-{t1} must end before validation years {v0}-{v1}")


def eligible_mask(landcover: RasterGrid) -> np.ndarray:
    """Cells that may be sampled: known land cover (not water) and not agriculture."""
    v = landcover.values
    return ~np.isnan(v) & (v != float(LandCoverClass.AGRICULTURE))


def sample_locations(landcover: RasterGrid, n: int, seed: int) -> list[tuple[int, int]]:
    """Uniform draw of ``n`` distinct eligible cells."""
    if n < 1:
        raise SpecError(f"n must be at least 1, got {n}")
    cells = np.argwhere(eligible_mask(landcover))
    if len(cells) < n:
        raise CapacityError(f"only {len(cells)} eligible cells, {n} requested")
    pick = np.random.default_rng(seed).choice(len(cells), size=n, replace=False)
    return [(int(r), int(c)) for r, c in cells[pick]]


def label_samples(locations, fire_year_rasters: dict, years) -> list[SampleRecord]:
    """One record per (location, year); cells with NaN fire observation are dropped."""
    missing = [y for y in years if y not in fire_year_rasters]
    if missing:
        raise CoverageError(f"no fire raster for years {missing}")
    grids = [fire_year_rasters[y] for y in years]
    if grids:
        check_same_geometry(*grids)
    out = []
    for r, c in locations:
        for y, g in zip(years, grids):
            v = g.values[r, c]
            if np.isnan(v):
                continue
            if v not in (0.0, 1.0):
                raise FormatError(f"fire raster {y} holds {v} at ({r}, {c}); expected 0, 1 or NaN")
            out.append(SampleRecord(r, c, int(y), int(v)))
    return out


def split(records, spec: SplitSpec):
    (t0, t1), (v0, v1) = spec.train_years, spec.validation_years
    train = [r for r in records if t0 <= r.year <= t1]
    val = [r for r in records if v0 <= r.year <= v1]
    return train, val


def downsample_negatives(records, keep_fraction: float, seed: int):
    """Keep every positive and a random ``keep_fraction`` of negatives."""
    if not 0 < keep_fraction <= 1:
        raise SpecError("keep_fraction must be in (0, 1]")
    if keep_fraction == 1:
        return list(records)
    u = np.random.default_rng(seed).random(len(records))
    return [r for r, x in zip(records, u) if r.label == 1 or x < keep_fraction]


@dataclass
class SampleSet:
    """Array view of labeled samples: ``static`` is (n, channels)."""

    rows: np.ndarray
    cols: np.ndarray
    years: np.ndarray
    labels: np.ndarray
    kbdi: np.ndarray
    static: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, mask) -> "SampleSet":
        return SampleSet(self.rows[mask], self.cols[mask], self.years[mask], self.labels[mask],
                         self.kbdi[mask], self.static[mask])

    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(int(r), int(c), int(y), int(l), FeatureVector(s.copy(), float(k)))
            for r, c, y, l, k, s in zip(self.rows, self.cols, self.years, self.labels, self.kbdi, self.static)
        ]


def attach_features(records, cube: np.ndarray, valid: np.ndarray, kbdi_lookup) -> SampleSet:
    """Pair labeled records with raw static features and annual mean KBDI.

    ``kbdi_lookup(row, col, year)`` returns the annual mean KBDI. Records on
    masked cells are skipped.
    """
    kept = [r for r in records if valid[r.row, r.col]]
    n = len(kept)
    rows = np.array([r.row for r in kept], dtype=np.int64)
    cols = np.array([r.col for r in kept], dtype=np.int64)
    years = np.array([r.year for r in kept], dtype=np.int64)
    labels = np.array([r.label for r in kept], dtype=np.int64)
    kbdi = np.array([kbdi_lookup(r.row, r.col, r.year) for r in kept], dtype=np.float64)
    static = cube[rows, cols, :] if n else np.empty((0, cube.shape[-1]))
    return SampleSet(rows, cols, years, labels, kbdi, np.array(static))


def write_samples_csv(path, samples: SampleSet) -> None:
    n_feat = samples.static.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "year", "label", "kbdi_mean"] + [f"f{i}" for i in range(n_feat)])
        for i in range(len(samples)):
            w.writerow(
                [int(samples.rows[i]), int(samples.cols[i]), int(samples.years[i]), int(samples.labels[i]),
                 repr(float(samples.kbdi[i]))] + [repr(float(x)) for x in samples.static[i]]
            )


def read_samples_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["row", "col", "year", "label", "kbdi_mean"]:
            raise FormatError(f"{path}: unexpected header {header[:5]}")
        body = [list(map(float, row)) for row in reader]
    a = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return SampleSet(a[:, 0].astype(np.int64), a[:, 1].astype(np.int64), a[:, 2].astype(np.int64),
                     a[:, 3].astype(np.int64), a[:, 4], a[:, 5:])


# --------------------------------------------------------------------------
# synthetic world


@dataclass(frozen=True)
class WorldSpec:
    rows: int = 64
    cols: int = 64
    first_year: int = 2001
    n_years: int = 12
    cell_size: float = 300.0
    origin_x: float = -122.0
    origin_y: float = 47.0
    station_block: int = 8  # cells per side of one weather station's footprint
    n_projects: int = 100
    a: float = -8.0
    b: float = 4.0
    c: float = 4.0
    d: float = 3.0

    def __post_init__(self):
        if self.rows < 8 or self.cols < 8:
            raise SpecError(f"synthetic world needs at least 8x8 cells, got {self.rows}x{self.cols}")
        if self.n_years < 4:
            raise SpecError(f"synthetic world needs at least 4 years, got {self.n_years}")
        if self.station_block < 1 or self.cell_size <= 0 or self.n_projects < 0:
            raise SpecError("station_block and cell_size must be positive, n_projects nonnegative")

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.first_year + self.n_years))

    @property
    def coefficients(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}


@dataclass
class SyntheticWorld:
    spec: WorldSpec
    seed: int
    layers: dict  # name -> RasterGrid, includes "landcover"
    stations: RasterGrid  # weather-station id of every cell
    weather: dict  # station id -> (start_date, tmax_c, precip_mm)
    kbdi_annual: np.ndarray  # (n_years, n_stations)
    probability: dict  # year -> RasterGrid of p*
    fire: dict  # year -> RasterGrid in {0, 1, NaN}
    polygons: list = field(default_factory=list)

    @property
    def years(self):
        return self.spec.years

    def kbdi_raster(self, year: int) -> RasterGrid:
        ids = self.stations.values.astype(np.int64)
        return self.stations.like(self.kbdi_annual[self.years.index(year)][ids])

    def kbdi_lookup(self, row: int, col: int, year: int) -> float:
        return float(self.kbdi_annual[self.years.index(year), int(self.stations.values[row, col])])


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def _landcover(rng, shape):
    # class-specific smooth scores; bias toward forest, water carved out of a separate field
    bias = np.array([0.6, 0.3, 0.3, -0.6, 0.0, -0.5])
    scores = np.stack([_smooth_field(rng, shape, 2.5) + bias[k] for k in range(N_CLASSES)])
    lc = np.argmax(scores, axis=0).astype(np.float64)
    water = _smooth_field(rng, shape, 4.0) > 1.5
    lc[water] = np.nan
    return lc


def _weather(rng, n_days, base_temp_c, wetness, year_index, start):
    doy = np.array([(start + dt.timedelta(days=i)).timetuple().tm_yday for i in range(n_days)])
    seasonal = 9.0 * np.sin(2 * np.pi * (doy - 105) / 365.25)
    # year-to-year anomalies drive interannual KBDI variability
    n_years = year_index.max() + 1
    t_anom = rng.normal(0.0, 2.5, n_years)[year_index]
    w_anom = np.exp(rng.normal(0.0, 0.45, n_years))[year_index]
    tmax = base_temp_c + seasonal + t_anom + rng.normal(0.0, 3.0, n_days)
    wet = rng.random(n_days) < np.clip(0.28 * wetness * w_anom, 0.02, 0.9)
    precip = np.where(wet, rng.exponential(6.0 * wetness, n_days), 0.0)
    return tmax, precip


def generate_synthetic_world(spec: WorldSpec | None = None, seed: int = 0) -> SyntheticWorld:
    """Seeded synthetic landscape with weather, KBDI, ground-truth fire probability and labels.

    A one-year KBDI spin-up precedes ``spec.first_year``.
    """
    spec = spec or WorldSpec()
    rng = np.random.default_rng(seed)
    shape = (spec.rows, spec.cols)
    geo = dict(origin_x=spec.origin_x, origin_y=spec.origin_y, cell_size=spec.cell_size)

    lc = _landcover(rng, shape)
    landcover = RasterGrid(lc, **geo)
    layers = {LANDCOVER_LAYER: landcover}
    gradient = np.linspace(-1.0, 1.0, spec.rows)[:, None] * np.ones(shape)
    for i in range(1, 20):
        f = _smooth_field(rng, shape, 3.0) + (0.8 * gradient if i <= 11 else -0.5 * gradient)
        layers[f"bio{i:02d}"] = RasterGrid(f, **geo)
    elevation = 800.0 + 400.0 * _smooth_field(rng, shape, 4.0)
    gy, gx = np.gradient(elevation, spec.cell_size)
    topo = {
        "elevation": elevation,
        "slope": np.degrees(np.arctan(np.hypot(gx, gy))),
        "aspect": np.degrees(np.arctan2(-gx, gy)) % 360.0,
        "roughness": ndimage.maximum_filter(elevation, 3) - ndimage.minimum_filter(elevation, 3),
        "tpi": elevation - ndimage.uniform_filter(elevation, 5),
        "tri": ndimage.generic_filter(elevation, lambda w: np.mean(np.abs(w - w[4])), size=3),
    }
    for name in TOPOGRAPHY:
        layers[name] = RasterGrid(topo[name], **geo)
    human = {
        "gdp": np.exp(9.5 + 0.5 * _smooth_field(rng, shape, 6.0)),
        "dist_city": 20.0 + 10.0 * np.abs(_smooth_field(rng, shape, 5.0)),
        "accessibility": 60.0 + 30.0 * np.abs(_smooth_field(rng, shape, 5.0)),
    }
    for name in HUMAN:
        layers[name] = RasterGrid(human[name], **geo)

    # weather stations: one per block of cells
    blk = spec.station_block
    s_rows, s_cols = -(-spec.rows // blk), -(-spec.cols // blk)
    rr, cc = np.indices(shape)
    stations = RasterGrid(((rr // blk) * s_cols + cc // blk).astype(np.float64), **geo)
    n_st = s_rows * s_cols
    start = dt.date(spec.first_year - 1, 1, 1)
    end = dt.date(spec.first_year + spec.n_years - 1, 12, 31)
    n_days = (end - start).days + 1
    year_index = np.array([(start + dt.timedelta(days=i)).year - start.year for i in range(n_days)])
    s_grad = np.linspace(0.0, 1.0, s_rows)[:, None] * np.ones((s_rows, s_cols))
    base_temp = (22.0 + 8.0 * s_grad.ravel() + rng.normal(0.0, 2.0, n_st))
    wetness = np.exp(-0.6 * s_grad.ravel() + rng.normal(0.0, 0.25, n_st))
    weather, kbdi_annual = {}, np.empty((spec.n_years, n_st))
    for s in range(n_st):
        tmax_c, precip_mm = _weather(rng, n_days, base_temp[s], wetness[s], year_index, start)
        # stored rounded to 0.1 so the CSV text round-trips exactly
        tmax_c, precip_mm = np.round(tmax_c, 1), np.round(precip_mm, 1)
        weather[s] = (start, tmax_c, precip_mm)
        series = kbdi_series(_to_imperial(start, tmax_c, precip_mm))
        means = annual_means(series)
        kbdi_annual[:, s] = [means[y] for y in spec.years]

    cf_1km = radius_fraction_maps(landcover, (1000.0,))[..., int(LandCoverClass.CLOSED_FOREST)]
    grass = (lc == float(LandCoverClass.GRASSLAND)).astype(np.float64)
    land = ~np.isnan(lc)
    ids = stations.values.astype(np.int64)
    probability, fire = {}, {}
    for t, year in enumerate(spec.years):
        k = kbdi_annual[t][ids] / 800.0
        p = logistic(spec.a + spec.b * k + spec.c * np.nan_to_num(cf_1km) + spec.d * grass)
        p = np.where(land, p, np.nan)
        draws = rng.random(shape)
        probability[year] = RasterGrid(p, **geo)
        fire[year] = RasterGrid(np.where(land, (draws < np.nan_to_num(p)).astype(np.float64), np.nan), **geo)

    polygons = _random_projects(rng, landcover, spec.n_projects)
    return SyntheticWorld(spec, int(seed), layers, stations, weather, kbdi_annual, probability, fire, polygons)


def _to_imperial(start, tmax_c, precip_mm) -> DailyWeatherSeries:
    precip_in = precip_mm / 25.4
    normal = float(precip_in.sum()) * 365.25 / len(precip_in)
    return DailyWeatherSeries(start, tmax_c * 9.0 / 5.0 + 32.0, precip_in, max(normal, 1e-3))


def _random_projects(rng, landcover: RasterGrid, n: int) -> list[ProjectPolygon]:
    """Small cell-aligned rectangular projects, each mostly on land."""
    d = landcover.cell_deg
    rows, cols = landcover.shape
    land = ~np.isnan(landcover.values)
    out, attempts = [], 0
    while len(out) < n and attempts < 50 * max(n, 1):
        attempts += 1
        h, w = rng.integers(2, 5, size=2)
        r0, c0 = rng.integers(0, rows - h + 1), rng.integers(0, cols - w + 1)
        if land[r0:r0 + h, c0:c0 + w].mean() < 0.75:
            continue
        west = landcover.origin_x + c0 * d
        north = landcover.origin_y - r0 * d
        out.append(ProjectPolygon.rectangle(f"SYN{len(out) + 1:03d}", west, north - h * d, west + w * d, north))
    return out


def write_world(world: SyntheticWorld, out_dir) -> None:
    """Directory of PYR1 rasters, weather CSVs and a manifest with the ground truth."""
    out = Path(out_dir)
    for sub in ("layers", "weather", "fire", "probability"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for name, g in sorted(world.layers.items()):
        write_raster(g, out / "layers" / f"{name}.pyr")
    write_raster(world.stations, out / "stations.pyr")
    for s, (start, tmax_c, precip_mm) in sorted(world.weather.items()):
        write_weather_csv(out / "weather" / f"{s}.csv", start, tmax_c, precip_mm)
    for y in world.years:
        write_raster(world.fire[y], out / "fire" / f"{y}.pyr")
        write_raster(world.probability[y], out / "probability" / f"{y}.pyr")
    save_polygons(world.polygons, out / "polygons.json")
    manifest = {
        "generator": "synthetic_world",
        "seed": world.seed,
        "spec": {k: getattr(world.spec, k) for k in world.spec.__dataclass_fields__},
        "coefficients": world.spec.coefficients,
        "years": world.years,
        "n_stations": int(world.kbdi_annual.shape[1]),
    }
    (out / "world.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_fire_rasters(fire_dir) -> dict[int, RasterGrid]:
    fire_dir = Path(fire_dir)
    out = {int(p.stem): read_raster(p) for p in sorted(fire_dir.glob("*.pyr"))}
    if not out:
        raise CoverageError(f"no fire rasters in {fire_dir}")
    return out


def load_layers(layer_dir) -> dict[str, RasterGrid]:
    layer_dir = Path(layer_dir)
    out = {p.stem: read_raster(p) for p in sorted(layer_dir.glob("*.pyr"))}
    if LANDCOVER_LAYER not in out:
        raise CoverageError(f"{layer_dir} has no landcover.pyr")
    return out

