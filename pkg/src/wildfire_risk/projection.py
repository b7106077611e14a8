"""
Future fire probability over projects from a climate-model ensemble.

Static features stay at present-day values; only annual mean KBDI changes
with (scenario, member, year). Because the trunk never sees KBDI, the
per-cell betas are computed once and each member-year costs one logistic.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, DegenerateInputError, DomainError, FormatError, SpecError
from .features import FeatureRegistry
from .model import NetworkParams, explain, logistic
from .raster_store import RasterGrid, check_same_geometry, rasterize_polygon

SCENARIOS = ("SSP1-2.6", "SSP2-4.5", "SSP5-8.5")
MAX_MEMBERS = 28


@dataclass
class ScenarioEnsemble:
    """Annual mean KBDI per member: ``members[id]`` has shape (n_years, n_locations)."""

    scenario_id: str
    years: list
    location_ids: list
    members: dict

    def __post_init__(self):
        if not self.members:
            raise SpecError(f"{self.scenario_id}: ensemble has no members")
        if len(self.members) > MAX_MEMBERS:
            raise SpecError(f"{self.scenario_id}: {len(self.members)} members exceed {MAX_MEMBERS}")
        self.years = [int(y) for y in self.years]
        if any(b - a != 1 for a, b in zip(self.years, self.years[1:])):
            raise CoverageError(f"{self.scenario_id}: years are not contiguous")
        shape = (len(self.years), len(self.location_ids))
        for mid, arr in self.members.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise CoverageError(f"{self.scenario_id}/{mid}: shape {arr.shape}, expected {shape}")
            if np.any(~np.isfinite(arr)):
                raise CoverageError(f"{self.scenario_id}/{mid}: missing KBDI values")
            self.members[mid] = arr

    @property
    def member_ids(self) -> list:
        return sorted(self.members)


@dataclass
class ProjectionResult:
    scenario_id: str
    years: np.ndarray
    member_ids: list
    project_ids: list
    per_project: np.ndarray  # (members, years, projects)
    smoothing_window: int = 10

    @property
    def member_values(self) -> np.ndarray:
        """Equal-weight mean over projects, (members, years)."""
        return self.per_project.mean(axis=2)

    @property
    def mean(self) -> np.ndarray:
        return self.member_values.mean(axis=0)

    @property
    def p16(self) -> np.ndarray:
        return np.array([ensemble_percentiles(col, 0.16) for col in self.member_values.T])

    @property
    def p84(self) -> np.ndarray:
        return np.array([ensemble_percentiles(col, 0.84) for col in self.member_values.T])

    @property
    def smoothed_mean(self) -> np.ndarray:
        return moving_average(self.mean, self.smoothing_window)

    def member_series(self, member_id) -> dict:
        i = self.member_ids.index(member_id)
        return dict(zip(self.years.tolist(), self.member_values[i].tolist()))


def project_scenario(params: NetworkParams, layers: dict, registry: FeatureRegistry, ensemble: ScenarioEnsemble,
                     polygons, location_index: RasterGrid, smoothing_window: int = 10) -> ProjectionResult:
    """Per-member, per-year mean fire probability of every project.

    ``location_index`` assigns each cell the ensemble location whose KBDI
    drives it (NaN for none).
    """
    emap = explain(params, layers, registry)
    check_same_geometry(emap.beta0, location_index)
    col_of = {int(loc): j for j, loc in enumerate(ensemble.location_ids)}
    cells = []
    for poly in polygons:
        inside = (rasterize_polygon(poly, location_index).values == 1.0) & np.isfinite(emap.beta0.values)
        if not inside.any():
            raise CoverageError(f"project {poly.project_id} has no valid cell")
        ids = location_index.values[inside]
        if np.any(np.isnan(ids)):
            raise CoverageError(f"project {poly.project_id} has cells without an ensemble location")
        try:
            cols = np.array([col_of[int(i)] for i in ids])
        except KeyError as exc:
            raise CoverageError(f"location {exc.args[0]} missing from ensemble {ensemble.scenario_id}") from exc
        cells.append((emap.beta0.values[inside], emap.beta1.values[inside], cols))

    member_ids = ensemble.member_ids
    out = np.empty((len(member_ids), len(ensemble.years), len(polygons)))
    for m, mid in enumerate(member_ids):
        k = ensemble.members[mid] / 800.0
        for j, (b0, b1, cols) in enumerate(cells):
            out[m, :, j] = logistic(b0[None, :] + b1[None, :] * k[:, cols]).mean(axis=1)
    return ProjectionResult(ensemble.scenario_id, np.array(ensemble.years), member_ids,
                            [p.project_id for p in polygons], out, smoothing_window)


def ensemble_percentiles(values, q: float) -> float:
    """Linear-interpolation percentile at fraction ``q`` (rank ``q * (n - 1)`` on sorted values)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if len(v) == 0:
        raise DomainError("percentile of an empty set")
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q must lie in [0, 1], got {q}")
    h = q * (len(v) - 1)
    lo = int(np.floor(h))
    if lo + 1 >= len(v):
        return float(v[lo])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


def moving_average(series, window: int = 10):
    """Centered moving mean, truncated at the edges.

    Even windows reach one year further back than forward (window 10 covers
    t-5 .. t+4). Accepts an array over contiguous years or a ``{year: value}``
    mapping, and returns the same kind.
    """
    if window < 1:
        raise DomainError("window must be at least 1")
    if isinstance(series, dict):
        years = sorted(series)
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise CoverageError("series years are not contiguous")
        return dict(zip(years, moving_average(np.array([series[y] for y in years]), window).tolist()))
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise DomainError("empty series")
    back, ahead = window // 2, (window - 1) // 2
    n = len(x)
    out = np.empty(n)
    for t in range(n):
        lo, hi = max(0, t - back), min(n, t + ahead + 1)
        out[t] = x[lo:hi].mean()
    return out


def relative_change(series: dict, baseline_window, target_year: int) -> float:
    """(value at target - baseline mean) / baseline mean."""
    y0, y1 = baseline_window
    base_years = [y for y in range(y0, y1 + 1)]
    missing = [y for y in base_years + [target_year] if y not in series]
    if missing:
        raise CoverageError(f"series lacks years {missing[:5]}")
    # exact rational mean, so a constant baseline returns its value unchanged
    base = float(statistics.mean(float(series[y]) for y in base_years))
    if base == 0.0:
        raise DegenerateInputError("baseline mean is zero")
    return (series[target_year] - base) / base


@dataclass(frozen=True)
class ChangeSummary:
    scenario_id: str
    target_year: int
    mean: float
    p16: float
    p84: float
    members: tuple


def ensemble_change(result: ProjectionResult, baseline_window, target_year: int) -> ChangeSummary:
    """Relative change per member, summarized by the mean and the 16th/84th percentiles."""
    changes = [relative_change(result.member_series(m), baseline_window, target_year) for m in result.member_ids]
    return ChangeSummary(result.scenario_id, int(target_year), float(np.mean(changes)),
                         ensemble_percentiles(changes, 0.16), ensemble_percentiles(changes, 0.84), tuple(changes))


def read_member_csv(path):
    """``year,location_id,kbdi_mean`` rows -> (years, location_ids, array (years, locations))."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"year", "location_id", "kbdi_mean"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected header year,location_id,kbdi_mean")
        rows = [(int(r["year"]), int(r["location_id"]), float(r["kbdi_mean"])) for r in reader]
    years = sorted({r[0] for r in rows})
    locs = sorted({r[1] for r in rows})
    yi = {y: i for i, y in enumerate(years)}
    li = {loc: j for j, loc in enumerate(locs)}
    arr = np.full((len(years), len(locs)), np.nan)
    for y, loc, v in rows:
        arr[yi[y], li[loc]] = v
    if np.any(np.isnan(arr)):
        raise CoverageError(f"{path}: some (year, location) pairs are missing")
    return years, locs, arr


def write_member_csv(path, years, location_ids, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "location_id", "kbdi_mean"])
        for i, y in enumerate(years):
            for j, loc in enumerate(location_ids):
                w.writerow([int(y), int(loc), repr(float(values[i][j]))])


def load_ensemble(scenario_dir, scenario_id: str | None = None) -> ScenarioEnsemble:
    """Every ``<member>.csv`` in ``scenario_dir`` as one ensemble."""
    scenario_dir = Path(scenario_dir)
    files = sorted(scenario_dir.glob("*.csv"))
    if not files:
        raise CoverageError(f"no member CSVs in {scenario_dir}")
    members, years, locs = {}, None, None
    for f in files:
        y, loc, arr = read_member_csv(f)
        if years is None:
            years, locs = y, loc
        elif y != years or loc != locs:
            raise CoverageError(f"{f}: years or locations differ from the other members")
        members[f.stem] = arr
    return ScenarioEnsemble(scenario_id or scenario_dir.name, years, locs, members)


def write_projection_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "year", "mean", "p16", "p84", "smoothed_mean"])
        for r in results:
            for y, m, lo, hi, s in zip(r.years.tolist(), r.mean, r.p16, r.p84, r.smoothed_mean):
                w.writerow([r.scenario_id, y, repr(float(m)), repr(float(lo)), repr(float(hi)), repr(float(s))])


def write_changes_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "target_year", "mean_change", "p16", "p84"])
        for s in summaries:
            w.writerow([s.scenario_id, s.target_year, repr(s.mean), repr(s.p16), repr(s.p84)])


def synthetic_ensembles(kbdi_annual: np.ndarray, years=range(2000, 2101), n_members: int = 28, seed: int = 0,
                        scenarios=SCENARIOS, warming=(1.5, 3.0, 6.0)) -> dict:
    """Toy KBDI ensembles that drift upward from a historical climatology.

    ``kbdi_annual`` is (historical years, locations). Every member carries a
    sensitivity and interannual noise shared across scenarios, so a scenario
    with a larger ``warming`` rate dominates the others member by member.
    """
    rng = np.random.default_rng(seed)
    years = list(years)
    clim = kbdi_annual.mean(axis=0)
    t = np.clip(np.array(years, dtype=np.float64) - 2015.0, 0.0, None)[:, None]
    n_loc = kbdi_annual.shape[1]
    sens = rng.lognormal(0.0, 0.35, n_members)
    noise = rng.normal(0.0, 25.0, (n_members, len(years), n_loc))
    out = {}
    for sid, rate in zip(scenarios, warming):
        members = {}
        for m in range(n_members):
            drift = rate * sens[m] * t * (800.0 - clim) / 800.0
            members[f"m{m:02d}"] = np.clip(clim + drift + noise[m], 0.0, 800.0)
        out[sid] = ScenarioEnsemble(sid, years, list(range(n_loc)), members)
    return out
