"""
Project-level validation: AUC, per-project scores, model-vs-benchmark
comparison and burned-area reporting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import AlignmentError, CoverageError, DegenerateInputError, FormatError, RangeError
from .raster_store import RasterGrid, check_same_geometry, rasterize_polygon, zonal_fraction


@dataclass(frozen=True)
class ScoredProject:
    project_id: str
    score: float
    label: int


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise AlignmentError("scores and labels must be 1-D and equally long")
    if not np.all(np.isfinite(s)):
        raise DegenerateInputError("scores must be finite")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise DegenerateInputError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def project_auc(scored) -> float:
    return auc([p.score for p in scored], [p.label for p in scored])


def project_scores(prob_raster: RasterGrid, polygons, reduction: str = "mean") -> dict[str, float]:
    """Mean (or max) valid probability inside each project."""
    if reduction not in ("mean", "max"):
        raise ValueError(f"unknown reduction {reduction!r}")
    reduce = np.mean if reduction == "mean" else np.max
    out = {}
    for poly in polygons:
        mask = rasterize_polygon(poly, prob_raster).values == 1.0
        vals = prob_raster.values[mask]
        vals = vals[~np.isnan(vals)]
        if len(vals) == 0:
            raise CoverageError(f"project {poly.project_id} covers no valid cell of the raster")
        out[poly.project_id] = float(reduce(vals))
    return out


@dataclass(frozen=True)
class ComparisonReport:
    auc_model: float
    auc_benchmark: float
    delta: float
    n_projects: int
    n_positive: int


def compare_models(model_scores: dict, benchmark_scores: dict, labels: dict) -> ComparisonReport:
    ids = sorted(labels)
    if set(model_scores) != set(ids) or set(benchmark_scores) != set(ids):
        raise AlignmentError("model scores, benchmark scores and labels must cover the same projects")
    y = [labels[i] for i in ids]
    a_m = auc([model_scores[i] for i in ids], y)
    a_b = auc([benchmark_scores[i] for i in ids], y)
    return ComparisonReport(a_m, a_b, a_m - a_b, len(ids), int(sum(y)))


def read_benchmark_csv(path) -> dict[str, float]:
    """``project_id,score`` rows from an external benchmark."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"project_id", "score"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected header project_id,score")
        return {row["project_id"]: float(row["score"]) for row in reader}


def write_scores_csv(path, scores: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["project_id", "score"])
        for pid in sorted(scores):
            w.writerow([pid, repr(float(scores[pid]))])


@dataclass(frozen=True)
class BurnSummary:
    any_fire: bool
    max_annual_fraction: float
    cumulative_fraction: float


def burned_fraction_report(fire_rasters: dict, polygons, window) -> dict[str, BurnSummary]:
    """Per project: any fire in the window, worst single year, and share burned at least once.

    The cumulative share is over project cells observed (non-NaN) in at least
    one year of the window.
    """
    y0, y1 = window
    years = [y for y in sorted(fire_rasters) if y0 <= y <= y1]
    if y0 > y1 or not years:
        raise RangeError(f"no fire rasters in window {y0}-{y1}")
    grids = [fire_rasters[y] for y in years]
    check_same_geometry(*grids)
    stack = np.stack([g.values for g in grids])
    burned_any = np.any(stack == 1.0, axis=0)
    observed = np.any(~np.isnan(stack), axis=0)
    out = {}
    for poly in polygons:
        mask = rasterize_polygon(poly, grids[0])
        fracs = [zonal_fraction(mask, g, 1.0) for g in grids]
        fracs = [f for f in fracs if not np.isnan(f)]
        zone = (mask.values == 1.0) & observed
        n = int(zone.sum())
        cumulative = float(burned_any[zone].sum() / n) if n else float("nan")
        out[poly.project_id] = BurnSummary(
            bool(np.any(burned_any[mask.values == 1.0])),
            float(max(fracs)) if fracs else float("nan"),
            cumulative,
        )
    return out


def project_labels(fire_rasters: dict, polygons, window) -> dict[str, int]:
    """1 when any fire was observed inside the project during ``window``."""
    return {pid: int(s.any_fire) for pid, s in burned_fraction_report(fire_rasters, polygons, window).items()}


class KbdiLogistic:
    """Two-parameter logistic regression on normalized KBDI alone (the weather-only baseline)."""

    def __init__(self, intercept=0.0, slope=0.0):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def fit(self, k, y, iterations=50, ridge=1e-8):
        k = np.asarray(k, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        x = np.column_stack([np.ones_like(k), k])
        w = np.zeros(2)
        for _ in range(iterations):
            p = 1.0 / (1.0 + np.exp(-(x @ w)))
            g = x.T @ (p - y)
            h = (x * (p * (1 - p))[:, None]).T @ x + ridge * np.eye(2)
            step = np.linalg.solve(h, g)
            w -= step
            if np.max(np.abs(step)) < 1e-12:
                break
        self.intercept, self.slope = float(w[0]), float(w[1])
        return self

    def predict(self, k):
        z = self.intercept + self.slope * np.asarray(k, dtype=np.float64)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def write_report_json(path, report: ComparisonReport | None, projects: list[dict], extra: dict | None = None) -> None:
    doc = {"summary": asdict(report) if report is not None else None, "projects": projects}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
