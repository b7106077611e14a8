"""Glue between the modules: from rasters to trained model to project scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SampleSet, SplitSpec, attach_features, derive_seed, label_samples, sample_locations, split
from .evaluation import KbdiLogistic, project_scores
from .features import FeatureRegistry, default_registry, feature_cube, fit_normalizer, normalize_kbdi, normalize_static
from .model import TrainConfig, TrainResult, explain, train


@dataclass
class TrainingData:
    registry: FeatureRegistry  # fitted on the training rows
    train: SampleSet
    validation: SampleSet

    def normalized(self, which: str):
        s = getattr(self, which)
        return normalize_static(s.static, self.registry), normalize_kbdi(s.kbdi), s.labels.astype(np.float64)


def build_training_data(layers, fire_rasters, kbdi_lookup, split_spec: SplitSpec, n_train: int, n_validation: int,
                        registry: FeatureRegistry | None = None) -> TrainingData:
    """Sample locations per split, label them for every year of the split and attach features.

    Train and validation locations are drawn independently from separate seed
    streams; every location is paired with every year of its split.
    """
    registry = registry or default_registry()
    cube, valid = feature_cube(layers, registry)
    landcover = layers["landcover"]
    sets = []
    for name, n, (y0, y1) in (("train", n_train, split_spec.train_years),
                              ("validation", n_validation, split_spec.validation_years)):
        years = [y for y in range(y0, y1 + 1) if y in fire_rasters]
        locs = sample_locations(landcover, n, derive_seed(split_spec.seed, f"sampling/{name}"))
        records = label_samples(locs, fire_rasters, years)
        tr, va = split(records, split_spec)
        sets.append(attach_features(tr if name == "train" else va, cube, valid, kbdi_lookup))
    fitted = fit_normalizer(sets[0].static, registry)
    return TrainingData(fitted, sets[0], sets[1])


def fit(data: TrainingData, config: TrainConfig) -> TrainResult:
    return train(data.normalized("train"), data.normalized("validation"), config)


def model_project_scores(params, registry, layers, kbdi_rasters: dict, polygons, years, reduction="mean") -> dict:
    """Per-project score averaged over ``years`` of yearly probability maps."""
    per_year = []
    for y in years:
        prob = explain(params, layers, registry, kbdi_rasters[y]).probability
        per_year.append(project_scores(prob, polygons, reduction))
    return {pid: float(np.mean([s[pid] for s in per_year])) for pid in per_year[0]}


def baseline_project_scores(baseline: KbdiLogistic, layers, kbdi_rasters: dict, polygons, years, reduction="mean") -> dict:
    """Same aggregation as :func:`model_project_scores` for the KBDI-only logistic baseline."""
    land = ~np.isnan(layers["landcover"].values)
    per_year = []
    for y in years:
        k = kbdi_rasters[y]
        p = np.where(land, baseline.predict(normalize_kbdi(k.values)), np.nan)
        per_year.append(project_scores(k.like(p), polygons, reduction))
    return {pid: float(np.mean([s[pid] for s in per_year])) for pid in per_year[0]}
