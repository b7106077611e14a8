"""
Command-line entry point.

Every subcommand writes into ``<out>/<command>/`` and records a
``manifest.json`` there. Input paths default to the outputs of the upstream
commands under the same ``--out``, so a bare run chains::

    wildfire-risk synthgen --out run
    wildfire-risk kbdi --out run
    wildfire-risk train --out run
    wildfire-risk validate --out run

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
training error. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dataset import (
    SplitSpec,
    WorldSpec,
    derive_seed,
    generate_synthetic_world,
    load_fire_rasters,
    load_layers,
    read_samples_csv,
    write_samples_csv,
    write_world,
)
from .errors import ConfigError, DataError, DependencyError, FormatError, WildfireRiskError
from .evaluation import (
    KbdiLogistic,
    compare_models,
    project_labels,
    read_benchmark_csv,
    write_report_json,
    write_scores_csv,
)
from .features import FeatureRegistry, normalize_kbdi
from .kbdi import annual_means, kbdi_series, read_weather_csv, write_kbdi_csv
from .model import TrainConfig, explain, load_model, save_model, write_history_csv
from .pipeline import TrainingData, baseline_project_scores, build_training_data, fit, model_project_scores
from .projection import (
    SCENARIOS,
    ensemble_change,
    load_ensemble,
    project_scenario,
    read_member_csv,
    synthetic_ensembles,
    write_changes_csv,
    write_member_csv,
    write_projection_csv,
)
from .raster_store import RasterGrid, load_polygons, read_raster, write_raster

SCHEMA_VERSION = 1
COMMANDS = ("kbdi", "synthgen", "train", "predict", "validate", "project", "explain")

_year_range = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in (
                "registry", "layers", "weather", "fire", "polygons", "locations",
                "kbdi_annual", "ensembles", "model", "benchmark", "train_samples",
            )},
        },
        "kbdi": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"imperial": {"type": "boolean"}, "q0": {"type": "number", "minimum": 0, "maximum": 800}},
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"train_years": _year_range, "validation_years": _year_range},
        },
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_train": {"type": "integer", "minimum": 1},
                "n_validation": {"type": "integer", "minimum": 1},
                "negative_keep_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "patience": {"type": "integer", "minimum": 1},
                "head_constraint": {"enum": ["unconstrained", "nonneg_beta1"]},
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "slope": {"type": "number", "minimum": 0},
            },
        },
        "predict": {"type": "object", "additionalProperties": False, "properties": {"year": {"type": "integer"}}},
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"window": _year_range, "reduction": {"enum": ["mean", "max"]}},
        },
        "project": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scenarios": {"type": "array", "items": {"type": "string"}},
                "baseline_window": _year_range,
                "smoothing_window": {"type": "integer", "minimum": 1},
                "target_years": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "synthgen": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "integer", "minimum": 8},
                "cols": {"type": "integer", "minimum": 8},
                "first_year": {"type": "integer"},
                "n_years": {"type": "integer", "minimum": 4},
                "cell_size": {"type": "number", "exclusiveMinimum": 0},
                "station_block": {"type": "integer", "minimum": 1},
                "n_projects": {"type": "integer", "minimum": 0},
                "a": {"type": "number"}, "b": {"type": "number"}, "c": {"type": "number"}, "d": {"type": "number"},
                "ensemble_members": {"type": "integer", "minimum": 0, "maximum": 28},
                "ensemble_years": _year_range,
            },
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "paths": {},
    "kbdi": {"imperial": False, "q0": 0.0},
    "split": {"train_years": [2001, 2009], "validation_years": [2010, 2021]},
    "sampling": {"n_train": 900, "n_validation": 1350, "negative_keep_fraction": 1.0},
    "train": {},
    "predict": {},
    "validate": {"reduction": "mean"},
    "project": {"scenarios": list(SCENARIOS), "baseline_window": [2010, 2021], "smoothing_window": 10,
                "target_years": [2050, 2080]},
    "synthgen": {"ensemble_members": 28, "ensemble_years": [2000, 2100]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, seed=None) -> tuple[dict, Path]:
    """Validated config with defaults filled in; flags override the file."""
    raw, base_dir = {}, Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        base_dir = path.resolve().parent
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    try:
        SplitSpec(tuple(cfg["split"]["train_years"]), tuple(cfg["split"]["validation_years"]), cfg["seed"])
    except WildfireRiskError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, base_dir


class Run:
    """Resolved paths and helpers for one command invocation."""

    def __init__(self, command, cfg, base_dir, out):
        self.command = command
        self.cfg = cfg
        self.base_dir = base_dir
        self.out = Path(out)
        self.dir = self.out / command

    def path(self, key, default):
        p = self.cfg["paths"].get(key)
        return (self.base_dir / p) if p is not None else self.out / default

    def require(self, *paths):
        for p in paths:
            if not Path(p).exists():
                raise DependencyError(f"missing upstream artifact: {p}")

    def begin(self):
        self.dir.mkdir(parents=True, exist_ok=True)

    def manifest(self, threads, extra=None):
        canon = json.dumps(self.cfg, sort_keys=True, separators=(",", ":"))
        doc = {
            "command": self.command,
            "toolkit_version": __version__,
            "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
            "seed": self.cfg["seed"],
            "threads": threads,
            "created": dt.datetime.now(dt.timezone.utc).isoformat(),
            "outputs": sorted(str(p.relative_to(self.dir)) for p in self.dir.rglob("*")
                              if p.is_file() and p.name != "manifest.json"),
        }
        doc.update(extra or {})
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    # shared inputs

    def layers(self):
        d = self.path("layers", "synthgen/layers")
        self.require(d / "landcover.pyr")
        return load_layers(d)

    def fire(self):
        d = self.path("fire", "synthgen/fire")
        self.require(d)
        return load_fire_rasters(d)

    def polygons(self):
        p = self.path("polygons", "synthgen/polygons.json")
        self.require(p)
        return load_polygons(p)

    def locations(self):
        p = self.path("locations", "synthgen/stations.pyr")
        self.require(p)
        return read_raster(p)

    def kbdi_table(self):
        p = self.path("kbdi_annual", "kbdi/annual.csv")
        self.require(p)
        years, locs, arr = read_member_csv(p)
        return KbdiTable(years, locs, arr)

    def model(self):
        p = self.path("model", "train/model.json")
        r = self.path("registry", "train/registry.json")
        self.require(p, r)
        params, manifest = load_model(p)
        registry = FeatureRegistry.load(r)
        if manifest.get("registry_hash") and manifest["registry_hash"] != registry.digest():
            raise DataError(f"{r} does not match the registry the model was trained with")
        return params, registry


class KbdiTable:
    def __init__(self, years, locations, values):
        self.years, self.locations, self.values = list(years), list(locations), values
        self._yi = {y: i for i, y in enumerate(self.years)}
        self._li = {loc: j for j, loc in enumerate(self.locations)}

    def raster(self, location_index: RasterGrid, year: int) -> RasterGrid:
        if year not in self._yi:
            raise DataError(f"no annual KBDI for {year}")
        row = self.values[self._yi[year]]
        ids = location_index.values
        out = np.full(ids.shape, np.nan)
        ok = ~np.isnan(ids)
        try:
            out[ok] = row[[self._li[int(i)] for i in ids[ok]]]
        except KeyError as exc:
            raise DataError(f"location {exc.args[0]} has no KBDI series") from exc
        return location_index.like(out)

    def lookup(self, location_index: RasterGrid):
        def f(r, c, y):
            return float(self.values[self._yi[y], self._li[int(location_index.values[r, c])]])
        return f


# ---------------------------------------------------------------- commands


def cmd_synthgen(run: Run, args):
    cfg = run.cfg["synthgen"]
    spec_fields = {k: v for k, v in cfg.items() if k in WorldSpec.__dataclass_fields__}
    try:
        spec = WorldSpec(**spec_fields)
    except WildfireRiskError as exc:
        raise ConfigError(str(exc)) from exc
    run.begin()
    world = generate_synthetic_world(spec, derive_seed(run.cfg["seed"], "synthgen/world"))
    write_world(world, run.dir)
    n_members = cfg["ensemble_members"]
    if n_members:
        y0, y1 = cfg["ensemble_years"]
        ens = synthetic_ensembles(world.kbdi_annual, range(y0, y1 + 1), n_members,
                                  derive_seed(run.cfg["seed"], "synthgen/ensemble"))
        for sid, e in ens.items():
            d = run.dir / "ensemble" / sid
            d.mkdir(parents=True, exist_ok=True)
            for mid in e.member_ids:
                write_member_csv(d / f"{mid}.csv", e.years, e.location_ids, e.members[mid])
    run.manifest(args.threads, {"coefficients": spec.coefficients})


def cmd_kbdi(run: Run, args):
    wdir = run.path("weather", "synthgen/weather")
    run.require(wdir)
    files = sorted(wdir.glob("*.csv"))
    if not files:
        raise DependencyError(f"no weather CSVs in {wdir}")
    opts = run.cfg["kbdi"]
    series = {}
    for f in files:
        series[f.stem] = kbdi_series(read_weather_csv(f, imperial=opts["imperial"]), opts["q0"])
    run.begin()
    rows = []
    for loc, s in series.items():
        write_kbdi_csv(run.dir / f"{loc}.csv", s)
        for y, m in annual_means(s).items():
            rows.append((y, loc, m))
    numeric = all(loc.lstrip("-").isdigit() for loc in series)
    key = (lambda r: (r[0], int(r[1]))) if numeric else (lambda r: (r[0], r[1]))
    with open(run.dir / "annual.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "location_id", "kbdi_mean"])
        for y, loc, m in sorted(rows, key=key):
            w.writerow([y, loc, repr(float(m))])
    run.manifest(args.threads, {"locations": len(series)})


def _training_data(run: Run) -> TrainingData:
    cfg = run.cfg
    layers, fire, locs, table = run.layers(), run.fire(), run.locations(), run.kbdi_table()
    split = SplitSpec(tuple(cfg["split"]["train_years"]), tuple(cfg["split"]["validation_years"]),
                      derive_seed(cfg["seed"], "split"))
    s = cfg["sampling"]
    data = build_training_data(layers, fire, table.lookup(locs), split, s["n_train"], s["n_validation"])
    keep = s["negative_keep_fraction"]
    if keep < 1.0:
        u = np.random.default_rng(derive_seed(cfg["seed"], "sampling/negatives")).random(len(data.train))
        data.train = data.train.subset((data.train.labels == 1) | (u < keep))
    return data


def cmd_train(run: Run, args):
    cfg = run.cfg
    data = _training_data(run)
    tcfg = TrainConfig(**{**cfg["train"], "seed": derive_seed(cfg["seed"], "train") % 2**32,
                          **({"hidden": tuple(cfg["train"]["hidden"])} if "hidden" in cfg["train"] else {})})
    result = fit(data, tcfg)
    run.begin()
    data.registry.save(run.dir / "registry.json")
    save_model(result.params, run.dir / "model.json", data.registry.digest())
    write_history_csv(run.dir / "loss_history.csv", result.history)
    write_samples_csv(run.dir / "train.csv", data.train)
    write_samples_csv(run.dir / "validation.csv", data.validation)
    run.manifest(args.threads, {"best_epoch": result.best_epoch, "n_train": len(data.train),
                                "n_validation": len(data.validation)})


def cmd_predict(run: Run, args):
    params, registry = run.model()
    layers, locs, table = run.layers(), run.locations(), run.kbdi_table()
    year = run.cfg["predict"].get("year", table.years[-1])
    emap = explain(params, layers, registry, table.raster(locs, year))
    run.begin()
    write_raster(emap.probability, run.dir / f"probability_{year}.pyr")
    run.manifest(args.threads, {"year": year})


def cmd_validate(run: Run, args):
    cfg = run.cfg
    params, registry = run.model()
    layers, fire, polygons, locs, table = run.layers(), run.fire(), run.polygons(), run.locations(), run.kbdi_table()
    window = cfg["validate"].get("window", cfg["split"]["validation_years"])
    years = [y for y in range(window[0], window[1] + 1) if y in fire and y in table.years]
    if not years:
        raise DataError(f"no fire and KBDI data inside validation window {window}")
    window = (years[0], years[-1])
    reduction = cfg["validate"]["reduction"]
    kr = {y: table.raster(locs, y) for y in years}
    labels = project_labels(fire, polygons, window)
    model_scores = model_project_scores(params, registry, layers, kr, polygons, years, reduction)
    bench_path = cfg["paths"].get("benchmark")
    if bench_path is not None:
        bench_file = run.base_dir / bench_path
        run.require(bench_file)
        bench = read_benchmark_csv(bench_file)
        bench_name = bench_file.name
    else:
        samples = run.path("train_samples", "train/train.csv")
        run.require(samples)
        tr = read_samples_csv(samples)
        baseline = KbdiLogistic().fit(normalize_kbdi(tr.kbdi), tr.labels)
        bench = baseline_project_scores(baseline, layers, kr, polygons, years, reduction)
        bench_name = "kbdi_only_logistic"
    report = compare_models(model_scores, bench, labels)
    run.begin()
    write_scores_csv(run.dir / "model_scores.csv", model_scores)
    write_scores_csv(run.dir / "benchmark_scores.csv", bench)
    projects = [{"project_id": pid, "label": labels[pid], "model_score": model_scores[pid],
                 "benchmark_score": bench[pid]} for pid in sorted(labels)]
    write_report_json(run.dir / "report.json", report, projects,
                      {"benchmark": bench_name, "window": list(window), "reduction": reduction})
    run.manifest(args.threads)


def cmd_explain(run: Run, args):
    params, registry = run.model()
    layers = run.layers()
    emap = explain(params, layers, registry)
    run.begin()
    write_raster(emap.beta0, run.dir / "beta0.pyr")
    write_raster(emap.beta1, run.dir / "beta1.pyr")
    run.manifest(args.threads)


def cmd_project(run: Run, args):
    cfg = run.cfg["project"]
    params, registry = run.model()
    layers, polygons, locs = run.layers(), run.polygons(), run.locations()
    root = run.path("ensembles", "synthgen/ensemble")
    dirs = [root / s for s in cfg["scenarios"]]
    run.require(*dirs)
    results, changes = [], []
    for sid, d in zip(cfg["scenarios"], dirs):
        ens = load_ensemble(d, sid)
        res = project_scenario(params, layers, registry, ens, polygons, locs, cfg["smoothing_window"])
        results.append(res)
        for ty in cfg["target_years"]:
            changes.append(ensemble_change(res, tuple(cfg["baseline_window"]), ty))
    run.begin()
    write_projection_csv(run.dir / "projection.csv", results)
    write_changes_csv(run.dir / "changes.csv", changes)
    run.manifest(args.threads, {"baseline_window": cfg["baseline_window"]})


HANDLERS = {
    "kbdi": cmd_kbdi, "synthgen": cmd_synthgen, "train": cmd_train, "predict": cmd_predict,
    "validate": cmd_validate, "project": cmd_project, "explain": cmd_explain,
}


_HELP = {
    "kbdi": "daily drought index per weather CSV, plus annual means",
    "synthgen": "write a seeded synthetic world (layers, weather, fire, polygons, ensembles)",
    "train": "sample, normalize and train the risk network",
    "predict": "fire probability raster for one year",
    "validate": "project-level AUC against a KBDI-only or supplied benchmark",
    "project": "scenario ensemble projections and relative changes",
    "explain": "per-cell beta0 and beta1 rasters",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wildfire-risk", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", default="out", help="output root directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (recorded; computation is single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def _fail(exc: Exception, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": msg}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg, base_dir = load_config(args.config, args.seed)
        HANDLERS[args.command](Run(args.command, cfg, base_dir, args.out), args)
    except WildfireRiskError as exc:
        return _fail(exc, exc.exit_code)
    except (FileNotFoundError, PermissionError) as exc:
        return _fail(exc, 3)
    except (ValueError, KeyError) as exc:
        return _fail(FormatError(str(exc)), 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
