import math

import numpy as np
import pytest

from wildfire_risk.dataset import (
    SampleRecord,
    SplitSpec,
    WorldSpec,
    attach_features,
    derive_seed,
    downsample_negatives,
    eligible_mask,
    generate_synthetic_world,
    label_samples,
    load_fire_rasters,
    load_layers,
    read_samples_csv,
    sample_locations,
    split,
    write_samples_csv,
    write_world,
)
from wildfire_risk.errors import CapacityError, CoverageError, SpecError
from wildfire_risk.features import LandCoverClass, default_registry, feature_cube
from wildfire_risk.raster_store import RasterGrid, read_raster

AG = float(LandCoverClass.AGRICULTURE)


def test_derive_seed_is_stable_and_label_dependent():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert derive_seed(0, "a") != derive_seed(0, "b")
    assert derive_seed(1, "a") == derive_seed(0, "a") ^ 1
    assert 0 <= derive_seed(2**64 - 1, "x") < 2**64


# sampling -----------------------------------------------------------------


def test_all_agriculture_has_no_capacity():
    g = RasterGrid(np.full((5, 5), AG))
    with pytest.raises(CapacityError):
        sample_locations(g, 1, seed=0)


def test_sampling_is_deterministic():
    lc = RasterGrid(np.random.default_rng(0).integers(0, 6, (20, 20)).astype(float))
    assert sample_locations(lc, 30, 5) == sample_locations(lc, 30, 5)
    assert sample_locations(lc, 30, 5) != sample_locations(lc, 30, 6)


def test_exhaustion_returns_eligible_set():
    lc = np.random.default_rng(1).integers(0, 6, (10, 10)).astype(float)
    lc[0, :] = np.nan
    g = RasterGrid(lc)
    n = int(eligible_mask(g).sum())
    got = sample_locations(g, n, 3)
    assert len(set(got)) == n
    assert set(got) == {tuple(map(int, rc)) for rc in np.argwhere(eligible_mask(g))}
    with pytest.raises(CapacityError):
        sample_locations(g, n + 1, 3)


def test_sampling_respects_exclusions():
    rng = np.random.default_rng(2)
    lc = rng.integers(0, 6, (30, 30)).astype(float)
    lc[rng.random((30, 30)) < 0.2] = np.nan
    g = RasterGrid(lc)
    for seed in range(5):
        for r, c in sample_locations(g, 200, seed):
            v = lc[r, c]
            assert not math.isnan(v) and v != AG


def test_sampling_needs_positive_n():
    with pytest.raises(SpecError):
        sample_locations(RasterGrid(np.zeros((3, 3))), 0, 0)


# labeling -----------------------------------------------------------------


def fire_stack(years, shape=(4, 4), seed=0):
    rng = np.random.default_rng(seed)
    return {y: RasterGrid((rng.random(shape) < 0.3).astype(float)) for y in years}


def test_label_reads_burned_cell():
    fire = fire_stack([2020, 2021])
    v = fire[2021].values.copy()
    v[1, 2] = 1.0
    fire[2021] = fire[2021].like(v)
    recs = label_samples([(1, 2)], fire, [2021])
    assert recs == [SampleRecord(1, 2, 2021, 1)]


def test_nan_cell_year_is_dropped():
    fire = fire_stack([2020, 2021])
    v = fire[2020].values.copy()
    v[0, 0] = np.nan
    fire[2020] = fire[2020].like(v)
    recs = label_samples([(0, 0)], fire, [2020, 2021])
    assert [r.year for r in recs] == [2021]


def test_label_cardinality():
    years = list(range(2001, 2010))
    fire = fire_stack(years, (5, 5))
    locs = [(i // 5, i % 5) for i in range(10)]
    assert len(label_samples(locs, fire, years)) == 90


def test_missing_year_raster():
    with pytest.raises(CoverageError):
        label_samples([(0, 0)], fire_stack([2001]), [2001, 2002])


# split --------------------------------------------------------------------


def test_split_by_year():
    recs = [SampleRecord(0, 0, y, 0) for y in (2000, 2005, 2009, 2010, 2021, 2022)]
    train, val = split(recs, SplitSpec())
    assert [r.year for r in train] == [2005, 2009]
    assert [r.year for r in val] == [2010, 2021]


def test_split_is_partition():
    rng = np.random.default_rng(0)
    recs = [SampleRecord(int(rng.integers(10)), int(rng.integers(10)), int(y), int(rng.integers(2)))
            for y in rng.integers(1995, 2025, 500)]
    train, val = split(recs, SplitSpec())
    assert not set(map(id, train)) & set(map(id, val))
    assert all(2001 <= r.year <= 2009 for r in train)
    assert all(2010 <= r.year <= 2021 for r in val)
    assert len(train) + len(val) == sum(2001 <= r.year <= 2021 for r in recs)


@pytest.mark.parametrize("tr,va", [((2001, 2010), (2010, 2021)), ((2010, 2021), (2001, 2009)), ((2005, 2001), (2010, 2021))])
def test_bad_split_spec(tr, va):
    with pytest.raises(SpecError):
        SplitSpec(tr, va)


def test_downsample_keeps_positives():
    recs = [SampleRecord(0, i, 2001, int(i % 10 == 0)) for i in range(1000)]
    kept = downsample_negatives(recs, 0.2, 1)
    assert sum(r.label for r in kept) == 100
    assert 100 < len(kept) - 100 < 260
    assert downsample_negatives(recs, 1.0, 1) == recs


# sample sets --------------------------------------------------------------


def test_attach_features_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    shape = (6, 6)
    layers = {s: RasterGrid(rng.normal(size=shape)) for s in default_registry().layer_sources()}
    lc = rng.integers(0, 6, shape).astype(float)
    lc[0, 0] = np.nan
    layers["landcover"] = RasterGrid(lc)
    cube, valid = feature_cube(layers, default_registry())
    recs = [SampleRecord(0, 0, 2001, 1), SampleRecord(2, 3, 2001, 0), SampleRecord(2, 3, 2002, 1)]
    s = attach_features(recs, cube, valid, lambda r, c, y: 100.0 * (y - 2000) + r)
    assert len(s) == 2
    assert s.kbdi.tolist() == [102.0, 202.0]
    np.testing.assert_array_equal(s.static[0], cube[2, 3])
    write_samples_csv(tmp_path / "s.csv", s)
    header = (tmp_path / "s.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["row", "col", "year", "label", "kbdi_mean"] and header[-1] == "f53"
    back = read_samples_csv(tmp_path / "s.csv")
    for a in ("rows", "cols", "years", "labels", "kbdi", "static"):
        np.testing.assert_array_equal(getattr(back, a), getattr(s, a))
    assert back.records()[1].features.kbdi_annual_mean == 202.0


# synthetic world ----------------------------------------------------------

SMALL = dict(rows=24, cols=24, n_years=4, n_projects=5)


def test_world_spec_limits():
    with pytest.raises(SpecError):
        WorldSpec(rows=7)
    with pytest.raises(SpecError):
        WorldSpec(n_years=3)


def test_constant_probability_world():
    spec = WorldSpec(rows=40, cols=40, n_years=6, n_projects=0, a=0.0, b=0.0, c=0.0, d=0.0)
    w = generate_synthetic_world(spec, 11)
    labels = np.concatenate([w.fire[y].values.ravel() for y in w.years])
    labels = labels[~np.isnan(labels)]
    n = len(labels)
    assert abs(labels.mean() - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_fire_rises_across_kbdi_terciles():
    spec = WorldSpec(rows=48, cols=48, n_years=8, n_projects=0, a=-6.0, b=12.0, c=0.0, d=0.0)
    w = generate_synthetic_world(spec, 2)
    k = np.concatenate([w.kbdi_raster(y).values.ravel() for y in w.years])
    f = np.concatenate([w.fire[y].values.ravel() for y in w.years])
    ok = ~np.isnan(f)
    k, f = k[ok], f[ok]
    edges = np.quantile(k, [1 / 3, 2 / 3])
    rates = [f[k <= edges[0]].mean(), f[(k > edges[0]) & (k <= edges[1])].mean(), f[k > edges[1]].mean()]
    assert rates[0] < rates[1] < rates[2]


def test_labels_track_ground_truth():
    w = generate_synthetic_world(WorldSpec(rows=48, cols=48, n_years=6), 4)
    p = np.concatenate([w.probability[y].values.ravel() for y in w.years])
    f = np.concatenate([w.fire[y].values.ravel() for y in w.years])
    ok = ~np.isnan(p)
    p, f = p[ok], f[ok]
    sd = math.sqrt(np.sum(p * (1 - p))) / len(p)
    assert abs(f.mean() - p.mean()) <= 4 * sd


def test_world_contents():
    w = generate_synthetic_world(WorldSpec(**SMALL), 0)
    assert set(default_registry().layer_sources()) <= set(w.layers)
    assert w.kbdi_annual.shape == (4, 9)
    assert np.all((w.kbdi_annual >= 0) & (w.kbdi_annual <= 800))
    assert len(w.polygons) == 5
    lc = w.layers["landcover"].values
    for y in w.years:
        f = w.fire[y].values
        assert np.array_equal(np.isnan(f), np.isnan(lc))
        assert set(np.unique(f[~np.isnan(f)])) <= {0.0, 1.0}
    r, c = 13, 17
    assert w.kbdi_lookup(r, c, w.years[2]) == w.kbdi_raster(w.years[2]).values[r, c]


def test_world_bytes_are_deterministic(tmp_path):
    for d in ("a", "b"):
        write_world(generate_synthetic_world(WorldSpec(**SMALL), 9), tmp_path / d)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 30
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_world_reload(tmp_path):
    w = generate_synthetic_world(WorldSpec(**SMALL), 1)
    write_world(w, tmp_path)
    assert load_layers(tmp_path / "layers")["bio05"] == w.layers["bio05"]
    fire = load_fire_rasters(tmp_path / "fire")
    assert sorted(fire) == w.years and fire[w.years[0]] == w.fire[w.years[0]]
    assert read_raster(tmp_path / "stations.pyr") == w.stations
    with pytest.raises(CoverageError):
        load_fire_rasters(tmp_path / "nothing")
