import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import kbdi_series_oracle, kbdi_step_oracle
from wildfire_risk.errors import DomainError, FormatError, RangeError
from wildfire_risk.kbdi import (
    DailyWeatherSeries,
    KbdiSeries,
    annual_mean_kbdi,
    annual_means,
    kbdi_series,
    kbdi_step,
    read_weather_csv,
    write_weather_csv,
)

temps = st.floats(-20.0, 125.0)
rains = st.one_of(st.just(0.0), st.floats(0.0, 4.0))
qs = st.floats(0.0, 800.0)
carries = st.floats(0.0, 0.2)
annuals = st.floats(2.0, 120.0)


def test_saturated_fixed_point():
    for t in (30.0, 60.0, 90.0, 115.0):
        assert kbdi_step(800.0, t, 0.0, 0.0, 40.0)[0] == 800.0


def test_wet_reset_on_cold_day():
    q, carry = kbdi_step(100.0, 40.0, 1.20, 0.0, 40.0)
    assert q == 0.0
    assert carry == 0.20


def test_hand_case_increment():
    # 1e-3 * 400 * (0.968 e^(4.374) - 8.30) / (1 + 10.88 e^(-1.764))
    q, _ = kbdi_step(400.0, 90.0, 0.0, 0.0, 40.0)
    assert q - 400.0 == pytest.approx(9.57, abs=0.01)
    assert q == pytest.approx(409.57, abs=0.01)
    assert q == kbdi_step_oracle(400.0, 90.0, 0.0, 0.0, 40.0)[0]


def test_small_rain_is_intercepted():
    q, carry = kbdi_step(300.0, 40.0, 0.15, 0.0, 40.0)
    assert q == 300.0 and carry == 0.15
    # next wet day only needs 0.05 more before the index drops
    q, carry = kbdi_step(300.0, 40.0, 0.25, 0.15, 40.0)
    assert q == pytest.approx(300.0 - 20.0)
    assert carry == 0.20


def test_dry_day_resets_carry():
    assert kbdi_step(300.0, 40.0, 0.0, 0.2, 40.0)[1] == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_inputs(bad):
    for args in ((bad, 80, 0, 0, 40), (100, bad, 0, 0, 40), (100, 80, bad, 0, 40),
                 (100, 80, 0, bad, 40), (100, 80, 0, 0, bad)):
        with pytest.raises(DomainError):
            kbdi_step(*args)


def test_out_of_range_inputs():
    with pytest.raises(DomainError):
        kbdi_step(-1.0, 80, 0, 0, 40)
    with pytest.raises(DomainError):
        kbdi_step(801.0, 80, 0, 0, 40)
    with pytest.raises(DomainError):
        kbdi_step(100, 80, -0.1, 0, 40)
    with pytest.raises(DomainError):
        kbdi_step(100, 80, 0, 0.3, 40)
    with pytest.raises(DomainError):
        kbdi_step(100, 80, 0, 0, 0.0)


@settings(max_examples=300, deadline=None)
@given(qs, temps, rains, carries, annuals)
def test_step_matches_oracle_and_stays_in_range(q, t, r, c, a):
    got = kbdi_step(q, t, r, c, a)
    assert got == kbdi_step_oracle(q, t, r, c, a)
    assert 0.0 <= got[0] <= 800.0
    assert 0.0 <= got[1] <= 0.2


@settings(max_examples=200, deadline=None)
@given(qs, temps, carries, annuals)
def test_dry_day_never_decreases(q, t, c, a):
    assert kbdi_step(q, t, 0.0, c, a)[0] >= q


@settings(max_examples=200, deadline=None)
@given(qs, temps, rains, rains, carries, annuals)
def test_antitone_in_rain(q, t, r1, r2, c, a):
    lo, hi = sorted((r1, r2))
    assert kbdi_step(q, t, hi, c, a)[0] <= kbdi_step(q, t, lo, c, a)[0]


@settings(max_examples=200, deadline=None)
@given(qs, temps, temps, rains, carries, annuals)
def test_monotone_in_temperature(q, t1, t2, r, c, a):
    lo, hi = sorted((t1, t2))
    assert kbdi_step(q, hi, r, c, a)[0] >= kbdi_step(q, lo, r, c, a)[0]


def weather(n, seed, start=dt.date(2001, 1, 1)):
    rng = np.random.default_rng(seed)
    tmax = rng.uniform(30.0, 110.0, n)
    precip = np.where(rng.random(n) < 0.3, rng.exponential(0.3, n), 0.0)
    return DailyWeatherSeries(start, tmax, precip, float(rng.uniform(10.0, 60.0)))


def test_cold_dry_series_stays_zero():
    w = DailyWeatherSeries(dt.date(2001, 1, 1), np.full(100, 40.0), np.zeros(100), 30.0)
    assert np.all(kbdi_series(w, 0.0).values == 0.0)


def test_series_equals_iterated_oracle_bit_for_bit():
    for seed in range(20):
        w = weather(365, seed)
        got = kbdi_series(w, 0.0).values.tolist()
        assert got == kbdi_series_oracle(w.tmax.tolist(), w.precip.tolist(), w.annual_rainfall_normal)


def test_series_length_and_alignment():
    w = weather(10, 3)
    s = kbdi_series(w, 150.0)
    assert len(s) == 10 and s.start_date == w.start_date
    assert s.values[0] == kbdi_step(150.0, w.tmax[0], w.precip[0], 0.0, w.annual_rainfall_normal)[0]


def test_persistent_rain_on_cold_days_drains_to_zero():
    n = 30
    w = DailyWeatherSeries(dt.date(2001, 1, 1), np.full(n, 40.0), np.full(n, 1.0), 40.0)
    v = kbdi_series(w, 800.0).values
    assert v.tolist() == kbdi_series_oracle([40.0] * n, [1.0] * n, 40.0, 800.0)
    # first day loses 80 points (0.20 in intercepted), then 100 per day
    assert v[0] == 720.0 and v[1] == 620.0
    first_zero = int(np.argmax(v == 0.0))
    assert first_zero == 8
    assert np.all(np.diff(v[:first_zero + 1]) < 0)
    assert np.all(v[first_zero:] == 0.0)


def test_persistent_rain_on_hot_days_settles_at_daily_increment():
    n = 30
    w = DailyWeatherSeries(dt.date(2001, 1, 1), np.full(n, 110.0), np.full(n, 1.0), 40.0)
    v = kbdi_series(w, 800.0).values
    assert v.tolist() == kbdi_series_oracle([110.0] * n, [1.0] * n, 40.0, 800.0)
    fixed = kbdi_step(0.0, 110.0, 1.0, 0.2, 40.0)[0]
    assert 0.0 < fixed < 100.0
    assert np.all(v[-10:] == fixed)


def test_q0_out_of_range():
    with pytest.raises(DomainError):
        kbdi_series(weather(5, 0), 900.0)


def test_weather_invariants():
    with pytest.raises(DomainError):
        DailyWeatherSeries(dt.date(2001, 1, 1), [80.0, 80.0], [0.0], 30.0)
    with pytest.raises(DomainError):
        DailyWeatherSeries(dt.date(2001, 1, 1), [80.0], [-0.1], 30.0)
    with pytest.raises(DomainError):
        DailyWeatherSeries(dt.date(2001, 1, 1), [80.0], [0.0], 0.0)
    with pytest.raises(DomainError):
        DailyWeatherSeries(dt.date(2001, 1, 1), [], [], 30.0)


def test_annual_mean_constant():
    s = KbdiSeries(dt.date(2003, 1, 1), np.full(365, 250.0))
    assert annual_mean_kbdi(s, 2003) == 250.0


def test_annual_mean_partial_coverage():
    s = KbdiSeries(dt.date(2003, 12, 30), np.array([100.0, 300.0, 5.0]))
    assert annual_mean_kbdi(s, 2003) == 200.0
    assert annual_mean_kbdi(s, 2004) == 5.0


def test_annual_mean_leap_year():
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 800, 366 + 365)
    s = KbdiSeries(dt.date(2004, 1, 1), vals)
    assert annual_mean_kbdi(s, 2004) == pytest.approx(sum(vals[:366].tolist()) / 366, rel=1e-14)
    assert annual_mean_kbdi(s, 2005) == pytest.approx(sum(vals[366:].tolist()) / 365, rel=1e-14)
    assert set(annual_means(s)) == {2004, 2005}


def test_annual_mean_uncovered_year():
    s = KbdiSeries(dt.date(2003, 1, 1), np.zeros(10))
    with pytest.raises(RangeError):
        annual_mean_kbdi(s, 2004)


def test_metric_csv_conversion(tmp_path):
    p = tmp_path / "w.csv"
    write_weather_csv(p, dt.date(2001, 1, 1), [0.0, 100.0], [25.4, 0.0])
    w = read_weather_csv(p, annual_rainfall_normal=30.0)
    assert w.tmax.tolist() == [32.0, 212.0]
    assert w.precip.tolist() == [1.0, 0.0]
    assert w.annual_rainfall_normal == 30.0


def test_imperial_csv_passes_through(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("date,tmax_f,precip_in\n2001-01-01,90.5,0.25\n2001-01-02,80,0\n")
    w = read_weather_csv(p, imperial=True)
    assert w.tmax.tolist() == [90.5, 80.0]
    assert w.precip.tolist() == [0.25, 0.0]
    # default normal: mean annual total of the series itself
    assert w.annual_rainfall_normal == pytest.approx(0.25 * 365.25 / 2)


def test_csv_errors(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("date,tmax_c\n2001-01-01,20\n")
    with pytest.raises(FormatError):
        read_weather_csv(p)
    p.write_text("date,tmax_c,precip_mm\n2001-01-01,20,1\n2001-01-03,20,1\n")
    with pytest.raises(FormatError):
        read_weather_csv(p)
