"""
Keetch-Byram Drought Index.

The index is a soil-moisture deficit in hundredths of an inch, from 0
(saturated) to 800. Each day first absorbs net rainfall, then adds a drying
increment driven by the day's maximum temperature and the site's mean annual
rainfall (Keetch & Byram, 1968). Internal units are degrees Fahrenheit and
inches.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, RangeError

KBDI_MAX = 800.0
RAIN_THRESHOLD_IN = 0.20


def celsius_to_fahrenheit(t_c):
    return t_c * 9.0 / 5.0 + 32.0


def mm_to_inches(mm):
    return mm / 25.4


@dataclass(frozen=True)
class DailyWeatherSeries:
    start_date: dt.date
    tmax: np.ndarray  # degrees F
    precip: np.ndarray  # inches
    annual_rainfall_normal: float  # inches

    def __post_init__(self):
        tmax = np.asarray(self.tmax, dtype=np.float64)
        precip = np.asarray(self.precip, dtype=np.float64)
        if tmax.ndim != 1 or tmax.shape != precip.shape or len(tmax) == 0:
            raise DomainError("tmax and precip must be nonempty 1-D arrays of equal length")
        if np.any(precip < 0):
            raise DomainError("precipitation must be nonnegative")
        if not self.annual_rainfall_normal > 0:
            raise DomainError("annual rainfall normal must be positive")
        object.__setattr__(self, "tmax", tmax)
        object.__setattr__(self, "precip", precip)

    def __len__(self):
        return len(self.tmax)


@dataclass(frozen=True)
class KbdiSeries:
    start_date: dt.date
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]


def kbdi_step(q_prev, tmax_f, rain_in, rain_carry, annual_rain):
    """Advance the index by one day.

    Returns ``(q_next, rain_carry_next)``. ``rain_carry`` is how much of the
    current run of wet days has already gone into the 0.20 in interception
    threshold; it resets on a dry day.
    """
    for name, x in (("q", q_prev), ("tmax", tmax_f), ("rain", rain_in),
                    ("carry", rain_carry), ("annual rain", annual_rain)):
        if not math.isfinite(x):
            raise DomainError(f"non-finite {name}: {x}")
    if not 0.0 <= q_prev <= KBDI_MAX:
        raise DomainError(f"q must lie in [0, 800], got {q_prev}")
    if rain_in < 0.0:
        raise DomainError(f"negative rainfall {rain_in}")
    if not 0.0 <= rain_carry <= RAIN_THRESHOLD_IN:
        raise DomainError(f"rain carry must lie in [0, 0.20], got {rain_carry}")
    if annual_rain <= 0.0:
        raise DomainError(f"annual rainfall must be positive, got {annual_rain}")

    q = q_prev
    if rain_in > 0.0:
        room = RAIN_THRESHOLD_IN - rain_carry
        if rain_in > room:
            q = max(q - 100.0 * (rain_in - room), 0.0)
            carry = RAIN_THRESHOLD_IN
        else:
            carry = min(rain_carry + rain_in, RAIN_THRESHOLD_IN)
    else:
        carry = 0.0

    dq = 1e-3 * (KBDI_MAX - q) * (0.968 * math.exp(0.0486 * tmax_f) - 8.30) / (
        1.0 + 10.88 * math.exp(-0.0441 * annual_rain)
    )
    dq = max(dq, 0.0)
    return min(max(q + dq, 0.0), KBDI_MAX), carry


def kbdi_series(weather: DailyWeatherSeries, q0: float = 0.0) -> KbdiSeries:
    """Daily index for every day of ``weather``; value i already includes day i."""
    if not 0.0 <= q0 <= KBDI_MAX:
        raise DomainError(f"q0 must lie in [0, 800], got {q0}")
    out = np.empty(len(weather))
    q, carry = float(q0), 0.0
    annual = float(weather.annual_rainfall_normal)
    for i, (t, r) in enumerate(zip(weather.tmax.tolist(), weather.precip.tolist())):
        q, carry = kbdi_step(q, t, r, carry, annual)
        out[i] = q
    return KbdiSeries(weather.start_date, out)


def annual_mean_kbdi(series: KbdiSeries, year: int) -> float:
    start = series.start_date
    first = max((dt.date(year, 1, 1) - start).days, 0)
    last = min((dt.date(year, 12, 31) - start).days, len(series) - 1)
    if last < first:
        raise RangeError(f"series starting {start} with {len(series)} days does not cover {year}")
    return float(np.mean(series.values[first:last + 1]))


def annual_means(series: KbdiSeries) -> dict[int, float]:
    """Annual mean for every calendar year the series touches."""
    end = series.start_date + dt.timedelta(days=len(series) - 1)
    return {y: annual_mean_kbdi(series, y) for y in range(series.start_date.year, end.year + 1)}


def read_weather_csv(path, imperial=False, annual_rainfall_normal=None) -> DailyWeatherSeries:
    """Load a daily weather CSV.

    Metric files carry ``date,tmax_c,precip_mm``; imperial files
    ``date,tmax_f,precip_in``. Without an explicit ``annual_rainfall_normal``
    the series' own mean annual total is used.
    """
    cols = ("tmax_f", "precip_in") if imperial else ("tmax_c", "precip_mm")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in ("date",) + cols):
            raise FormatError(f"{path}: expected header date,{cols[0]},{cols[1]}")
        dates, tmax, precip = [], [], []
        for row in reader:
            dates.append(dt.date.fromisoformat(row["date"]))
            tmax.append(float(row[cols[0]]))
            precip.append(float(row[cols[1]]))
    if not dates:
        raise FormatError(f"{path}: no rows")
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise FormatError(f"{path}: dates not contiguous at {a} -> {b}")
    tmax = np.array(tmax)
    precip = np.array(precip)
    if not imperial:
        tmax = celsius_to_fahrenheit(tmax)
        precip = mm_to_inches(precip)
    if annual_rainfall_normal is None:
        annual_rainfall_normal = float(precip.sum()) * 365.25 / len(precip)
    return DailyWeatherSeries(dates[0], tmax, precip, annual_rainfall_normal)


def write_weather_csv(path, start_date, tmax_c, precip_mm) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "tmax_c", "precip_mm"])
        for i, (t, p) in enumerate(zip(tmax_c, precip_mm)):
            w.writerow([(start_date + dt.timedelta(days=i)).isoformat(), repr(float(t)), repr(float(p))])


def write_kbdi_csv(path, series: KbdiSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "kbdi"])
        for d, v in zip(series.dates(), series.values.tolist()):
            w.writerow([d.isoformat(), repr(v)])
