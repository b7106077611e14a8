"""Drought index on a synthetic summer.

A dry, hot spell pushes the index up; a wet week pulls it back down.
Run: python demos/01_kbdi.py
"""
import datetime as dt

import numpy as np

from wildfire_risk.kbdi import DailyWeatherSeries, annual_means, kbdi_series, kbdi_step

# One dry day at 90 F from q=400 with 40 in of annual rain.
q, _ = kbdi_step(400.0, 90.0, 0.0, 0.0, 40.0)
print(f"single dry day from 400: +{q - 400:.4f}")

days = 365
t = np.arange(days)
tmax = 60 + 30 * np.sin((t - 100) / 365 * 2 * np.pi)  # deg F, peaks in July
rain = np.zeros(days)
rain[::9] = 0.4
rain[200:207] = 1.5  # a wet week in late July

series = kbdi_series(DailyWeatherSeries(dt.date(2021, 1, 1), tmax, rain, float(rain.sum())))
v = series.values
for label, day in (("1 Apr", 90), ("1 Jul", 181), ("19 Jul", 199), ("26 Jul", 206), ("1 Oct", 273)):
    print(f"{label:>7}: {v[day]:6.1f}")
print("annual mean:", {y: round(m, 1) for y, m in annual_means(series).items()})
