"""Static feature vector of one cell in a synthetic landscape.

Run: python demos/02_features.py
"""
import numpy as np

from wildfire_risk.dataset import WorldSpec, generate_synthetic_world
from wildfire_risk.features import assemble_features, default_registry

world = generate_synthetic_world(WorldSpec(rows=32, cols=32, n_projects=10), seed=1)
reg = default_registry()
print(f"{reg.total_static} static channels")

row, col = 16, 16
fv = assemble_features((row, col), world.layers, reg, world.kbdi_lookup(row, col, world.years[0]))
x = fv.static_features
start = 0
for group in ("one-hot land cover", "neighbourhood fractions", "bioclimate", "topography", "human", "position"):
    n = {"one-hot land cover": 6, "neighbourhood fractions": 18, "bioclimate": 19,
         "topography": 6, "human": 3, "position": 2}[group]
    print(f"{group:>24}: {np.array2string(x[start:start + n], precision=2, max_line_width=200)}")
    start += n
print(f"{'annual KBDI':>24}: {fv.kbdi_annual_mean:.1f}")
