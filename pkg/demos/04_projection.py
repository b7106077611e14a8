"""Project fire risk under three warming pathways with a monotone drought head.

Run: python demos/04_projection.py
"""
import numpy as np

from wildfire_risk.dataset import SplitSpec, WorldSpec, generate_synthetic_world
from wildfire_risk.model import NONNEG_BETA1, TrainConfig
from wildfire_risk.pipeline import build_training_data, fit
from wildfire_risk.projection import ensemble_change, project_scenario, synthetic_ensembles

world = generate_synthetic_world(WorldSpec(rows=32, cols=32, n_years=8, n_projects=30), seed=2)
data = build_training_data(world.layers, world.fire, world.kbdi_lookup,
                           SplitSpec((2001, 2005), (2006, 2008), seed=2), 400, 300)
params = fit(data, TrainConfig(seed=2, epochs=30, head_constraint=NONNEG_BETA1)).params

ensembles = synthetic_ensembles(world.kbdi_annual, range(2001, 2101), n_members=8, seed=2)
means = []
for scenario, ens in ensembles.items():
    res = project_scenario(params, world.layers, data.registry, ens, world.polygons, world.stations)
    ch = ensemble_change(res, (2010, 2021), 2090)
    i = res.years.tolist().index(2090)
    means.append(res.mean)
    print(f"{scenario}: 2090 mean p={res.mean[i]:.4f} [{res.p16[i]:.4f}, {res.p84[i]:.4f}]  "
          f"change vs 2010-2021 {ch.mean:+.1%} (p16 {ch.p16:+.1%}, p84 {ch.p84:+.1%})")
# with a nonnegative drought slope, a hotter pathway can only raise the ensemble mean
print("warmer pathways never lower the mean:", bool(np.all(np.diff(means, axis=0) >= 0)))
