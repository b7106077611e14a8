"""Train the risk network on a synthetic world and compare it with a KBDI-only logistic baseline.

Fire in the synthetic world depends on land cover and topography as well
as drought, so a model that sees the landscape should rank projects better
than drought alone. Takes a few seconds.
Run: python demos/03_train_validate.py
"""
from wildfire_risk.dataset import SplitSpec, WorldSpec, generate_synthetic_world
from wildfire_risk.evaluation import KbdiLogistic, compare_models, project_labels
from wildfire_risk.features import normalize_kbdi
from wildfire_risk.model import TrainConfig
from wildfire_risk.pipeline import baseline_project_scores, build_training_data, fit, model_project_scores

world = generate_synthetic_world(WorldSpec(), seed=0)
data = build_training_data(world.layers, world.fire, world.kbdi_lookup,
                           SplitSpec((2001, 2009), (2010, 2021), seed=0), 900, 1350)
result = fit(data, TrainConfig(seed=0))
print(f"trained {len(result.history)} epochs, best validation loss at epoch {result.best_epoch}")

years = [2010, 2011, 2012]
kbdi = {y: world.kbdi_raster(y) for y in years}
labels = project_labels(world.fire, world.polygons, (2010, 2012))
baseline = KbdiLogistic().fit(normalize_kbdi(data.train.kbdi), data.train.labels)
report = compare_models(
    model_project_scores(result.params, data.registry, world.layers, kbdi, world.polygons, years),
    baseline_project_scores(baseline, world.layers, kbdi, world.polygons, years),
    labels,
)
print(f"{report.n_projects} projects, {report.n_positive} burned in 2010-2012")
print(f"project AUC  network {report.auc_model:.3f}   KBDI-only {report.auc_benchmark:.3f}")
