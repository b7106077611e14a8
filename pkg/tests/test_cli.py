import json
from pathlib import Path

import numpy as np
import pytest

from wildfire_risk.cli import COMMANDS, load_config, main
from wildfire_risk.errors import ConfigError
from wildfire_risk.raster_store import read_raster

SMALL = Path(__file__).resolve().parents[1] / "configs" / "small.json"
CHAIN = ("synthgen", "kbdi", "train", "predict", "validate", "explain", "project")


def run_chain(out, config=SMALL, commands=CHAIN):
    for cmd in commands:
        assert main([cmd, "--config", str(config), "--out", str(out)]) == 0, cmd


def last_error(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_chain(out)
    return out


def test_every_command_writes_a_manifest(chain):
    for cmd in CHAIN:
        m = json.loads((chain / cmd / "manifest.json").read_text())
        assert m["command"] == cmd and m["seed"] == 7
        assert len(m["config_sha256"]) == 64 and m["toolkit_version"]
        assert m["outputs"]
    assert set(CHAIN) == set(COMMANDS)


def test_kbdi_outputs_match_inputs(chain):
    weather = sorted((chain / "synthgen" / "weather").glob("*.csv"))
    for w in weather:
        out = chain / "kbdi" / w.name
        assert len(out.read_text().splitlines()) == len(w.read_text().splitlines())
    assert (chain / "kbdi" / "annual.csv").read_text().startswith("year,location_id,kbdi_mean\n")


def test_validate_report_schema(chain):
    doc = json.loads((chain / "validate" / "report.json").read_text())
    s = doc["summary"]
    assert set(s) >= {"auc_model", "auc_benchmark", "delta"}
    assert s["delta"] == pytest.approx(s["auc_model"] - s["auc_benchmark"])
    assert doc["benchmark"] == "kbdi_only_logistic" and doc["window"] == [2004, 2006]


def test_validate_with_benchmark_csv(chain, tmp_path):
    ids = [p["project_id"] for p in json.loads((chain / "validate" / "report.json").read_text())["projects"]]
    bench = tmp_path / "bench.csv"
    bench.write_text("project_id,score\n" + "".join(f"{pid},{i / len(ids)}\n" for i, pid in enumerate(ids)))
    cfg = json.loads(SMALL.read_text())
    cfg["paths"] = {k: str(chain / "synthgen" / v) for k, v in
                    (("layers", "layers"), ("fire", "fire"), ("polygons", "polygons.json"), ("locations", "stations.pyr"))}
    cfg["paths"].update(kbdi_annual=str(chain / "kbdi" / "annual.csv"), model=str(chain / "train" / "model.json"),
                        registry=str(chain / "train" / "registry.json"), benchmark="bench.csv")
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["validate", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "validate" / "report.json").read_text())
    assert doc["benchmark"] == "bench.csv"
    assert {"auc_model", "auc_benchmark", "delta"} <= set(doc["summary"])


def test_explain_rasters_readable(chain):
    b0 = read_raster(chain / "explain" / "beta0.pyr")
    b1 = read_raster(chain / "explain" / "beta1.pyr")
    lc = read_raster(chain / "synthgen" / "layers" / "landcover.pyr")
    assert b0.same_geometry(lc) and b1.same_geometry(lc)
    assert np.array_equal(np.isnan(b0.values), np.isnan(lc.values))


def test_predict_probabilities(chain):
    (f,) = (chain / "predict").glob("probability_*.pyr")
    p = read_raster(f).values
    ok = ~np.isnan(p)
    assert ok.any() and np.all((p[ok] > 0) & (p[ok] < 1))


def test_projection_outputs(chain):
    lines = (chain / "project" / "projection.csv").read_text().splitlines()
    assert lines[0] == "scenario,year,mean,p16,p84,smoothed_mean"
    assert len(lines) == 1 + 3 * 61
    for row in lines[1:]:
        _, _, _, lo, hi, _ = row.split(",")
        assert float(lo) <= float(hi)
    assert len((chain / "project" / "changes.csv").read_text().splitlines()) == 1 + 3 * 2


def test_chain_is_byte_reproducible(chain, tmp_path):
    run_chain(tmp_path)
    a = {p.relative_to(chain): p.read_bytes() for p in chain.rglob("*") if p.is_file() and p.name != "manifest.json"}
    b = {p.relative_to(tmp_path): p.read_bytes() for p in tmp_path.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert a.keys() == b.keys() and a == b


# failures -----------------------------------------------------------------


def test_schema_violation_rejected_before_writing(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "train": {"epochs": 0}}))
    out = tmp_path / "out"
    assert main(["synthgen", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    err = last_error(capsys)
    assert err["exit_code"] == 2 and err["error"] == "ConfigError" and "epochs" in err["message"]


@pytest.mark.parametrize("doc", [
    {"schema_version": 2},
    {"unknown": 1},
    {"split": {"train_years": [2001, 2012], "validation_years": [2010, 2021]}},
])
def test_config_errors(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_missing_and_malformed(tmp_path, capsys):
    assert main(["kbdi", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "x.json").write_text("{not json")
    assert main(["kbdi", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 2
    assert last_error(capsys)["exit_code"] == 2


def test_missing_upstream_artifact(tmp_path, capsys):
    assert main(["train", "--config", str(SMALL), "--out", str(tmp_path)]) == 3
    err = last_error(capsys)
    assert err["error"] == "DependencyError" and "landcover.pyr" in err["message"]
    assert not (tmp_path / "train").exists()


def test_training_divergence_exit_code(chain, tmp_path, capsys):
    cfg = json.loads(SMALL.read_text())
    cfg["train"]["learning_rate"] = 1e300
    cfg["train"]["epochs"] = 3
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    out = tmp_path / "o"
    for cmd in ("synthgen", "kbdi"):
        assert main([cmd, "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 0
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 4
    assert last_error(capsys)["error"] == "TrainingError"


def test_seed_flag_overrides_config(tmp_path):
    assert main(["synthgen", "--config", str(SMALL), "--seed", "99", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "synthgen" / "manifest.json").read_text())["seed"] == 99


def test_bad_flags():
    assert main(["nonsense"]) == 2
    assert main(["kbdi", "--threads", "0"]) == 2
    assert main(["kbdi", "--seed", "-1"]) == 2
