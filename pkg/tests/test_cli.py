import json

import pytest

from smcforge.cli import main
from smcforge.pipeline import RunConfig, bundled_config, load_config

TINY = {
    "sim": {"grid": {"width": 8, "height": 8}, "n_sites": 6, "days": 120, "seed": 2},
    "ae": {"stem_channels": [4, 6], "hidden": 4, "T": 4, "K": 2},
    "lstm": {"hidden": 6, "T": 4, "K": 2, "residual": True},
    "train": {"seed": 0, "ae": {"epochs": 1, "batch_size": 8}, "lstm": {"epochs": 1, "batch_size": 16}},
    "eval": {"fractions": [0.5, 1.0], "seeds": [0, 1]},
    "paths": {"workdir": "work"},
}


def write_config(tmp_path, doc=TINY, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def manifest(tmp_path, command, workdir="work"):
    return json.loads((tmp_path / workdir / "manifests" / f"{command}.json").read_text())


def test_full_pipeline_and_rerun_hashes(tmp_path):
    cfg = str(write_config(tmp_path))
    for cmd in ("simulate", "train", "predict", "evaluate", "compare", "ndvi-map"):
        assert main([cmd, "--config", cfg]) == 0, cmd
    first = {c: manifest(tmp_path, c) for c in ("simulate", "train", "predict", "evaluate", "compare", "ndvi-map")}
    work = tmp_path / "work"
    assert (work / "models" / "ae.bin").exists() and (work / "models" / "lstm.bin").exists()
    assert list((work / "predict").glob("ae_*_d2.png"))
    assert (work / "eval" / "report.csv").read_text().startswith("model,fraction,seed,horizon")
    assert list((work / "ndvi").glob("ndvi_*.png"))
    assert set(first["train"]["inputs"]) >= {"world/scenes.smc1", "world/sensors.csv"}
    for cmd in first:
        assert main([cmd, "--config", cfg]) == 0
        assert manifest(tmp_path, cmd) == first[cmd], cmd
        assert "time" not in json.dumps(first[cmd]).lower()


def test_predict_before_train(tmp_path, capsys):
    cfg = str(write_config(tmp_path))
    assert main(["simulate", "--config", cfg]) == 0
    assert main(["predict", "--config", cfg]) == 1
    assert "run train first" in capsys.readouterr().err


def test_train_before_simulate(tmp_path, capsys):
    assert main(["train", "--config", str(write_config(tmp_path))]) == 1
    assert "run simulate first" in capsys.readouterr().err


def test_seed_and_workdir_overrides(tmp_path):
    cfg = str(write_config(tmp_path))
    assert main(["simulate", "--config", cfg, "--workdir", str(tmp_path / "other")]) == 0
    assert main(["train", "--config", cfg, "--workdir", str(tmp_path / "other"), "--seed", "7", "--model", "lstm"]) == 0
    m = manifest(tmp_path, "train", "other")
    assert m["seeds"]["train"] == 7
    assert set(m["outputs"]) == {"models/stats.json", "models/lstm.json", "models/lstm.bin", "models/lstm_trace.json"}
    assert not (tmp_path / "work").exists()


def test_validation_errors_exit_1(tmp_path, capsys):
    bad = dict(TINY, extra={"x": 1})
    assert main(["simulate", "--config", str(write_config(tmp_path, bad))]) == 1
    assert "extra" in capsys.readouterr().err
    bad = dict(TINY, lstm={"hidden": 4, "hiden": 5})
    assert main(["simulate", "--config", str(write_config(tmp_path, bad))]) == 1
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 1


def test_world_from_another_config_is_rejected(tmp_path, capsys):
    cfg = str(write_config(tmp_path))
    assert main(["simulate", "--config", cfg]) == 0
    other = dict(TINY, sim=dict(TINY["sim"], seed=9))
    assert main(["train", "--config", str(write_config(tmp_path, other, "other.json"))]) == 1
    assert "different sim config" in capsys.readouterr().err


def test_io_errors_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    assert main(["simulate", "--config", str(write_config(tmp_path)), "--workdir", str(blocker / "sub")]) == 2


def test_bundled_desk_config_parses():
    cfg, root = load_config(bundled_config("desk"))
    assert cfg.sim.grid.shape == (16, 16) and cfg.sim.n_sites == 20 and cfg.sim.n_regions == 3
    assert cfg.sim.days == 730
    assert RunConfig.from_json(json.loads(bundled_config("desk").read_text())) .to_json()["sim"] == cfg.sim.to_json()
