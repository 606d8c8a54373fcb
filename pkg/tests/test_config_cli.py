import csv
import json

import pytest

from fatiguenet import cli
from fatiguenet.config import config_from_dict, config_to_dict, parse_config, serialize_config
from fatiguenet.errors import InvalidConfigError

SMALL = {
    "synth": {"n_subjects": 4, "trials_per_borg": 1, "borg_sequence": [0, 5, 9]},
    "dsp": {"n_scales": 8, "n_time": 8},
    "train": {"epochs": 1, "batch_size": 8, "augment": False},
    "folds": {"k": 4},
}


def test_defaults_round_trip():
    cfg = parse_config(None)
    assert cfg.train.weights.alpha == 0.5 and cfg.train.weights.beta == 0.8
    assert config_from_dict(json.loads(serialize_config(cfg))) == cfg


def test_partial_config_fills_defaults():
    cfg = config_from_dict({"train": {"epochs": 25}})
    assert cfg.train.epochs == 25 and cfg.train.batch_size == 64
    assert config_to_dict(cfg)["synth"]["borg_sequence"] == list(range(11))


@pytest.mark.parametrize("data,msg", [
    ({"train": {"epoch": 3}}, "unknown config key 'train.epoch'"),
    ({"train": {"epochs": 0}}, "violates bound"),
    ({"train": {"epochs": 2.5}}, "must be an integer"),
    ({"train": {"optimizer": "lbfgs"}}, "not one of"),
    ({"train": {"lr_schedule": "step"}}, "not one of"),
    ({"train": {"weights": {"tau": 0}}}, "violates bound"),
    ({"dsp": {"f_max": 300.0}}, "f_max"),
    ({"synth": {"borg_sequence": [0, "5"]}}, "list of integers"),
    ({"paths": 3}, "expected an object"),
])
def test_invalid_configs(data, msg):
    with pytest.raises(InvalidConfigError, match=msg):
        config_from_dict(data)


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(InvalidConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidConfigError, match="malformed"):
        parse_config(bad)


def test_usage_errors_exit_2(capsys):
    assert cli.run_command([]) == 2
    assert cli.run_command(["train", "--fold", "x"]) == 2
    assert cli.run_command(["ablate"]) == 2          # --grid is required
    assert "usage" in capsys.readouterr().err


def test_stage_failure_exits_1(tmp_path, capsys):
    assert cli.run_command(["train", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("fatiguenet train: error:") and "\n" not in err


def test_bad_config_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"train": {"nope": 1}}')
    assert cli.run_command(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FATIGUENET_THREADS", "many")
    with pytest.raises(InvalidConfigError):
        cli._threads()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL))
    out = root / "run"
    for cmd in (["synth"], ["preprocess"], ["train"], ["report"]):
        assert cli.run_command(cmd + ["--config", str(cfg), "--out", str(out)]) == 0, cmd
    return out, cfg


def test_pipeline_artifacts(run_dir):
    out, _ = run_dir
    rec = json.loads((out / "recordings" / "manifest.json").read_text())
    assert len(rec["trials"]) == 12
    seg_rows = list(csv.reader((out / "images" / "segmentation.csv").open()))
    assert seg_rows[0] == ["trial", "phase", "start_s", "end_s"]
    for k in range(4):
        assert (out / "results" / f"fold_{k}" / "epoch_log.csv").exists()
    manifest = json.loads((out / "manifest_train.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_sha256"]) == 64
    assert "results/metrics.json" in manifest["produced"]
    assert json.loads((out / "config_train.json").read_text())["train"]["epochs"] == 1


def test_report_has_fold_rows_and_average(run_dir):
    out, _ = run_dir
    rows = list(csv.reader((out / "results" / "report.csv").open()))
    assert rows[0][0] == "fold"
    assert [r[0] for r in rows[1:]] == ["Fold 1", "Fold 2", "Fold 3", "Fold 4", "Average"]


def test_single_fold_and_out_of_range(run_dir, capsys):
    out, cfg = run_dir
    assert cli.run_command(["train", "--fold", "1", "--seed", "5", "--config", str(cfg),
                            "--out", str(out)]) == 0
    assert json.loads((out / "manifest_train.json").read_text())["seed"] == 5
    assert cli.run_command(["train", "--fold", "9", "--config", str(cfg), "--out", str(out)]) == 1
    assert "out of range" in capsys.readouterr().err


def test_ablate_loss_grid(run_dir):
    out, cfg = run_dir
    assert cli.run_command(["ablate", "--grid", "loss", "--config", str(cfg),
                            "--out", str(out)]) == 0
    rows = list(csv.reader((out / "results" / "ablation_loss.csv").open()))
    assert rows[0] == ["model", "accuracy", "recall", "f1"]
    assert [r[0] for r in rows[1:]] == ["FCE", "FCE+DCE", "FCE+SC", "FCE+DCE+SC"]


def test_preprocess_with_workers_matches_serial(run_dir, tmp_path, monkeypatch):
    out, cfg = run_dir
    serial = (out / "images" / "samples.f32").read_bytes()
    monkeypatch.setenv("FATIGUENET_THREADS", "2")
    assert cli.run_command(["preprocess", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "images" / "samples.f32").read_bytes() == serial
