import csv
import json

import numpy as np
import pytest

from sakdn.cli import main
from sakdn.config import PRESETS, RunConfig, Schedule, preset, synthetic_default
from sakdn.errors import ConfigError

# a small but complete synthetic run keeps the CLI tests quick
TINY = {
    "synthetic": {"num_classes": 2, "samples_per_class": 12, "window": 16, "num_frames": 2, "frame_side": 16},
    "teacher": {"channels": [4, 4, 4, 4, 4], "side": 16, "hidden": 8, "embed_dim": 6, "num_classes": 2},
    "student": {"channels": [4, 4, 4, 4, 8], "side": 16, "num_frames": 2, "hidden": 8, "embed_dim": 6,
                "num_classes": 2},
    "embedding_dim": 6,
    "teacher_schedule": {"batch": 8, "lr": 0.05, "decay_ratio": 0.5, "decay_interval": 50, "iters": 3,
                         "momentum": 0.9, "clip_norm": 1.0},
    "student_schedule": {"batch": 8, "lr": 0.05, "decay_ratio": 0.5, "decay_interval": 50, "iters": 3,
                         "momentum": 0.9, "clip_norm": 1.0},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def write_csv(path, values):
    path.write_text("t,x,y,z\n" + "".join(f"{i},{a},{b},{c}\n" for i, (a, b, c) in enumerate(values)))
    return path


def test_encode_counts_and_reproducibility(tmp_path, capsys):
    rng = np.random.default_rng(0)
    src = write_csv(tmp_path / "acc.csv", rng.standard_normal((10, 3)))
    for out in ("a", "b"):
        assert main(["encode", str(src), "--window", "4", "--stride", "2", "--out", str(tmp_path / out)]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["images"]) == 4
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len([f for f in files if f.suffix == ".tnsr"]) == 4
    for f in files:
        if f.name != "run_meta.json":
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_encode_constant_window_fails(tmp_path, capsys):
    vals = np.column_stack([np.ones(6), np.arange(6.0), np.arange(6.0)])
    src = write_csv(tmp_path / "flat.csv", vals)
    assert main(["encode", str(src), "--window", "4", "--out", str(tmp_path / "o")]) == 1
    assert "flat:0" in capsys.readouterr().err
    assert main(["encode", str(src), "--window", "4", "--on-constant", "zeros", "--out", str(tmp_path / "o")]) == 0


def test_train_eval_viz_flow(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    common = ["--config", str(tiny_config), "--seed", "7", "--out", str(out)]
    assert main(["train", "teachers", *common, "--iters", "4"]) == 0
    metrics = json.loads((out / "teachers" / "metrics.json").read_text())
    assert set(metrics["accuracy"]) == {"acc", "gyro"}
    assert main(["train", "student", *common, "--alpha", "0.1", "--beta", "1", "--gamma", "1", "--temp", "4"]) == 0
    lines = (out / "student" / "losses.jsonl").read_text().splitlines()
    assert len(lines) == 3
    first = json.loads(lines[0])
    assert all(first[k] > 0 for k in ("ce", "soft_target", "gsdm", "semantic_preserve"))
    capsys.readouterr()

    assert main(["eval", *common]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert 0 <= ev["student"] <= 1 and set(ev["teachers"]) == {"acc", "gyro"}

    from sakdn.data import SyntheticTaskSpec, generate_synthetic

    spec = SyntheticTaskSpec(**{**TINY["synthetic"], "seed": 7})
    ids = [s.sample_id for s in generate_synthetic(spec).test[:2]]
    assert main(["viz", *common, "--ids", *ids]) == 0
    viz = out / "viz"
    for sid in ids:
        assert sorted(p.name for p in (viz / "test" / sid).glob("*.pgm")) == [f"s{i}.pgm" for i in range(1, 6)]
        assert (viz / "test" / sid / "heatmaps.png").exists()
    with open(viz / "losses.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "ce", "st", "gsdm", "sp", "total"] and len(rows) == 1 + 3
    assert (viz / "losses.png").exists()
    assert "started_utc" in (viz / "run_meta.json").read_text()
    assert "utc" not in (out / "student" / "losses.jsonl").read_text()

    capsys.readouterr()
    assert main(["viz", *common, "--ids", "nope"]) == 1
    assert "8 ids available" in capsys.readouterr().err


def test_zero_weights_total_equals_ce(tmp_path, tiny_config):
    out = tmp_path / "run"
    common = ["--config", str(tiny_config), "--out", str(out)]
    assert main(["train", "teachers", *common]) == 0
    assert main(["train", "student", *common, "--alpha", "0", "--beta", "0", "--gamma", "0"]) == 0
    for line in (out / "student" / "losses.jsonl").read_text().splitlines():
        r = json.loads(line)
        assert r["total"] == r["ce"]


def test_training_logs_are_reproducible(tmp_path, tiny_config):
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "teachers", "--config", str(tiny_config), "--out", str(out)]) == 0
        logs.append((out / "teachers" / "losses.jsonl").read_bytes())
    assert logs[0] == logs[1]


def test_student_without_teachers_is_a_validation_error(tmp_path, tiny_config, capsys):
    assert main(["train", "student", "--config", str(tiny_config), "--out", str(tmp_path / "none")]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_bad_config_values(tmp_path, capsys):
    assert main(["train", "teachers", "--synthetic", "nope"]) == 1
    assert main(["train", "teachers", "--temp", "0", "--out", str(tmp_path)]) == 1
    assert main(["train", "teachers", "--embedding", "glove", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    assert main(["train", "teachers", "--config", str(bad)]) == 1


def test_verify_exit_codes(capsys):
    assert main(["verify", "--check", "slope_denominator_guard"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["checks"][0]["status"] == "pass"
    assert main(["verify", "--check", "slope_denominator_guard", "--slope-epsilon", "0"]) == 3


def test_presets_and_config_round_trip(tmp_path):
    for name in PRESETS:
        cfg = preset(name, seed=3)
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
    utd = preset("utd")
    assert utd.teacher_schedule == Schedule(16, 0.0002, 0.5, 50, 100)
    assert (utd.weights.alpha, utd.weights.beta, utd.weights.gamma, utd.weights.temperature) == (0.1, 1.0, 1.0, 4.0)
    assert preset("berkeley").weights.beta == 0.1
    cfg = synthetic_default(5)
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    cfg.validate()
    with pytest.raises(ConfigError):
        RunConfig(graph_norm="other").validate()


def test_verify_unknown_check(capsys):
    assert main(["verify", "--check", "nope"]) == 1
    assert "unknown check" in capsys.readouterr().err
