import json

import pandas as pd
import pytest

from scripts.hopular_cli import main

SMALL_CONFIG = """[model]
embedding_dim = 4
n_blocks = 1
n_heads = 2
dropout = 0, 0, 0

[training]
epochs = 3
patience = 3
"""


@pytest.fixture
def synthetic(tmp_path):
    assert main(["make-synthetic", "--kind", "separable", "--n-samples", "40", "--out-dir", str(tmp_path)]) == 0
    config = tmp_path / "small.ini"
    config.write_text(SMALL_CONFIG, encoding="utf-8")
    return str(tmp_path / "separable.csv"), str(tmp_path / "separable_schema.txt"), str(config)


def _train(data, schema, config, out_dir, seed=0):
    return main(["--seed", str(seed), "train", "--data", data, "--schema", schema, "--config", config,
                 "--out-dir", str(out_dir)])


def test_capacity_check_prints_constants(capsys):
    assert main(["capacity-check", "--beta", "1", "--K", "3", "--d", "20", "--p", "0.001"]) == 0
    out = capsys.readouterr().out
    values = {line.split("=")[0].strip(): float(line.split("=")[1]) for line in out.strip().splitlines()}
    assert 3.15 <= values["c"] <= 3.16
    assert values["N_min"] == pytest.approx(7.41, abs=0.05)


def test_capacity_condition_failure_exits_nonzero(capsys):
    assert main(["capacity-check", "--beta", "1", "--K", "1", "--d", "3", "--p", "0.001"]) == 1
    assert "error" in capsys.readouterr().err


def test_usage_errors_exit_with_two():
    assert main(["train", "--unknown-flag"]) == 2
    assert main([]) == 2


def test_retrieve(tmp_path, capsys):
    patterns = tmp_path / "patterns.csv"
    patterns.write_text("1,0\n0,1\n", encoding="utf-8")
    # một bước không đủ hội tụ nhưng vẫn là kết quả hợp lệ
    assert main(["retrieve", "--patterns", str(patterns), "--beta", "4", "--query", "0.9,0.1", "--max-iter", "1"]) == 0
    out = capsys.readouterr().out
    assert "xi_star     = 0.960" in out
    assert "converged   = False" in out
    assert main(["--seed", "3", "retrieve", "--random-d", "8", "--random-n", "3", "--radius", "3", "--beta", "8"]) == 0


def test_oracles_and_gradcheck():
    assert main(["oracle-nw", "--cases", "5"]) == 0
    assert main(["oracle-adaboost", "--cases", "5"]) == 0
    assert main(["gradcheck"]) == 0


def test_train_then_evaluate(synthetic, tmp_path, capsys):
    data, schema, config = synthetic
    out_dir = tmp_path / "run"
    assert _train(data, schema, config, out_dir) == 0
    for name in ("model.npz", "history.jsonl", "metrics.jsonl", "manifest.json", "split.txt"):
        assert (out_dir / name).exists(), name
    assert "knn1" in capsys.readouterr().out

    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 0 and manifest["command"] == "train"
    assert set(manifest["data"]) == {data, schema, config}
    assert len(pd.read_json(out_dir / "history.jsonl", lines=True)) == 3

    eval_dir = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(out_dir / "model.npz"), "--data", data,
                 "--baselines", "--out-dir", str(eval_dir)]) == 0
    trained = pd.read_json(out_dir / "metrics.jsonl", lines=True)
    evaluated = pd.read_json(eval_dir / "metrics.jsonl", lines=True)
    assert evaluated["value"].iloc[0] == trained["value"].iloc[0]


def test_training_is_reproducible(synthetic, tmp_path):
    data, schema, config = synthetic
    assert _train(data, schema, config, tmp_path / "a", seed=5) == 0
    assert _train(data, schema, config, tmp_path / "b", seed=5) == 0
    for name in ("history.jsonl", "split.txt", "metrics.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_schema_file_is_reported(synthetic, tmp_path, capsys):
    data, _, config = synthetic
    code = main(["train", "--data", data, "--schema", str(tmp_path / "nope.txt"), "--config", config,
                 "--out-dir", str(tmp_path / "run")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_plots_are_written(tmp_path):
    capacity = tmp_path / "capacity.html"
    assert main(["capacity-check", "--beta", "1", "--K", "3", "--d", "20", "--p", "0.001", "--plot", str(capacity)]) == 0
    energy = tmp_path / "energy.html"
    assert main(["retrieve", "--random-d", "6", "--random-n", "2", "--radius", "3", "--beta", "8",
                 "--plot", str(energy)]) == 0
    assert capacity.stat().st_size > 0 and energy.stat().st_size > 0


def test_seed_after_subcommand_and_evaluate_from_checkpoint(synthetic, tmp_path, monkeypatch, capsys):
    data, schema, config = synthetic
    out_dir = tmp_path / "runs"
    monkeypatch.setenv("HOPULAR_OUTPUT_DIR", str(out_dir))
    assert main(["train", "--data", data, "--schema", schema, "--config", config, "--seed", "1"]) == 0
    assert (out_dir / "model.npz").exists() and (out_dir / "history.jsonl").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 1
    trained = pd.read_json(out_dir / "metrics.jsonl", lines=True)
    capsys.readouterr()

    eval_dir = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(out_dir / "model.npz"), "--split", "test",
                 "--out-dir", str(eval_dir)]) == 0
    assert "hopular" in capsys.readouterr().out
    evaluated = pd.read_json(eval_dir / "metrics.jsonl", lines=True)
    assert evaluated["value"].iloc[0] == trained["value"].iloc[0]


def test_seed_flag_overrides_config_only_when_given(synthetic, tmp_path):
    data, schema, _ = synthetic
    config = tmp_path / "seeded.ini"
    config.write_text(SMALL_CONFIG + "\n[run]\nseed = 7\n", encoding="utf-8")
    args = ["train", "--data", data, "--schema", schema, "--config", str(config), "--out-dir"]
    assert main(args + [str(tmp_path / "a")]) == 0
    assert main(args + [str(tmp_path / "b"), "--seed", "2"]) == 0
    seeds = [json.loads((tmp_path / d / "manifest.json").read_text(encoding="utf-8"))["seed"] for d in ("a", "b")]
    assert seeds == [7, 2]
