import hashlib
import json
import os
from pathlib import Path

import pytest
import yaml

from evoqformer.cli import run_command
from evoqformer.config import ENV_CONFIG, config_hash, load_config, parse_config
from evoqformer.errors import ConfigInvalid
from evoqformer.survival import aggregate_mean

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.yaml"
DEFAULT = TINY.with_name("default.yaml")


def sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(*argv):
    return run_command([str(a) for a in argv])


def pipeline(out):
    for cmd in ("gen-data", "train", "eval"):
        assert run(cmd, "--config", TINY, "--out", out) == 0


def test_checked_in_configs_parse():
    for path in (TINY, DEFAULT):
        cfg = load_config(path)
        assert cfg.hash == config_hash(yaml.safe_load(path.read_text()))


def test_seed_mandatory():
    with pytest.raises(ConfigInvalid):
        parse_config({"data": {}})
    assert parse_config({}, seed_override=4).seed == 4


def test_inconsistent_modalities_rejected():
    raw = yaml.safe_load(TINY.read_text())
    raw["model"]["modalities"] = ["text", "audio"]
    with pytest.raises(ConfigInvalid):
        parse_config(raw)
    raw = yaml.safe_load(TINY.read_text())
    raw["training"]["stages"][1]["modalities"].append("audio")
    with pytest.raises(ConfigInvalid):
        parse_config(raw)


def test_pipeline_reports_and_no_input_mutation(tmp_path, capsys):
    assert run("gen-data", "--config", TINY, "--out", tmp_path) == 0
    cohort_hash = sha(tmp_path / "cohort.jsonl")
    assert run("train", "--config", TINY, "--out", tmp_path) == 0
    ckpt_hash = sha(tmp_path / "model.ckpt")
    assert run("eval", "--config", TINY, "--out", tmp_path) == 0
    assert sha(tmp_path / "cohort.jsonl") == cohort_hash and sha(tmp_path / "model.ckpt") == ckpt_hash
    train = json.loads((tmp_path / "train_report.json").read_text())
    ev = json.loads((tmp_path / "eval_report.json").read_text())
    assert train["config_hash"] == ev["config_hash"] == config_hash(yaml.safe_load(TINY.read_text()))
    assert train["seed"] == 0 and len(train["loss"]) == 5
    assert train["cindex"] == ev["cindex"]
    for v in ev["cindex"].values():
        assert 0.0 <= v <= 1.0
    timing = json.loads((tmp_path / "eval_report.json.timing.json").read_text())
    assert timing["wall_clock_seconds"] >= 0


def test_repeat_runs_bit_identical(tmp_path):
    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    for name in ("cohort.jsonl", "model.ckpt", "gen-data_report.json", "train_report.json", "eval_report.json"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name), name


def test_seed_override_changes_run(tmp_path):
    assert run("gen-data", "--config", TINY, "--out", tmp_path / "s1", "--seed", 1) == 0
    assert run("gen-data", "--config", TINY, "--out", tmp_path / "s0") == 0
    assert sha(tmp_path / "s1" / "cohort.jsonl") != sha(tmp_path / "s0" / "cohort.jsonl")


def test_env_config_default(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_CONFIG, str(TINY))
    assert run("gen-data", "--out", tmp_path) == 0
    assert (tmp_path / "cohort.jsonl").exists()


def test_compare_table(tmp_path):
    assert run("gen-data", "--config", TINY, "--out", tmp_path) == 0
    assert run("compare", "--config", TINY, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "compare_report.json").read_text())
    assert set(rep["rows"]) == {"single:text", "single:image", "single:rna", "smqf", "early", "late"}
    assert rep["columns"] == ["0", "1", "MEAN"]
    for row in rep["rows"].values():
        assert row["MEAN"] == aggregate_mean(list(row["test"].values()))
    assert run("compare", "--config", TINY, "--out", tmp_path, "--jobs", 2, "--report", "par.json") == 0
    assert sha(tmp_path / "par.json") == sha(tmp_path / "compare_report.json")


def test_continual_command(tmp_path):
    assert run("gen-data", "--config", TINY, "--out", tmp_path) == 0
    assert run("continual", "--config", TINY, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "continual_report.json").read_text())
    assert [s["modalities"] for s in rep["stages"]] == [["image", "text"], ["image", "text", "rna"]]
    assert rep["non_interference"][0]["identical"]
    assert (tmp_path / "continual.ckpt").exists()


def test_gradcheck_command(tmp_path):
    assert run("gradcheck", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "gradcheck_report.json").read_text())
    assert rep["passed"] and rep["tol"] == 1e-4


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(ENV_CONFIG, raising=False)
    assert run("train", "--bogus") == 2
    assert _err(capsys)["error"] == "BadArgs"
    assert run("nope") == 2
    assert run("train", "--config", tmp_path / "missing.yaml") == 3
    assert _err(capsys)["exit_code"] == 3
    assert run("train") == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\nmodel: {fusion: magic}\n")
    assert run("train", "--config", bad) == 3
    assert run("eval", "--config", TINY, "--out", tmp_path / "empty") == 4
    assert _err(capsys)["error"] == "DataError"
    (tmp_path / "trunc").mkdir()
    assert run("gen-data", "--config", TINY, "--out", tmp_path / "trunc") == 0
    p = tmp_path / "trunc" / "cohort.jsonl"
    p.write_text(p.read_text()[:500])
    assert run("train", "--config", TINY, "--out", tmp_path / "trunc") == 4
    assert _err(capsys)["error"] == "CorruptFile"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_5(tmp_path, capsys):
    cfg = yaml.safe_load(TINY.read_text())
    cfg["training"]["lr"] = 1e300
    path = tmp_path / "huge.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run("gen-data", "--config", path, "--out", tmp_path) == 0
    assert run("train", "--config", path, "--out", tmp_path) == 5
    assert _err(capsys)["exit_code"] == 5


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "gen-data" in capsys.readouterr().out
    assert os.path.exists(TINY)
