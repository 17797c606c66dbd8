import json

import pytest
from conftest import tiny_config

from pdlab.cli import _length_list, build_parser, main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    cfg_path = out / "tiny.json"
    tiny_config().save(cfg_path)
    common = ["--config", str(cfg_path), "--out", str(out)]
    assert main(["gen-data", *common, "--seed", "0"]) == 0
    assert main(["pretrain", *common, "--seed", "0"]) == 0
    return out, common


def test_gen_data_layout(run_dir):
    out, _ = run_dir
    for domain in ("source", "target"):
        for split in ("train", "val", "test"):
            assert (out / "corpus" / domain / split / "samples.jsonl").exists()
    assert (out / "corpus" / "generator.json").exists()


def test_pretrain_outputs(run_dir):
    out, _ = run_dir
    assert (out / "backbone" / "manifest.json").exists()
    assert (out / "backbone" / "experiment.json").exists()
    assert json.loads((out / "zero_shot.json").read_text())["num_queries"] > 0
    assert (out / "pretrain_log.csv").exists()


@pytest.mark.parametrize("strategy", ["baseline", "one-stage", "two-stage"])
def test_adapt_then_eval(run_dir, strategy, capsys):
    out, common = run_dir
    assert main(["adapt", *common, "--strategy", strategy, "--backbone", str(out / "backbone"), "--seed", "1"]) == 0
    name = strategy.replace("-", "_")
    ckpt = out / name / f"{name}_seed1" / "checkpoint"
    assert (out / name / f"{name}_aggregate.json").exists()
    capsys.readouterr()
    rankings = out / f"{name}_rankings.csv"
    assert main(["eval", "--out", str(out), "--checkpoint", str(ckpt), "--split", "target-test",
                 "--dump-rankings", str(rankings)]) == 0
    row = json.loads(capsys.readouterr().out)
    assert 0 <= row["rank1"] <= 100 and row["split"] == "target-test"
    assert rankings.read_text().startswith("query,")


def test_cli_overrides_reach_config(run_dir):
    out, common = run_dir
    assert main(["adapt", *common, "--strategy", "two-stage", "--backbone", str(out / "backbone"),
                 "--prompt-len-text", "3", "--prompt-len-image", "1", "--lambda", "0.5", "--epochs", "1"]) == 0
    saved = json.loads((out / "two_stage" / "two_stage_seed0" / "checkpoint" / "experiment.json").read_text())
    assert (saved["prompt_len_text"], saved["prompt_len_image"], saved["lam"], saved["epochs"]) == (3, 1, 0.5, 1)
    manifest = json.loads((out / "two_stage" / "two_stage_seed0" / "checkpoint" / "manifest.json").read_text())
    shapes = {e["name"]: e["shape"] for e in manifest["entries"]}
    assert shapes["prompt.text.vectors"][0] == 3 and shapes["prompt.image.vectors"][0] == 1


def test_ablate(run_dir):
    out, common = run_dir
    assert main(["ablate", *common, "--lengths", "1,8x6", "--seeds", "1", "--backbone", str(out / "backbone")]) == 0
    lines = (out / "ablate" / "prompt_length_sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 3
    assert (out / "ablate" / "prompt_length_sweep.svg").exists()


def test_errors_are_reported(tmp_path, capsys):
    assert main(["pretrain", "--out", str(tmp_path)]) == 2
    assert "gen-data" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["adapt", "--strategy", "three-stage", "--backbone", "x"])


def test_thread_cap(run_dir, monkeypatch):
    out, common = run_dir
    monkeypatch.setenv("PDLAB_THREADS", "1")
    assert main(["eval", *common, "--checkpoint", str(out / "backbone"), "--split", "source-test"]) == 0


def test_length_parsing():
    assert _length_list("1,2,8x6") == [1, 2, (8, 6)]


def test_pipeline_checkpoints_are_self_describing(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    tiny_config(seeds=(0,)).save(cfg_path)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg_path), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary["aggregates"]) == {"baseline", "one_stage", "two_stage"}
    assert (out / "backbone" / "experiment.json").exists()
    ckpt = out / "two_stage" / "two_stage_seed0" / "checkpoint"
    assert main(["eval", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
