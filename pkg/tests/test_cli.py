import filecmp
import json

import numpy as np
import pytest

from gcnbert import tensor as T
from gcnbert.cli import main
from gcnbert.evaluator import read_report

TINY = {"gcn.width": 2, "gcn.layers": 1, "gcn.blocks": 1, "bert.pos_dim": 2, "bert.layers": 1,
        "bert.heads": 1, "bert.head_dim": 4, "bert.ff_dim": 8, "data.window": 8,
        "train.batch_size": 4, "train.epochs": 2}


def _error(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_dataset, tiny_config_file):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(tiny_config_file), "--data", str(toy_dataset),
                 "--out", str(out), "--threads", "1"]) == 0
    return out


def test_synth_counts_and_determinism(tmp_path, capsys):
    args = ["synth", "--classes", "10", "--per-class", "20", "--frames", "50", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    summary = json.loads(capsys.readouterr().out.splitlines()[0])
    assert summary["splits"] == {"train": 140, "validation": 30, "test": 30}
    assert len(list((tmp_path / "a" / "clips").iterdir())) == 200
    cmp = filecmp.dircmp(tmp_path / "a" / "clips", tmp_path / "b" / "clips")
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "clips", tmp_path / "b" / "clips",
                                           cmp.common_files, shallow=False)
    assert len(cmp.common_files) == 200 and not mismatch and not errors


def test_synth_rejects_single_class(tmp_path, capsys):
    assert main(["synth", "--classes", "1", "--out", str(tmp_path)]) == 1
    assert _error(capsys)["error"] == "usage"


def test_train_writes_checkpoints_and_log(trained):
    assert (trained / "best.ckpt").exists()
    assert (trained / "last.ckpt").exists()
    assert len((trained / "train_log.jsonl").read_text().splitlines()) == 2


def test_train_missing_data_dir(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in _error(capsys)["message"]


def test_train_same_seed_same_log(tmp_path, toy_dataset, tiny_config_file):
    logs = []
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_config_file), "--data", str(toy_dataset),
                     "--seed", "7", "--threads", "1", "--out", str(tmp_path / name)]) == 0
        rows = [json.loads(x) for x in (tmp_path / name / "train_log.jsonl").read_text().splitlines()]
        logs.append([{k: v for k, v in r.items() if k != "wall_ms"} for r in rows])
    assert logs[0] == logs[1]


def test_eval_prints_and_writes_report(trained, toy_dataset, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    assert main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--data", str(toy_dataset),
                 "--split", "test", "--out", str(report_path)]) == 0
    printed = capsys.readouterr().out
    report = read_report(report_path)
    assert set(report.top_k_accuracy) == {1, 5, 10}
    acc = report.top_k_accuracy
    assert acc[1] <= acc[5] <= acc[10]
    for k, v in acc.items():
        assert f"top-{k}: {v:6.2f}%" in printed
    assert report.config["gcn.width"] == 2
    assert report.sample_count == 3


def test_eval_class_count_mismatch(trained, tmp_path, capsys):
    assert main(["synth", "--classes", "4", "--per-class", "3", "--frames", "10",
                 "--out", str(tmp_path / "d")]) == 0
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--data", str(tmp_path / "d")])
    assert code == 2
    assert "gloss003" in _error(capsys)["message"]


def test_predict_full_ranking_sums_to_one(trained, toy_dataset, capsys):
    clip = toy_dataset / "clips" / "gloss001_0006.json"
    assert main(["predict", "--checkpoint", str(trained / "best.ckpt"), "--clip", str(clip), "-k", "3"]) == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.strip().splitlines()]
    assert sorted(r[0] for r in rows) == ["gloss000", "gloss001", "gloss002"]
    probs = [float(r[1]) for r in rows]
    assert probs == sorted(probs, reverse=True)
    assert abs(sum(probs) - 1.0) <= 1e-4


def test_predict_errors(trained, toy_dataset, tmp_path, capsys):
    ckpt = str(trained / "best.ckpt")
    (tmp_path / "empty.json").write_text("")
    assert main(["predict", "--checkpoint", ckpt, "--clip", str(tmp_path / "empty.json"), "-k", "1"]) == 2
    assert _error(capsys)["error"] == "PoseFormatError"
    clip = str(toy_dataset / "clips" / "gloss000_0000.json")
    assert main(["predict", "--checkpoint", ckpt, "--clip", clip, "-k", "4"]) == 1
    assert "-k" in _error(capsys)["message"]
    (tmp_path / "bad.ckpt").write_bytes(b"GCNBERT\x00" + bytes(20))
    assert main(["predict", "--checkpoint", str(tmp_path / "bad.ckpt"), "--clip", clip]) == 2
    capsys.readouterr()


def test_usage_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert _error(capsys)["error"] == "usage"
    (tmp_path / "c.json").write_text(json.dumps({"gcn.widht": 3}))
    assert main(["config", "--config", str(tmp_path / "c.json")]) == 1
    assert "gcn.widht" in _error(capsys)["message"]
    assert main(["config", "--set", "gcn.width"]) == 1
    capsys.readouterr()


def test_config_listing_and_overrides(capsys):
    assert main(["config", "--set", "gcn.width=8", "--set", "bert.positional=add"]) == 0
    out = capsys.readouterr().out
    assert "gcn.adjacency_init" in out and "train.weight_decay" in out
    width_line = next(line for line in out.splitlines() if line.startswith("gcn.width "))
    assert " 8 " in width_line


def test_gradcheck_default_passes_and_lists_parameters(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for component in ("gcn_layer", "gcn_block", "attention_head", "multi_head", "pffn",
                      "transformer_layer", "spatial_head", "temporal_head", "fusion_cross_entropy"):
        assert f"{component} " in out
    for name in ("gcn.adjacency", "gcn.head.weight", "bert.cls_token", "bert.layer1.ffn.w2",
                 "bert.head.bias"):
        assert name in out
    assert "FAIL" not in out


def test_gradcheck_catches_a_corrupted_backward(monkeypatch, capsys):
    honest = T.gelu

    def bad_gelu(x):
        out = honest(x)
        # same forward value, gradient off by ten percent
        return T._make(out.data, "gelu", (x,), lambda g: (1.1 * g * (T.normal_cdf(x.data) + x.data
                       * np.exp(-0.5 * x.data ** 2) / np.sqrt(2 * np.pi)),))

    monkeypatch.setattr(T, "gelu", bad_gelu)
    assert main(["gradcheck"]) == 3
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    record = json.loads(captured.err.strip())
    assert "pffn" in record["message"]
    assert "gcn_layer" not in record["message"]
