import json

import numpy as np
import pytest

from conftest import tiny_config
from gcnbert.checkpoint import load_checkpoint
from gcnbert.model import GcnBert
from gcnbert.optim import AdamState
from gcnbert.pose_io import DatasetManifest, ManifestEntry, load_manifest
from gcnbert.tensor import NonFiniteError
from gcnbert.trainer import train, train_step


def _log(path):
    return [json.loads(line) for line in (path / "train_log.jsonl").read_text().splitlines()]


def test_one_epoch_on_four_samples(tmp_path, toy_dataset):
    full = load_manifest(toy_dataset / "manifest.json")
    small = DatasetManifest(full.vocabulary, {"train": full.split("train")[:4],
                                              "validation": [], "test": []})
    ckpt = train(small, tiny_config(epochs=1), out_dir=tmp_path)
    log = _log(tmp_path)
    assert len(log) == 1
    assert set(log[0]) == {"epoch", "train_loss", "train_top1", "val_top1", "val_top5", "wall_ms"}
    assert np.isfinite(log[0]["train_loss"])
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    assert ckpt.epoch == 1 and ckpt.optimizer.step == 1


def test_same_seed_gives_identical_runs(tmp_path, toy_dataset):
    manifest = load_manifest(toy_dataset / "manifest.json")
    for name in ("a", "b"):
        train(manifest, tiny_config(epochs=3), seed=7, out_dir=tmp_path / name)
    strip = [{k: v for k, v in r.items() if k != "wall_ms"} for r in _log(tmp_path / "a")]
    assert strip == [{k: v for k, v in r.items() if k != "wall_ms"} for r in _log(tmp_path / "b")]
    for f in ("best.ckpt", "last.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_changes_the_run(toy_dataset):
    manifest = load_manifest(toy_dataset / "manifest.json")
    a = train(manifest, tiny_config(epochs=1), seed=1)
    b = train(manifest, tiny_config(epochs=1), seed=2)
    assert not np.array_equal(a.params["gcn.lift.weight"], b.params["gcn.lift.weight"])


def test_best_checkpoint_tracks_validation(tmp_path, toy_dataset):
    manifest = load_manifest(toy_dataset / "manifest.json")
    train(manifest, tiny_config(epochs=4), out_dir=tmp_path)
    log = _log(tmp_path)
    best = load_checkpoint(tmp_path / "best.ckpt")
    top = max(r["val_top1"] for r in log)
    assert best.best_val_top1 == top
    assert best.epoch == next(r["epoch"] for r in log if r["val_top1"] == top)
    assert load_checkpoint(tmp_path / "last.ckpt").epoch == 4


def test_config_echo_reproduces_the_run(toy_dataset):
    from gcnbert.config import RunConfig
    manifest = load_manifest(toy_dataset / "manifest.json")
    first = train(manifest, tiny_config(epochs=2), seed=3)
    again = train(manifest, RunConfig.from_dict(first.config))
    for name, arr in first.params.items():
        assert np.array_equal(arr, again.params[name])


def test_empty_training_split(toy_dataset):
    manifest = load_manifest(toy_dataset / "manifest.json")
    empty = DatasetManifest(manifest.vocabulary, {"train": [], "validation": [], "test": []})
    with pytest.raises(ValueError, match="empty"):
        train(empty, tiny_config())


def test_nonfinite_loss_aborts(rng):
    model = GcnBert.from_config(tiny_config(), 3, 5, rng=rng)
    batch = rng.uniform(-1, 1, size=(2, 8, 5, 2))
    batch[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        train_step(model, batch, np.array([0, 1]), AdamState())


def test_train_step_reduces_loss_on_a_fixed_batch(rng):
    model = GcnBert.from_config(tiny_config(), 3, 5, rng=rng)
    batch = rng.uniform(-1, 1, size=(3, 8, 5, 2))
    targets = np.array([0, 1, 2])
    opt = AdamState(lr=1e-2)
    losses = [train_step(model, batch, targets, opt)[0] for _ in range(30)]
    assert losses[-1] < losses[0]


def test_loss_trend_after_epoch_20(toy_dataset):
    # epoch averages carry minibatch and window-sampling noise, so the
    # trend is read over 10-epoch blocks with a small tolerance
    manifest = load_manifest(toy_dataset / "manifest.json")
    logs = []
    train(manifest, tiny_config(epochs=100), seed=0, on_epoch=logs.append)
    losses = np.array([r["train_loss"] for r in logs])
    assert losses[20:].max() <= 1.05 * losses[19]
    blocks = losses[20:].reshape(-1, 10).mean(axis=1)
    assert all(b <= 1.02 * a for a, b in zip(blocks, blocks[1:]))
    assert blocks[-1] < blocks[0]
    assert logs[-1]["train_top1"] == 100.0
