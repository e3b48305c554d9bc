"""Training loop with validation-driven checkpointing."""

from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig
from .evaluator import evaluate
from .fusion import cross_entropy
from .model import GcnBert
from .optim import AdamState, adam_step, clip_global_norm
from .pose_io import NUM_KEYPOINTS, DatasetManifest, load_split, sample_window
from .tensor import NonFiniteError

logger = logging.getLogger(__name__)


def make_checkpoint(model: GcnBert, config: RunConfig, vocabulary, optimizer: AdamState,
                    epoch: int, best_val_top1: float, rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        params={k: v.copy() for k, v in model.state_dict().items()},
        config=config.to_dict(),
        vocabulary=list(vocabulary),
        num_keypoints=model.gcn.adjacency.shape[0],
        epoch=epoch,
        best_val_top1=best_val_top1,
        rng_state=rng.bit_generator.state,
        optimizer=AdamState(optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps,
                            optimizer.weight_decay, optimizer.step,
                            {k: v.copy() for k, v in optimizer.m.items()},
                            {k: v.copy() for k, v in optimizer.v.items()}),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[GcnBert, RunConfig]:
    config = RunConfig.from_dict(ckpt.config)
    model = GcnBert.from_config(config, len(ckpt.vocabulary), ckpt.num_keypoints)
    model.load_state(ckpt.params)
    return model, config


def train_step(model: GcnBert, batch: np.ndarray, targets: np.ndarray, optimizer: AdamState,
               clip_norm: float = 0.0) -> tuple[float, np.ndarray]:
    """One optimizer step on a batch; returns (mean loss, logits)."""
    params = model.parameters()
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with T.Tape() as tape:
        result = model.forward(T.Tensor(batch.astype(model.dtype)))
        loss = cross_entropy(result.logits, targets)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite training loss {value}")
    tape.backward(loss)
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    if clip_norm > 0:
        clip_global_norm(grads, clip_norm)
    adam_step(params, grads, optimizer)
    for p in params.values():
        p.grad = None
    return value, result.logits.data


def train(manifest: DatasetManifest, config: RunConfig, seed: int | None = None,
          out_dir: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Train on the manifest's train split.

    Writes ``best.ckpt`` (highest validation top-1), ``last.ckpt`` and
    ``train_log.jsonl`` into ``out_dir`` when given.  Returns the final state.
    """
    if seed is not None:
        config = config.override(seed=seed)
    train_set = load_split(manifest, "train")
    if not train_set:
        raise ValueError("training split is empty")
    val_set = load_split(manifest, "validation")

    rng = np.random.default_rng(config.seed)
    model = GcnBert.from_config(config, manifest.num_classes, NUM_KEYPOINTS, rng=rng)
    optimizer = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                          eps=config.adam_eps, weight_decay=config.weight_decay)

    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.jsonl", "w")

    best = -1.0
    best_ckpt = None
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            order = rng.permutation(len(train_set))
            loss_sum, hits = 0.0, 0
            for i in range(0, len(order), config.batch_size):
                idx = order[i:i + config.batch_size]
                batch = np.stack([sample_window(train_set[j][0], "train", config.window, rng)
                                  for j in idx])
                targets = np.array([train_set[j][1] for j in idx])
                try:
                    loss, logits = train_step(model, batch, targets, optimizer, config.clip_norm)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch}, batch {i // config.batch_size}: {exc}") from None
                loss_sum += loss * len(idx)
                hits += int((np.argmax(logits, axis=1) == targets).sum())

            record = {"epoch": epoch, "train_loss": loss_sum / len(train_set),
                      "train_top1": round(100.0 * hits / len(train_set), 2)}
            if val_set:
                report = evaluate(model, val_set, manifest.vocabulary, config.window, "validation")
                record["val_top1"] = report.top_k_accuracy[1]
                record["val_top5"] = report.top_k_accuracy[5]
                score = record["val_top1"]
            else:
                record["val_top1"] = record["val_top5"] = None
                score = record["train_top1"]
            record["wall_ms"] = round(1000.0 * (time.perf_counter() - start), 1)
            logger.info("epoch %d loss %.4f train %.2f val %s", epoch, record["train_loss"],
                        record["train_top1"], record["val_top1"])
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if on_epoch is not None:
                on_epoch(record)
            if score > best:
                best = score
                best_ckpt = make_checkpoint(model, config, manifest.vocabulary, optimizer, epoch, best, rng)
                if out is not None:
                    save_checkpoint(best_ckpt, out / "best.ckpt")
    finally:
        if log_file is not None:
            log_file.close()

    last = make_checkpoint(model, config, manifest.vocabulary, optimizer, config.epochs,
                           max(best, 0.0), rng)
    if out is not None:
        save_checkpoint(last, out / "last.ckpt")
        if best_ckpt is None:
            save_checkpoint(last, out / "best.ckpt")
    return last
