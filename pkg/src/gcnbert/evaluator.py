"""Top-K accuracy, per-class accuracy and top-1 confusion pairs."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fusion import ranking
from .pose_io import sample_window

TOP_K = (1, 5, 10)


@dataclass
class EvalReport:
    top_k_accuracy: dict[int, float]
    per_class_top1: list[float | None]
    confusion_pairs: list[tuple[str, str, int]]
    sample_count: int
    split: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["top_k_accuracy"] = {str(k): v for k, v in self.top_k_accuracy.items()}
        out["confusion_pairs"] = [list(p) for p in self.confusion_pairs]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            top_k_accuracy={int(k): v for k, v in doc["top_k_accuracy"].items()},
            per_class_top1=doc["per_class_top1"],
            confusion_pairs=[tuple(p) for p in doc["confusion_pairs"]],
            sample_count=doc["sample_count"],
            split=doc.get("split", ""),
            config=doc.get("config", {}),
        )

    def table(self, max_pairs: int = 10) -> str:
        lines = [f"split: {self.split or '-'}   samples: {self.sample_count}",
                 "  ".join(f"top-{k}: {v:6.2f}%" for k, v in self.top_k_accuracy.items())]
        if self.confusion_pairs:
            lines.append("most confused (true -> predicted, count):")
            for true, pred, n in self.confusion_pairs[:max_pairs]:
                lines.append(f"  {true} -> {pred}: {n}")
        return "\n".join(lines)


def _pct(hits: int, total: int) -> float:
    return round(100.0 * hits / total, 2)


def report_from_rankings(rankings: np.ndarray, targets: Sequence[int], vocabulary: Sequence[str],
                         ks: Sequence[int] = TOP_K) -> EvalReport:
    """Build a report from full per-sample rankings (rows of class ids).

    When k exceeds the number of classes the whole ranking counts.
    """
    rankings = np.asarray(rankings)
    targets = np.asarray(targets, dtype=np.int64)
    n = len(targets)
    if n == 0:
        raise ValueError("cannot evaluate an empty split")
    g = len(vocabulary)
    if rankings.shape != (n, g):
        raise ValueError(f"rankings shape {rankings.shape} does not match {n} samples x {g} classes")
    position = np.argmax(rankings == targets[:, None], axis=1)
    top_k = {k: _pct(int((position < k).sum()), n) for k in ks}

    per_class: list[float | None] = []
    for c in range(g):
        mask = targets == c
        per_class.append(_pct(int((position[mask] == 0).sum()), int(mask.sum())) if mask.any() else None)

    misses = Counter((vocabulary[t], vocabulary[r[0]]) for t, r in zip(targets, rankings) if r[0] != t)
    pairs = sorted(((t, p, c) for (t, p), c in misses.items()), key=lambda x: (-x[2], x[0], x[1]))
    return EvalReport(top_k, per_class, pairs, n)


def report_from_logits(logits: np.ndarray, targets: Sequence[int], vocabulary: Sequence[str],
                       ks: Sequence[int] = TOP_K) -> EvalReport:
    return report_from_rankings(ranking(np.asarray(logits)), targets, vocabulary, ks)


def predict_logits(model, clips: Sequence[np.ndarray], window: int, batch_size: int = 32) -> np.ndarray:
    """Logits for each clip using the centered evaluation window."""
    out = []
    for i in range(0, len(clips), batch_size):
        batch = np.stack([sample_window(c, "eval", window) for c in clips[i:i + batch_size]])
        out.append(model.logits(batch.astype(model.dtype)))
    return np.concatenate(out, axis=0)


def evaluate(model, samples: Sequence[tuple[np.ndarray, int, str]], vocabulary: Sequence[str],
             window: int, split: str = "") -> EvalReport:
    """Evaluate a model on ``(frames, gloss_id, video_id)`` samples."""
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    if model.num_classes != len(vocabulary):
        raise ValueError(f"model has {model.num_classes} classes, data has {len(vocabulary)}")
    logits = predict_logits(model, [s[0] for s in samples], window)
    report = report_from_logits(logits, [s[1] for s in samples], vocabulary)
    report.split = split
    return report


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
