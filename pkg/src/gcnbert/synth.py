"""Synthetic gloss dataset: one sinusoidal arm/hand motion per class.

Every class shares a fixed upper-body skeleton.  Class ``c`` moves the right
wrist (and, with half the amplitude, the elbow) back and forth along its own
direction at its own frequency and phase, sways the left hand along a
second class-specific direction and rotates the right-hand fingers.  Each
sample adds i.i.d. Gaussian noise to every coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose_io import (BODY_POINTS, HAND_POINTS, UPPER_BODY, DatasetManifest, ManifestEntry,
                      RawFramePose, write_clip, write_manifest)

FRAME_WIDTH = 640
FRAME_HEIGHT = 480

# normalized (x, y) for OpenPose body points 0-12, image y pointing down
_BODY = np.array([
    [0.00, -0.62], [0.00, -0.40], [-0.25, -0.40], [-0.32, -0.08], [-0.22, 0.15],
    [0.25, -0.40], [0.32, -0.08], [0.22, 0.15], [0.00, 0.35], [-0.12, 0.35],
    [-0.13, 0.70], [-0.13, 0.95], [0.12, 0.35],
])
R_ELBOW, R_WRIST, L_ELBOW, L_WRIST = 3, 4, 6, 7


def _hand_template() -> np.ndarray:
    """21 offsets from the wrist: 5 fingers of 4 joints fanned upward."""
    pts = [np.zeros(2)]
    for f in range(5):
        angle = -math.pi / 2 + (f - 2) * 0.3
        direction = np.array([math.cos(angle), math.sin(angle)])
        pts.extend(direction * 0.025 * (j + 1) for j in range(4))
    return np.array(pts)


_HAND = _hand_template()


@dataclass(frozen=True)
class SynthSpec:
    class_count: int = 10
    samples_per_class: int = 20
    frame_count: int = 64
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self, window: int = 1) -> None:
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.frame_count < window:
            raise ValueError(f"frame_count must be at least the window ({window})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def class_trajectory(c: int, class_count: int, frame_count: int) -> np.ndarray:
    """Noise-free (frame_count, 55, 2) normalized coordinates for class ``c``."""
    t = np.arange(frame_count)
    theta = math.pi * c / class_count
    freq = 1.0 + 0.5 * (c % 3)
    phase = 2.0 * math.pi * c / class_count
    wave = np.sin(2.0 * math.pi * freq * t / 50.0 + phase)
    direction = np.array([math.cos(theta), math.sin(theta)])
    right = 0.18 * wave[:, None] * direction

    theta_l = math.pi * (c * 0.37 % 1.0)
    wave_l = np.sin(2.0 * math.pi * (0.5 + 0.25 * (c % 2)) * t / 50.0 - phase)
    left = 0.08 * wave_l[:, None] * np.array([math.cos(theta_l), math.sin(theta_l)])

    body = np.repeat(_BODY[None], frame_count, axis=0)
    body[:, R_WRIST] += right
    body[:, R_ELBOW] += 0.5 * right
    body[:, L_WRIST] += left
    body[:, L_ELBOW] += 0.5 * left

    spin = 0.6 * math.sin(1.3 * c) + 0.3 * wave
    cos_s, sin_s = np.cos(spin), np.sin(spin)
    rot = np.stack([np.stack([cos_s, -sin_s], -1), np.stack([sin_s, cos_s], -1)], -2)
    right_hand = body[:, R_WRIST][:, None] + np.einsum("tij,kj->tki", rot, _HAND)
    left_hand = body[:, L_WRIST][:, None] + _HAND[None] * np.array([-1.0, 1.0])
    return np.concatenate([body, left_hand, right_hand], axis=1)


def _to_raw(coords: np.ndarray) -> RawFramePose:
    px = np.empty((coords.shape[0], 3))
    px[:, 0] = np.round((coords[:, 0] + 1.0) * FRAME_WIDTH / 2.0, 4)
    px[:, 1] = np.round((coords[:, 1] + 1.0) * FRAME_HEIGHT / 2.0, 4)
    px[:, 2] = 1.0
    body = np.zeros((BODY_POINTS, 3))
    body[:UPPER_BODY] = px[:UPPER_BODY]
    return RawFramePose(body, px[UPPER_BODY:UPPER_BODY + HAND_POINTS],
                        px[UPPER_BODY + HAND_POINTS:], FRAME_WIDTH, FRAME_HEIGHT)


def split_counts(n: int) -> tuple[int, int, int]:
    """70/15/15 split of ``n`` samples."""
    n_val = int(round(0.15 * n))
    n_test = int(round(0.15 * n))
    return n - n_val - n_test, n_val, n_test


def gloss_name(c: int) -> str:
    return f"gloss{c:03d}"


def sample_coords(spec: SynthSpec, c: int, i: int) -> np.ndarray:
    clean = class_trajectory(c, spec.class_count, spec.frame_count)
    rng = np.random.default_rng([spec.seed, c, i])
    noisy = clean + rng.normal(0.0, spec.noise_sigma, size=clean.shape) if spec.noise_sigma else clean
    return np.clip(noisy, -1.0, 1.0)


def generate(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Write clips under ``out_dir/clips`` and ``out_dir/manifest.json``."""
    spec.validate()
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    vocabulary = [gloss_name(c) for c in range(spec.class_count)]
    manifest = DatasetManifest(vocabulary=vocabulary,
                               splits={"train": [], "validation": [], "test": []})
    n_train, n_val, _ = split_counts(spec.samples_per_class)
    for c in range(spec.class_count):
        for i in range(spec.samples_per_class):
            coords = sample_coords(spec, c, i)
            video_id = f"{gloss_name(c)}_{i:04d}"
            path = out / "clips" / f"{video_id}.json"
            write_clip(path, [_to_raw(frame) for frame in coords], video_id)
            split = "train" if i < n_train else "validation" if i < n_train + n_val else "test"
            manifest.splits[split].append(ManifestEntry(
                video_id, gloss_name(c), c, path, float(FRAME_WIDTH), float(FRAME_HEIGHT)))
    write_manifest(manifest, out / "manifest.json")
    return manifest


def nearest_centroid_accuracy(train: list[tuple[np.ndarray, int]],
                              test: list[tuple[np.ndarray, int]]) -> float:
    """Fraction of test samples whose nearest class centroid (flattened
    coordinates) is their own class."""
    feats = np.stack([x.reshape(-1) for x, _ in train])
    labels = np.array([y for _, y in train])
    classes = np.unique(labels)
    centroids = np.stack([feats[labels == c].mean(axis=0) for c in classes])
    test_feats = np.stack([x.reshape(-1) for x, _ in test])
    dist = ((test_feats[:, None, :] - centroids[None]) ** 2).sum(-1)
    pred = classes[np.argmin(dist, axis=1)]
    return float((pred == np.array([y for _, y in test])).mean())
