import filecmp

import numpy as np
import pytest

from gcnbert.pose_io import load_clip, load_manifest, load_split
from gcnbert.synth import (SynthSpec, class_trajectory, generate, nearest_centroid_accuracy,
                           sample_coords, split_counts)


def test_zero_noise_makes_class_samples_identical():
    spec = SynthSpec(class_count=3, samples_per_class=4, frame_count=20, noise_sigma=0.0)
    for c in range(3):
        first = sample_coords(spec, c, 0)
        for i in range(1, 4):
            assert np.array_equal(sample_coords(spec, c, i), first)


def test_coordinates_are_clipped():
    spec = SynthSpec(class_count=2, samples_per_class=1, frame_count=10, noise_sigma=5.0)
    x = sample_coords(spec, 0, 0)
    assert x.shape == (10, 55, 2)
    assert np.abs(x).max() <= 1.0


def test_split_counts():
    assert split_counts(20) == (14, 3, 3)
    assert sum(split_counts(7)) == 7


def test_same_spec_gives_identical_files(tmp_path):
    spec = SynthSpec(class_count=2, samples_per_class=3, frame_count=12, seed=4)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a" / "clips", tmp_path / "b" / "clips")
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "clips", tmp_path / "b" / "clips",
                                           cmp.common_files, shallow=False)
    assert not mismatch and not errors
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_files_round_trip_through_pose_io(tmp_path):
    spec = SynthSpec(class_count=2, samples_per_class=2, frame_count=9, seed=2)
    generate(spec, tmp_path)
    manifest = load_manifest(tmp_path / "manifest.json")
    entry = manifest.split("train")[0]
    frames = load_clip(entry.keypoint_path, entry.frame_width, entry.frame_height)
    np.testing.assert_allclose(frames, sample_coords(spec, 0, 0), atol=1e-6)


def test_default_split_sizes(tmp_path):
    manifest = generate(SynthSpec(class_count=10, samples_per_class=20, frame_count=50, seed=1), tmp_path)
    assert manifest.sizes() == {"train": 140, "validation": 30, "test": 30}
    assert manifest.num_classes == 10


def test_classes_are_separable():
    spec = SynthSpec()
    n_train, _, _ = split_counts(spec.samples_per_class)
    train, test = [], []
    for c in range(spec.class_count):
        for i in range(spec.samples_per_class):
            (train if i < n_train else test).append((sample_coords(spec, c, i), c))
    assert nearest_centroid_accuracy(train, test) > 0.95


def test_class_centroids_are_far_apart():
    spec = SynthSpec()
    traj = [class_trajectory(c, spec.class_count, spec.frame_count).reshape(-1)
            for c in range(spec.class_count)]
    dist = min(np.linalg.norm(a - b) for i, a in enumerate(traj) for b in traj[i + 1:])
    assert dist > 10 * spec.noise_sigma


@pytest.mark.parametrize("bad", [dict(class_count=1), dict(noise_sigma=-0.1),
                                 dict(samples_per_class=0)])
def test_invalid_spec(bad, tmp_path):
    with pytest.raises(ValueError):
        generate(SynthSpec(**bad), tmp_path)
