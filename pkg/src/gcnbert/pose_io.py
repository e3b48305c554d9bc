"""Keypoint ingestion: OpenPose documents, keypoint selection, normalization,
fixed-length window sampling and dataset manifests.

A clip is either a directory of per-frame OpenPose JSON files (sorted by
name) or a single JSON document ``{"frame_width", "frame_height",
"frames": [<openpose frame>, ...]}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

BODY_POINTS = 25
HAND_POINTS = 21
UPPER_BODY = 13
NUM_KEYPOINTS = UPPER_BODY + 2 * HAND_POINTS
DEFAULT_WINDOW = 50

SPLITS = ("train", "validation", "test")
_SPLIT_ALIASES = {"val": "validation"}


class PoseFormatError(ValueError):
    pass


class NoPersonError(PoseFormatError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class RawFramePose:
    body: np.ndarray        # 25 x 3 (x px, y px, confidence)
    left_hand: np.ndarray   # 21 x 3
    right_hand: np.ndarray  # 21 x 3
    frame_width: float
    frame_height: float


@dataclass
class PoseSequence:
    coords: np.ndarray  # T x K x 2
    gloss_id: int
    source_id: str


def _block(person: dict, key: str, points: int, required: bool) -> np.ndarray:
    values = person.get(key)
    if values is None or (len(values) == 0 and not required):
        if required:
            raise PoseFormatError(f"missing {key}")
        return np.zeros((points, 3))
    if len(values) != points * 3:
        raise PoseFormatError(f"{key} has {len(values)} numbers, expected {points * 3}")
    arr = np.asarray(values, dtype=np.float64).reshape(points, 3)
    if not np.isfinite(arr).all():
        raise PoseFormatError(f"{key} contains non-finite values")
    conf = arr[:, 2]
    if (conf < 0).any() or (conf > 1).any():
        raise PoseFormatError(f"{key} has confidence outside [0, 1]")
    return arr


def parse_openpose_frame(document: dict, frame_width: float = 1.0,
                         frame_height: float = 1.0) -> RawFramePose:
    """Read person 0 of one OpenPose frame document."""
    people = document.get("people") if isinstance(document, dict) else None
    if people is None:
        raise PoseFormatError("document has no 'people' array")
    if len(people) == 0:
        raise NoPersonError("no person detected in frame")
    person = people[0]
    return RawFramePose(
        body=_block(person, "pose_keypoints_2d", BODY_POINTS, required=True),
        left_hand=_block(person, "hand_left_keypoints_2d", HAND_POINTS, required=False),
        right_hand=_block(person, "hand_right_keypoints_2d", HAND_POINTS, required=False),
        frame_width=frame_width,
        frame_height=frame_height,
    )


def empty_frame(frame_width: float, frame_height: float) -> RawFramePose:
    return RawFramePose(np.zeros((BODY_POINTS, 3)), np.zeros((HAND_POINTS, 3)),
                        np.zeros((HAND_POINTS, 3)), frame_width, frame_height)


def select_keypoints(raw: RawFramePose) -> np.ndarray:
    """55 x 3 rows: body 0-12, then left hand 0-20, then right hand 0-20."""
    return np.concatenate([raw.body[:UPPER_BODY], raw.left_hand, raw.right_hand], axis=0)


def normalize_frame(selected: np.ndarray, frame_width: float, frame_height: float) -> np.ndarray:
    """Map pixel coordinates to [-1, 1]; zero-confidence points go to the origin."""
    if frame_width <= 0 or frame_height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {frame_width}x{frame_height}")
    out = np.empty((selected.shape[0], 2))
    out[:, 0] = 2.0 * selected[:, 0] / frame_width - 1.0
    out[:, 1] = 2.0 * selected[:, 1] / frame_height - 1.0
    np.clip(out, -1.0, 1.0, out=out)
    out[selected[:, 2] == 0] = 0.0
    return out


def denormalize_frame(coords: np.ndarray, frame_width: float, frame_height: float) -> np.ndarray:
    out = np.empty_like(coords)
    out[:, 0] = (coords[:, 0] + 1.0) * frame_width / 2.0
    out[:, 1] = (coords[:, 1] + 1.0) * frame_height / 2.0
    return out


def window_indices(length: int, mode: str, window: int = DEFAULT_WINDOW,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    if length <= 0:
        raise ValueError("cannot sample a window from an empty clip")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if length < window:
        return np.arange(window) % length
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode sampling needs an rng")
        start = int(rng.integers(0, length - window + 1))
    else:
        start = (length - window) // 2
    return np.arange(start, start + window)


def sample_window(frames: Sequence[np.ndarray] | np.ndarray, mode: str,
                  window: int = DEFAULT_WINDOW, rng: np.random.Generator | None = None) -> np.ndarray:
    """Pick ``window`` consecutive frames (random start when training, centered
    for evaluation); short clips are repeated cyclically."""
    frames = np.asarray(frames)
    idx = window_indices(len(frames), mode, window, rng)
    return frames[idx]


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PoseFormatError(f"{path}: invalid JSON ({exc})") from None


def _frames_to_coords(docs, width: float, height: float, source: str) -> np.ndarray:
    coords = []
    for i, doc in enumerate(docs):
        try:
            raw = parse_openpose_frame(doc, width, height)
        except NoPersonError:
            # real clips have occasional detector dropouts; treat as all-missing
            logger.debug("%s frame %d: no person, using empty pose", source, i)
            raw = empty_frame(width, height)
        coords.append(normalize_frame(select_keypoints(raw), width, height))
    if not coords:
        raise PoseFormatError(f"{source}: clip has no frames")
    return np.stack(coords)


def load_clip(path: str | Path, frame_width: float | None = None,
              frame_height: float | None = None) -> np.ndarray:
    """Load a clip as an (n_frames, 55, 2) array of normalized coordinates."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise PoseFormatError(f"{path}: no keypoint files")
        if frame_width is None or frame_height is None:
            raise PoseFormatError(f"{path}: per-frame directories need frame dimensions")
        return _frames_to_coords((_read_json(f) for f in files), frame_width, frame_height, str(path))
    if not path.exists():
        raise FileNotFoundError(f"{path}: keypoint file not found")
    doc = _read_json(path)
    if isinstance(doc, dict) and "frames" in doc:
        width = doc.get("frame_width", frame_width)
        height = doc.get("frame_height", frame_height)
        if width is None or height is None:
            raise PoseFormatError(f"{path}: frame dimensions unknown")
        return _frames_to_coords(doc["frames"], width, height, str(path))
    if isinstance(doc, dict) and "people" in doc:
        if frame_width is None or frame_height is None:
            raise PoseFormatError(f"{path}: frame dimensions unknown")
        return _frames_to_coords([doc], frame_width, frame_height, str(path))
    raise PoseFormatError(f"{path}: not an OpenPose frame or clip document")


def write_clip(path: str | Path, frames: Sequence[RawFramePose], video_id: str = "") -> None:
    """Write a clip document that :func:`load_clip` reads back."""
    if not frames:
        raise ValueError("cannot write an empty clip")
    doc = {
        "video_id": video_id,
        "frame_width": frames[0].frame_width,
        "frame_height": frames[0].frame_height,
        "frames": [
            {"people": [{
                "pose_keypoints_2d": f.body.reshape(-1).tolist(),
                "hand_left_keypoints_2d": f.left_hand.reshape(-1).tolist(),
                "hand_right_keypoints_2d": f.right_hand.reshape(-1).tolist(),
            }]}
            for f in frames
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


# ---------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    gloss: str
    gloss_id: int
    keypoint_path: Path
    frame_width: float
    frame_height: float


@dataclass
class DatasetManifest:
    vocabulary: list[str]
    splits: dict[str, list[ManifestEntry]] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def split(self, name: str) -> list[ManifestEntry]:
        name = _SPLIT_ALIASES.get(name, name)
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}")
        return self.splits.get(name, [])

    def sizes(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}


def load_manifest(path: str | Path, vocabulary: Sequence[str] | None = None) -> DatasetManifest:
    """Read a manifest: a JSON list of entries, or ``{"entries": [...]}``.

    Keypoint paths are resolved relative to the manifest's directory.  The
    vocabulary is the sorted set of gloss strings unless one is supplied, in
    which case every gloss must belong to it.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path}: manifest not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    records = doc["entries"] if isinstance(doc, dict) else doc
    if not isinstance(records, list):
        raise ManifestError(f"{path}: expected a list of entries")

    required = ("gloss", "video_id", "split", "keypoint_path")
    for i, rec in enumerate(records):
        missing = [k for k in required if k not in rec]
        if missing:
            raise ManifestError(f"{path}: entry {i} lacks {', '.join(missing)}")
    if vocabulary is None and isinstance(doc, dict) and "vocabulary" in doc:
        vocabulary = doc["vocabulary"]
    if vocabulary is None:
        vocabulary = sorted({rec["gloss"] for rec in records})
    vocabulary = list(vocabulary)
    index = {g: i for i, g in enumerate(vocabulary)}
    if len(index) != len(vocabulary):
        raise ManifestError(f"{path}: vocabulary has duplicate glosses")

    manifest = DatasetManifest(vocabulary=vocabulary, splits={s: [] for s in SPLITS})
    seen = set()
    for rec in records:
        split = _SPLIT_ALIASES.get(rec["split"], rec["split"])
        if split not in SPLITS:
            raise ManifestError(f"{path}: unknown split {rec['split']!r}")
        key = (rec["video_id"], split)
        if key in seen:
            raise ManifestError(f"{path}: duplicate entry for video {rec['video_id']!r} in {split}")
        seen.add(key)
        if rec["gloss"] not in index:
            raise ManifestError(f"{path}: gloss {rec['gloss']!r} not in vocabulary")
        manifest.splits[split].append(ManifestEntry(
            video_id=str(rec["video_id"]),
            gloss=rec["gloss"],
            gloss_id=index[rec["gloss"]],
            keypoint_path=path.parent / rec["keypoint_path"],
            frame_width=float(rec.get("frame_width", 0) or 0),
            frame_height=float(rec.get("frame_height", 0) or 0),
        ))
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    records = []
    for split in SPLITS:
        for e in manifest.split(split):
            kp = e.keypoint_path
            try:
                kp = kp.relative_to(path.parent)
            except ValueError:
                pass
            records.append({
                "gloss": e.gloss, "video_id": e.video_id, "split": split,
                "keypoint_path": kp.as_posix(),
                "frame_width": e.frame_width, "frame_height": e.frame_height,
            })
    doc = {"vocabulary": manifest.vocabulary, "entries": records}
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_entry(entry: ManifestEntry) -> np.ndarray:
    return load_clip(entry.keypoint_path, entry.frame_width or None, entry.frame_height or None)


def load_split(manifest: DatasetManifest, split: str) -> list[tuple[np.ndarray, int, str]]:
    """(all frames, gloss_id, video_id) for every entry of a split."""
    return [(load_entry(e), e.gloss_id, e.video_id) for e in manifest.split(split)]
