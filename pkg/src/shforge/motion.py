"""Pose sequences and their division into fixed-length, overlapping clips."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import BinaryIO

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .body_model import PoseFrame
from .errors import MotionFormatError

MOTION_FORMAT = "sh-forge-motion/1"
CLIP_LEN = 100
OVERLAPS = (0.3, 0.5, 0.7)
N_JOINTS = 24


@dataclass(frozen=True)
class MotionSequence:
    subject_id: str
    sequence_id: str
    frames: tuple[PoseFrame, ...]
    fps: float = 30.0
    action: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise MotionFormatError("empty sequence")
        if not self.fps > 0:
            raise MotionFormatError("fps must be positive")
        n_joints = {f.joint_rotations.shape[0] for f in self.frames}
        if len(n_joints) != 1:
            raise MotionFormatError("frames disagree on joint count")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_joints(self) -> int:
        return self.frames[0].joint_rotations.shape[0]


@dataclass(frozen=True)
class Clip:
    sequence: MotionSequence
    start_frame: int
    length: int
    overlap_variant: float
    clip_index: int

    def __post_init__(self):
        if self.start_frame < 0 or self.length < 1 or self.start_frame + self.length > len(self.sequence):
            raise ValueError("clip range outside its sequence")

    @property
    def frames(self) -> tuple[PoseFrame, ...]:
        return self.sequence.frames[self.start_frame:self.start_frame + self.length]


def _parse_frame(row) -> PoseFrame:
    arr = np.asarray(row, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 6 or (arr.size - 3) % 3:
        raise MotionFormatError(f"malformed frame with {arr.size} values")
    if not np.all(np.isfinite(arr)):
        raise MotionFormatError("non-finite pose")
    try:
        return PoseFrame(arr[:3], arr[3:].reshape(-1, 3))
    except ValueError as exc:
        raise MotionFormatError(str(exc)) from exc


def load_motion(source: bytes | str | Path | BinaryIO) -> MotionSequence:
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    try:
        # NaN/Infinity literals are accepted by the parser, then rejected as non-finite poses
        doc = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MotionFormatError(f"malformed motion: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MOTION_FORMAT:
        raise MotionFormatError(f"malformed motion: expected format {MOTION_FORMAT!r}")
    frames = doc.get("frames")
    if not isinstance(frames, list):
        raise MotionFormatError("malformed motion: missing frame list")
    if not frames:
        raise MotionFormatError("empty sequence")
    try:
        fps = float(doc.get("fps", 30.0))
        return MotionSequence(
            subject_id=str(doc["subject_id"]),
            sequence_id=str(doc["sequence_id"]),
            frames=tuple(_parse_frame(r) for r in frames),
            fps=fps,
            action=doc.get("action"),
        )
    except (KeyError, TypeError) as exc:
        raise MotionFormatError(f"malformed motion: {exc}") from exc


def dump_motion(seq: MotionSequence) -> bytes:
    doc = {
        "format": MOTION_FORMAT,
        "subject_id": seq.subject_id,
        "sequence_id": seq.sequence_id,
        "fps": seq.fps,
        "frames": [f.root_translation.tolist() + f.joint_rotations.reshape(-1).tolist() for f in seq.frames],
    }
    if seq.action is not None:
        doc["action"] = seq.action
    return json.dumps(doc).encode("utf-8")


def load_motions(path: str | Path) -> list[MotionSequence]:
    """One motion file, or every ``*.json`` in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise MotionFormatError(f"no motion files in {path}")
        return [load_motion(f) for f in files]
    return [load_motion(path)]


def generate_test_motion(seed: int, n_frames: int, subject_id: str = "test",
                         sequence_id: str | None = None, fps: float = 30.0,
                         action: str | None = None) -> MotionSequence:
    """Smooth random trajectory: Gaussian-filtered per-joint noise plus a slow root walk."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    sigma = 6.0
    gain = math.sqrt(2.0 * math.sqrt(math.pi) * sigma)  # restores unit variance after filtering
    rot = gaussian_filter1d(rng.standard_normal((n_frames, N_JOINTS, 3)), sigma, axis=0, mode="nearest") * gain
    rot *= 0.2
    # root: slow turn about the vertical axis only
    rot[:, 0, :] = 0.0
    heading = rng.uniform(-math.pi, math.pi)
    turn = gaussian_filter1d(rng.standard_normal(n_frames), 3 * sigma, mode="nearest") * 0.15
    rot[:, 0, 1] = np.clip(turn, -1.0, 1.0)
    speed = rng.uniform(0.2, 0.8)  # m/s
    t = np.arange(n_frames) / fps
    walk = speed * t[:, None] * np.array([math.sin(heading), 0.0, math.cos(heading)])
    sway = gaussian_filter1d(rng.standard_normal((n_frames, 3)), 2 * sigma, axis=0, mode="nearest") * 0.03
    trans = walk + sway
    frames = tuple(PoseFrame(trans[i], rot[i]) for i in range(n_frames))
    return MotionSequence(subject_id, sequence_id or f"{subject_id}_{seed:03d}", frames, fps, action)


# (subject, sequence, n_frames, seed, action); the first sequence is long enough
# that its leading clips at every overlap are full length
TOY_ROSTER = (
    ("s01", "s01_01", 1000, 101, "walk"),
    ("s01", "s01_02", 240, 102, "run"),
    ("s02", "s02_01", 300, 201, "walk"),
    ("s02", "s02_02", 120, 202, "jump"),
    ("s03", "s03_01", 180, 301, "walk"),
    ("s04", "s04_01", 50, 401, "dance"),
)


def sample_motion() -> MotionSequence:
    """The bundled three-frame example file."""
    return load_motion((resources.files("shforge") / "data" / "sample_motion.json").read_bytes())


def toy_motions() -> list[MotionSequence]:
    return [generate_test_motion(seed, n, subj, seq, action=act) for subj, seq, n, seed, act in TOY_ROSTER]


def clip_stride(clip_len: int, overlap: float) -> int:
    return max(1, int(math.floor(clip_len * (1.0 - overlap) + 0.5)))


def chunk_clips(seq: MotionSequence, clip_len: int = CLIP_LEN, overlap: float = 0.3) -> list[Clip]:
    """Windows of ``clip_len`` frames starting every stride frames while start < n.

    A sequence no longer than ``clip_len`` yields exactly one clip; trailing
    windows of longer sequences may be short.
    """
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    n = len(seq)
    if n <= clip_len:
        return [Clip(seq, 0, n, overlap, 0)]
    stride = clip_stride(clip_len, overlap)
    return [Clip(seq, start, min(clip_len, n - start), overlap, i)
            for i, start in enumerate(range(0, n, stride))]
