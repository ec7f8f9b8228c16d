"""On-disk clip layout, manifests and dataset statistics.

Clip directory ``<subject>/<sequence>_o<overlap%>_c<index>/`` holds, per frame:

    rgb_NNNN.png           8-bit RGB
    segm_NNNN.png          8-bit grey, part labels 0..14
    depth_labels_NNNN.png  8-bit grey, depth classes 0..19
    depth_NNNN.shf         float32 raster, 1 channel (meters, 1e10 off-body)
    normals_NNNN.shf       float32 raster, 3 channels (camera space)
    flow_NNNN.shf          float32 raster, 2 channels (pixels, t -> t+1)

plus ``scene.json`` with the scene configuration, camera, joints and flags.
Rasters carry a 24-byte little-endian header: magic ``SHF1``, width, height,
channels, frame index, reserved (all u32), followed by row-major float32 data.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import GENERATOR_VERSION
from .camera import CameraIntrinsics, CameraPose
from .errors import CorruptRasterError, InputError, InvalidLabelError
from .ground_truth import DEFAULT_QUANTIZATION
from .renderer import FramePasses
from .scene_sampler import SceneConfig

CLIP_FORMAT = "sh-forge-clip/1"
DATASET_FORMAT = "sh-forge-dataset/1"
MANIFEST_NAME = "manifest.json"
SCENE_NAME = "scene.json"
RASTER_MAGIC = b"SHF1"
_HEADER = struct.Struct("<4sIIIII")
N_SEGM_LABELS = 14

PNG_PASSES = ("rgb", "segm", "depth_labels")
RASTER_PASSES = {"depth": ("depth_m", 1), "normals": ("normals", 3), "flow": ("flow", 2)}
PASS_NAMES = PNG_PASSES + tuple(RASTER_PASSES)


# ---------------------------------------------------------------------------
# raster files


def encode_raster(array: np.ndarray, frame_index: int = 0) -> bytes:
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    return _HEADER.pack(RASTER_MAGIC, w, h, c, frame_index, 0) + a.tobytes()


def decode_raster(raw: bytes, expected_channels: int | None = None,
                  expected_shape: tuple[int, int] | None = None) -> tuple[np.ndarray, int]:
    """Returns (array (H, W) or (H, W, C), frame index)."""
    if len(raw) < _HEADER.size:
        raise CorruptRasterError("corrupt raster: truncated header")
    magic, w, h, c, frame_index, _ = _HEADER.unpack_from(raw)
    if magic != RASTER_MAGIC:
        raise CorruptRasterError(f"corrupt raster: bad magic {magic!r}")
    if expected_channels is not None and c != expected_channels:
        raise CorruptRasterError(f"corrupt raster: {c} channels, expected {expected_channels}")
    if expected_shape is not None and (h, w) != expected_shape:
        raise CorruptRasterError(f"corrupt raster: dimension mismatch {h}x{w}, expected {expected_shape[0]}x{expected_shape[1]}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * w * h * c:
        raise CorruptRasterError(f"corrupt raster: {len(body)} data bytes, expected {4 * w * h * c}")
    a = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float32)
    return (a[..., 0] if c == 1 else a), frame_index


def write_raster(path: str | Path, array: np.ndarray, frame_index: int = 0) -> None:
    Path(path).write_bytes(encode_raster(array, frame_index))


def read_raster(path: str | Path, expected_channels: int | None = None,
                expected_shape: tuple[int, int] | None = None) -> tuple[np.ndarray, int]:
    return decode_raster(Path(path).read_bytes(), expected_channels, expected_shape)


# ---------------------------------------------------------------------------
# records


def overlap_tag(overlap: float) -> str:
    return f"o{int(round(overlap * 100)):02d}"


@dataclass
class ClipRecord:
    subject_id: str
    sequence_id: str
    overlap_variant: float
    clip_index: int
    start_frame: int
    frame_count: int
    scene: SceneConfig
    action: str | None = None
    intrinsics: CameraIntrinsics | None = None
    camera: CameraPose | None = None

    @property
    def identity(self) -> tuple[str, str, float, int]:
        return (self.subject_id, self.sequence_id, self.overlap_variant, self.clip_index)

    @property
    def relpath(self) -> str:
        return f"{self.subject_id}/{self.sequence_id}_{overlap_tag(self.overlap_variant)}_c{self.clip_index:04d}"

    def frame_files(self, t: int) -> dict[str, str]:
        return {
            "rgb": f"rgb_{t:04d}.png",
            "segm": f"segm_{t:04d}.png",
            "depth_labels": f"depth_labels_{t:04d}.png",
            "depth": f"depth_{t:04d}.shf",
            "normals": f"normals_{t:04d}.shf",
            "flow": f"flow_{t:04d}.shf",
        }

    def to_dict(self) -> dict:
        d = {
            "subject_id": self.subject_id,
            "sequence_id": self.sequence_id,
            "overlap_variant": self.overlap_variant,
            "clip_index": self.clip_index,
            "start_frame": self.start_frame,
            "frame_count": self.frame_count,
            "action": self.action,
            "path": self.relpath,
            "scene": self.scene.to_dict(),
        }
        if self.intrinsics is not None:
            d["intrinsics"] = self.intrinsics.to_dict()
        if self.camera is not None:
            d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClipRecord":
        return cls(
            subject_id=str(d["subject_id"]),
            sequence_id=str(d["sequence_id"]),
            overlap_variant=float(d["overlap_variant"]),
            clip_index=int(d["clip_index"]),
            start_frame=int(d.get("start_frame", 0)),
            frame_count=int(d["frame_count"]),
            scene=SceneConfig.from_dict(d["scene"]),
            action=d.get("action"),
            intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]) if "intrinsics" in d else None,
            camera=CameraPose.from_dict(d["camera"]) if "camera" in d else None,
        )

    def summary_dict(self) -> dict:
        """Manifest entry: everything except the camera."""
        d = self.to_dict()
        d.pop("intrinsics", None)
        d.pop("camera", None)
        return d


@dataclass
class SplitAssignment:
    subjects: dict[str, str]  # subject_id -> "train" | "test"
    test_texture_ids: list[int] = field(default_factory=list)
    test_background_ids: list[int] = field(default_factory=list)
    test_shape_ids: list[int] = field(default_factory=list)
    test_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "subjects": dict(sorted(self.subjects.items())),
            "test_texture_ids": sorted(self.test_texture_ids),
            "test_background_ids": sorted(self.test_background_ids),
            "test_shape_ids": sorted(self.test_shape_ids),
            "test_fraction": self.test_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(dict(d["subjects"]), list(d.get("test_texture_ids", [])),
                   list(d.get("test_background_ids", [])), list(d.get("test_shape_ids", [])),
                   float(d.get("test_fraction", 0.0)))

    def split_of(self, subject_id: str) -> str:
        return self.subjects[subject_id]


@dataclass
class DatasetManifest:
    clips: list[ClipRecord] = field(default_factory=list)
    master_seed: int = 0
    generator: str = GENERATOR_VERSION
    split: SplitAssignment | None = None

    def __post_init__(self):
        ids = [c.identity for c in self.clips]
        if len(ids) != len(set(ids)):
            raise InputError("duplicate clip identity in manifest")

    def to_dict(self) -> dict:
        clips = sorted(self.clips, key=lambda c: (c.subject_id, c.sequence_id, c.overlap_variant, c.clip_index))
        return {
            "format": DATASET_FORMAT,
            "generator": self.generator,
            "master_seed": self.master_seed,
            "clips": [c.summary_dict() for c in clips],
            "split": None if self.split is None else self.split.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("format") != DATASET_FORMAT:
            raise InputError(f"not a dataset manifest (format {d.get('format')!r})")
        split = d.get("split")
        return cls(
            clips=[ClipRecord.from_dict(c) for c in d.get("clips", [])],
            master_seed=int(d.get("master_seed", 0)),
            generator=str(d.get("generator", "")),
            split=None if split is None else SplitAssignment.from_dict(split),
        )


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_manifest(manifest: DatasetManifest, root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    tmp = root / f".{MANIFEST_NAME}.tmp-{os.getpid()}"
    tmp.write_text(_dumps(manifest.to_dict()))
    os.replace(tmp, path)
    return path


def read_manifest(root: str | Path) -> DatasetManifest:
    """Manifest at ``root``; a missing manifest reads as an empty dataset."""
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        return DatasetManifest()
    try:
        return DatasetManifest.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed manifest {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# clips


def _write_png(path: Path, array: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path, format="PNG", compress_level=1)


def write_clip(record: ClipRecord, frames: list[FramePasses], out_dir: str | Path,
               overwrite: bool = False) -> Path:
    """Write one clip under ``out_dir``; the clip directory appears atomically."""
    if len(frames) != record.frame_count:
        raise InputError(f"record says {record.frame_count} frames, got {len(frames)}")
    final = Path(out_dir) / record.relpath
    if final.exists() and not overwrite:
        raise FileExistsError(f"clip directory already exists: {final}")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.parent / f".{final.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        frame_meta = []
        for t, p in enumerate(frames):
            files = record.frame_files(t)
            _write_png(tmp / files["rgb"], p.rgb)
            _write_png(tmp / files["segm"], p.segm)
            _write_png(tmp / files["depth_labels"], p.depth_labels)
            for name, (attr, _) in RASTER_PASSES.items():
                write_raster(tmp / files[name], getattr(p, attr), t)
            behind = p.joints_behind if p.joints_behind is not None else np.zeros(len(p.joints2d), bool)
            frame_meta.append({
                "index": t,
                "flow_valid": bool(p.flow_valid),
                "pelvis_depth": float(p.pelvis_depth),
                "joints2d": np.asarray(p.joints2d, dtype=np.float64).tolist(),
                "joints3d": np.asarray(p.joints3d, dtype=np.float64).tolist(),
                "joints_behind": np.asarray(behind, dtype=bool).tolist(),
                "files": files,
            })
        doc = {"format": CLIP_FORMAT, "generator": GENERATOR_VERSION, "clip": record.to_dict(), "frames": frame_meta}
        (tmp / SCENE_NAME).write_text(_dumps(doc))
        if final.exists():
            shutil.rmtree(final)
        os.rename(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final


def _read_png(path: Path, mode: str, shape: tuple[int, int]) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != mode:
            raise CorruptRasterError(f"corrupt raster: {path.name} has mode {im.mode}, expected {mode}")
        a = np.asarray(im)
    if a.shape[:2] != shape:
        raise CorruptRasterError(f"corrupt raster: dimension mismatch in {path.name}")
    return a


def read_clip_meta(clip_dir: str | Path) -> tuple[ClipRecord, list[dict]]:
    path = Path(clip_dir) / SCENE_NAME
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed {path}: {exc}") from exc
    if doc.get("format") != CLIP_FORMAT:
        raise InputError(f"{path} is not a clip description")
    record = ClipRecord.from_dict(doc["clip"])
    frames = doc["frames"]
    if len(frames) != record.frame_count:
        raise InputError(f"{path}: frame_count {record.frame_count} but {len(frames)} frame entries")
    return record, frames


def read_frame(clip_dir: str | Path, record: ClipRecord, meta: dict, q=DEFAULT_QUANTIZATION) -> FramePasses:
    clip_dir = Path(clip_dir)
    t = int(meta["index"])
    files = meta["files"]
    if record.intrinsics is not None:
        shape = (record.intrinsics.height, record.intrinsics.width)
    else:
        with Image.open(clip_dir / files["segm"]) as im:
            shape = (im.height, im.width)
    segm = _read_png(clip_dir / files["segm"], "L", shape)
    if segm.max(initial=0) > N_SEGM_LABELS:
        raise InvalidLabelError(f"invalid label {int(segm.max())} in {files['segm']}")
    labels = _read_png(clip_dir / files["depth_labels"], "L", shape)
    if labels.max(initial=0) > q.n_bins:
        raise InvalidLabelError(f"invalid label {int(labels.max())} in {files['depth_labels']}")
    rgb = _read_png(clip_dir / files["rgb"], "RGB", shape)
    arrays = {}
    for name, (attr, channels) in RASTER_PASSES.items():
        a, idx = read_raster(clip_dir / files[name], channels, shape)
        if idx != t:
            raise CorruptRasterError(f"corrupt raster: {files[name]} has frame index {idx}, expected {t}")
        arrays[attr] = a
    return FramePasses(
        rgb=rgb, segm=segm, depth_labels=labels,
        joints2d=np.asarray(meta["joints2d"], dtype=np.float64),
        joints3d=np.asarray(meta["joints3d"], dtype=np.float64),
        frame_index=t, flow_valid=bool(meta["flow_valid"]),
        pelvis_depth=float(meta["pelvis_depth"]),
        joints_behind=np.asarray(meta.get("joints_behind", []), dtype=bool),
        **arrays,
    )


def read_clip(clip_dir: str | Path) -> tuple[ClipRecord, list[FramePasses]]:
    record, metas = read_clip_meta(clip_dir)
    return record, [read_frame(clip_dir, record, m) for m in metas]


def iter_clip_dirs(root: str | Path):
    """Clip directories under a dataset root, in sorted order."""
    for p in sorted(Path(root).rglob(SCENE_NAME)):
        if not any(part.startswith(".") for part in p.relative_to(root).parts):
            yield p.parent


# ---------------------------------------------------------------------------
# statistics

STATS_COLUMNS = ("#subjects", "#sequences", "#clips", "#frames")

# full-scale reference counts, kept verbatim for display only
REFERENCE_COUNTS = (
    ("Train", (115, 1964, 55001, 5342090)),
    ("Test", (30, 703, 12528, 1194662)),
    ("Total", (145, 2607, 67582, 6536752)),
)


def _count(clips: list[ClipRecord]) -> tuple[int, int, int, int]:
    return (
        len({c.subject_id for c in clips}),
        len({(c.subject_id, c.sequence_id) for c in clips}),
        len(clips),
        sum(c.frame_count for c in clips),
    )


def dataset_stats(manifest: DatasetManifest) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Rows of (#subjects, #sequences, #clips, #frames): one per split, then Total."""
    rows = []
    if manifest.split is not None:
        for name in ("train", "test"):
            members = [c for c in manifest.clips if manifest.split.subjects.get(c.subject_id) == name]
            rows.append((name.capitalize(), _count(members)))
    rows.append(("Total", _count(manifest.clips)))
    return rows


def format_stats_table(rows) -> str:
    header = ("",) + STATS_COLUMNS
    body = [(name,) + tuple(f"{v:,}" for v in values) for name, values in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for i, r in enumerate([header] + body):
        lines.append("  ".join(r[0].ljust(widths[0]) if k == 0 else cell.rjust(widths[k])
                               for k, cell in enumerate(r)))
        if i == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)
