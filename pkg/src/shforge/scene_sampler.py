"""Per-clip random scene parameters and the asset banks they index into."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .body_model import N_SHAPE, ShapeCoefficients

log = logging.getLogger(__name__)

CAESAR_LIKE = "caesar_like"
CLOTHED_LIKE = "clothed_like"
TEXTURE_SETS = (CAESAR_LIKE, CLOTHED_LIKE)
CAESAR_FRACTION = 0.2

SH_RANGE = 0.7
AMBIENT_MIN = 0.5
VERTICAL_BIAS = 0.3
VERTICAL_INDEX = 1  # band-1 coefficient of the world up axis (y)

CAMERA_DISTANCE_MEAN = 8.0
CAMERA_DISTANCE_STD = 1.0
CAMERA_DISTANCE_MIN = 2.0
SHAPE_TRUNCATION = 3.0


# ---------------------------------------------------------------------------
# asset banks


@dataclass(frozen=True)
class ImageAsset:
    """An RGB image held in memory or loaded on demand from a path."""

    source: np.ndarray | str

    def image(self) -> np.ndarray:
        if isinstance(self.source, np.ndarray):
            return self.source
        with Image.open(self.source) as im:
            return np.asarray(im.convert("RGB"))


@dataclass(frozen=True)
class TextureAsset(ImageAsset):
    texture_set: str = CLOTHED_LIKE


@dataclass
class AssetBanks:
    textures: list[TextureAsset] = field(default_factory=list)
    backgrounds: list[ImageAsset] = field(default_factory=list)
    shape_bank: list[ShapeCoefficients] = field(default_factory=list)

    def __post_init__(self):
        if not self.textures:
            log.info("empty texture bank, using procedural textures")
            self.textures = procedural_textures()
        if not self.backgrounds:
            log.info("empty background bank, using procedural backgrounds")
            self.backgrounds = procedural_backgrounds()
        for t in self.textures:
            if t.texture_set not in TEXTURE_SETS:
                raise ValueError(f"unknown texture set {t.texture_set!r}")

    def texture_ids(self, texture_set: str | None = None) -> list[int]:
        return [i for i, t in enumerate(self.textures) if texture_set in (None, t.texture_set)]


@dataclass(frozen=True)
class AssetPolicy:
    """Restricts which bank ids a clip may draw; None means unrestricted."""

    texture_ids: tuple[int, ...] | None = None
    background_ids: tuple[int, ...] | None = None
    shape_ids: tuple[int, ...] | None = None


SKIN_TONES = np.array([
    [255, 219, 172], [241, 194, 125], [224, 172, 105], [198, 134, 66],
    [141, 85, 36], [92, 58, 30], [234, 192, 134], [255, 205, 148],
], dtype=np.float64)


def procedural_textures(n_caesar: int = 8, n_clothed: int = 32, size: int = 64) -> list[TextureAsset]:
    """Skin-tone gradients with tight single-colour garments, and patterned clothing."""
    out = []
    v = np.linspace(0.0, 1.0, size)[:, None, None]
    for i in range(n_caesar):
        rng = np.random.default_rng([1, i])
        skin = SKIN_TONES[i % len(SKIN_TONES)]
        img = np.broadcast_to(skin * (0.85 + 0.15 * v), (size, size, 3)).copy()
        garment = rng.uniform(20, 120, 3)
        band = (v[:, 0, 0] > 0.3) & (v[:, 0, 0] < 0.7)
        img[band] = garment
        out.append(TextureAsset(np.clip(img, 0, 255).astype(np.uint8), CAESAR_LIKE))
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n_clothed):
        rng = np.random.default_rng([2, i])
        c1, c2 = rng.uniform(0, 255, (2, 3))
        cell = int(rng.integers(4, 17))
        checker = ((xx // cell + yy // cell) % 2).astype(bool)
        img = np.where(checker[..., None], c1, c2)
        img += rng.normal(0, 6, img.shape)
        out.append(TextureAsset(np.clip(img, 0, 255).astype(np.uint8), CLOTHED_LIKE))
    return out


def procedural_backgrounds(n: int = 16, width: int = 320, height: int = 240) -> list[ImageAsset]:
    """Flat colour fields with mild low-frequency noise."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([3, i])
        base = rng.uniform(40, 220, 3)
        coarse = rng.normal(0, 12, (height // 16 + 1, width // 16 + 1, 3))
        noise = np.kron(coarse, np.ones((16, 16, 1)))[:height, :width]
        img = base + noise + rng.normal(0, 3, (height, width, 3))
        out.append(ImageAsset(np.clip(img, 0, 255).astype(np.uint8)))
    return out


def _image_files(path: Path) -> list[Path]:
    return sorted(p for p in path.rglob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg"))


def load_banks(textures_dir: str | Path | None = None,
               backgrounds_dir: str | Path | None = None,
               shape_bank: str | Path | None = None) -> AssetBanks:
    """Build banks from image directories; ids are positions in sorted path order.

    Textures under a ``caesar_like/`` subdirectory are tagged as that set,
    everything else as clothed_like.
    """
    textures = []
    if textures_dir is not None:
        root = Path(textures_dir)
        for f in _image_files(root):
            tag = CAESAR_LIKE if CAESAR_LIKE in f.relative_to(root).parts[:-1] else CLOTHED_LIKE
            textures.append(TextureAsset(str(f), tag))
        if not textures:
            raise FileNotFoundError(f"no texture images in {root}")
    backgrounds = []
    if backgrounds_dir is not None:
        backgrounds = [ImageAsset(str(f)) for f in _image_files(Path(backgrounds_dir))]
        if not backgrounds:
            raise FileNotFoundError(f"no background images in {backgrounds_dir}")
    shapes = []
    if shape_bank is not None:
        doc = json.loads(Path(shape_bank).read_text())
        shapes = [ShapeCoefficients(np.asarray(b, dtype=np.float64)) for b in doc]
    return AssetBanks(textures, backgrounds, shapes)


# ---------------------------------------------------------------------------
# scene configuration


@dataclass(frozen=True)
class SceneConfig:
    clip_index: int
    shape: ShapeCoefficients
    texture_id: int
    texture_set: str
    background_id: int
    light: np.ndarray  # (9,) SH coefficients
    camera_distance: float
    camera_yaw: float
    rng_seed: int
    shape_id: int | None = None

    def to_dict(self) -> dict:
        return {
            "clip_index": self.clip_index,
            "shape": self.shape.beta.tolist(),
            "shape_id": self.shape_id,
            "texture_id": self.texture_id,
            "texture_set": self.texture_set,
            "background_id": self.background_id,
            "light": np.asarray(self.light).tolist(),
            "camera_distance": self.camera_distance,
            "camera_yaw": self.camera_yaw,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            clip_index=int(d["clip_index"]),
            shape=ShapeCoefficients(np.asarray(d["shape"], dtype=np.float64)),
            texture_id=int(d["texture_id"]),
            texture_set=str(d["texture_set"]),
            background_id=int(d["background_id"]),
            light=np.asarray(d["light"], dtype=np.float64),
            camera_distance=float(d["camera_distance"]),
            camera_yaw=float(d["camera_yaw"]),
            rng_seed=int(d["rng_seed"]),
            shape_id=d.get("shape_id"),
        )

    def __eq__(self, other):
        if not isinstance(other, SceneConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))


def clip_seed(master_seed: int, clip_index: int) -> int:
    """64-bit child seed; depends only on (master_seed, clip_index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(clip_index),))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_lighting(rng: np.random.Generator) -> np.ndarray:
    c = rng.uniform(-SH_RANGE, SH_RANGE, 9)
    c[0] = rng.uniform(AMBIENT_MIN, SH_RANGE)
    c[VERTICAL_INDEX] = min(c[VERTICAL_INDEX] + VERTICAL_BIAS, SH_RANGE)
    return c


def _truncated_normal(rng: np.random.Generator, n: int, bound: float) -> np.ndarray:
    out = rng.standard_normal(n)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def sample_shape(rng: np.random.Generator, shape_bank: Sequence[ShapeCoefficients] = (),
                 allowed: Sequence[int] | None = None) -> tuple[ShapeCoefficients, int | None]:
    """Uniform pick from the bank (returns its id), else truncated N(0, 1) per coefficient."""
    if shape_bank:
        ids = list(range(len(shape_bank))) if allowed is None else list(allowed)
        i = ids[int(rng.integers(len(ids)))]
        return shape_bank[i], i
    return ShapeCoefficients(_truncated_normal(rng, N_SHAPE, SHAPE_TRUNCATION)), None


def _pick(rng: np.random.Generator, ids: Sequence[int]) -> int:
    return int(ids[int(rng.integers(len(ids)))])


def sample_scene(master_seed: int, clip_index: int, banks: AssetBanks,
                 policy: AssetPolicy = AssetPolicy()) -> SceneConfig:
    seed = clip_seed(master_seed, clip_index)
    rng = np.random.default_rng(seed)

    allowed_tex = set(range(len(banks.textures)) if policy.texture_ids is None else policy.texture_ids)
    if not allowed_tex:
        raise ValueError("no textures available to this clip")
    wanted = CAESAR_LIKE if rng.random() < CAESAR_FRACTION else CLOTHED_LIKE
    pool = [i for i in banks.texture_ids(wanted) if i in allowed_tex]
    if not pool:
        pool = sorted(allowed_tex)
    texture_id = _pick(rng, pool)

    bg_ids = list(range(len(banks.backgrounds))) if policy.background_ids is None else list(policy.background_ids)
    if not bg_ids:
        raise ValueError("no backgrounds available to this clip")
    background_id = _pick(rng, bg_ids)

    shape, shape_id = sample_shape(rng, banks.shape_bank, policy.shape_ids)
    light = sample_lighting(rng)
    distance = rng.normal(CAMERA_DISTANCE_MEAN, CAMERA_DISTANCE_STD)
    while distance < CAMERA_DISTANCE_MIN:
        distance = rng.normal(CAMERA_DISTANCE_MEAN, CAMERA_DISTANCE_STD)
    yaw = rng.uniform(0.0, 2.0 * math.pi)
    return SceneConfig(
        clip_index=int(clip_index),
        shape=shape,
        texture_id=texture_id,
        texture_set=banks.textures[texture_id].texture_set,
        background_id=background_id,
        light=light,
        camera_distance=float(distance),
        camera_yaw=float(yaw),
        rng_seed=seed,
        shape_id=shape_id,
    )
