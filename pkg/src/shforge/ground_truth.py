"""Pelvis-relative quantized depth labels and joint annotations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, CameraPose, project_camera_points
from .errors import InvalidLabelError

BACKGROUND_DEPTH = 1e10


@dataclass(frozen=True)
class DepthQuantization:
    bin_width: float = 0.045  # meters
    n_bins: int = 19

    def __post_init__(self):
        if self.n_bins % 2 != 1 or self.n_bins < 1:
            raise ValueError("n_bins must be odd")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")

    @property
    def half(self) -> int:
        return self.n_bins // 2

    @property
    def center_label(self) -> int:
        return self.half + 1


DEFAULT_QUANTIZATION = DepthQuantization()


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5)


def quantize_depth(depth_m: np.ndarray, pelvis_z_cam: float,
                   q: DepthQuantization = DEFAULT_QUANTIZATION) -> np.ndarray:
    """Labels 1..n_bins for covered pixels (centre bin at the pelvis), 0 for background.

    Covered means a finite depth below the background sentinel. Depths past the
    outermost bins clamp into them.
    """
    if not np.isfinite(pelvis_z_cam):
        raise ValueError("pelvis depth must be finite")
    depth_m = np.asarray(depth_m, dtype=np.float64)
    covered = np.isfinite(depth_m) & (depth_m < BACKGROUND_DEPTH)
    offset = np.where(covered, depth_m - pelvis_z_cam, 0.0)
    k = np.clip(_round_half_up(offset / q.bin_width), -q.half, q.half)
    return np.where(covered, k + q.center_label, 0).astype(np.uint8)


def dequantize(label, q: DepthQuantization = DEFAULT_QUANTIZATION):
    """Bin-centre offset from the pelvis in meters."""
    lab = np.asarray(label)
    if np.any(lab == 0):
        raise InvalidLabelError("background has no depth")
    if np.any((lab < 0) | (lab > q.n_bins)):
        raise InvalidLabelError(f"depth label outside 1..{q.n_bins}")
    out = (lab.astype(np.float64) - q.center_label) * q.bin_width
    return float(out) if out.ndim == 0 else out


def joints_annotation(posed_joints_world: np.ndarray, intr: CameraIntrinsics, pose: CameraPose):
    """Returns (joints2d (J, 2) px, joints3d (J, 3) camera meters, behind (J,) bool).

    2D positions are kept even when outside the image.
    """
    joints3d = pose.to_camera(posed_joints_world)
    uv, _, behind = project_camera_points(intr, joints3d)
    return uv, joints3d, behind
