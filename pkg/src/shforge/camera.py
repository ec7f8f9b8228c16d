"""Pinhole camera built from physical lens parameters, aimed at the pelvis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

WORLD_UP = np.array([0.0, 1.0, 0.0])
Z_NEAR = 1e-6

DEFAULT_FOCAL_MM = 60.0
DEFAULT_SENSOR_MM = 32.0
DEFAULT_WIDTH = 320
DEFAULT_HEIGHT = 240


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform; the camera looks down +z, image y points down."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        return np.asarray(points_world) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def intrinsics_from_physical(focal_mm: float = DEFAULT_FOCAL_MM,
                             sensor_width_mm: float = DEFAULT_SENSOR_MM,
                             width_px: int = DEFAULT_WIDTH,
                             height_px: int = DEFAULT_HEIGHT) -> CameraIntrinsics:
    if min(focal_mm, sensor_width_mm, width_px, height_px) <= 0:
        raise InputError("camera parameters must be positive")
    f = focal_mm / sensor_width_mm * width_px
    return CameraIntrinsics(f, f, width_px / 2.0, height_px / 2.0, int(width_px), int(height_px))


def place_camera(pelvis_world, distance: float, yaw: float) -> CameraPose:
    """Camera on a horizontal circle around the pelvis, at pelvis height, looking at it."""
    if distance <= 0:
        raise InputError("camera distance must be positive")
    pelvis = np.asarray(pelvis_world, dtype=np.float64)
    center = pelvis + distance * np.array([np.sin(yaw), 0.0, np.cos(yaw)])
    z_axis = (pelvis - center) / distance
    x_axis = np.cross(z_axis, WORLD_UP)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    rot = np.stack([x_axis, y_axis, z_axis])
    return CameraPose(rot, -rot @ center)


def project_camera_points(intr: CameraIntrinsics, p_cam: np.ndarray):
    """(N, 3) camera-space points -> (uv (N, 2), z (N,), behind (N,) bool)."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    z = p_cam[..., 2]
    behind = z <= Z_NEAR
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.cx + intr.fx * p_cam[..., 0] / z
        v = intr.cy + intr.fy * p_cam[..., 1] / z
    return np.stack([u, v], axis=-1), z, behind


def project(intr: CameraIntrinsics, pose: CameraPose, point_world):
    """Project world point(s). Returns (u, v, z_cam, behind_camera).

    Points with z_cam <= 1e-6 m are flagged as behind the camera; their
    pixel coordinates are meaningless and should be culled.
    """
    uv, z, behind = project_camera_points(intr, pose.to_camera(point_world))
    return uv[..., 0], uv[..., 1], z, behind
