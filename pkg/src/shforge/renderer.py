"""Triangle rasterization and the per-frame ground-truth passes.

The scan-conversion kernel comes from the compiled extension when it is
importable, otherwise from the numpy fallback. Set ``SHFORGE_BACKEND=python``
to force the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageOps

from . import _raster_py
from .body_model import BodyModelDef, PELVIS, apply_shape, pose_model, regress_joints
from .camera import CameraIntrinsics, CameraPose, intrinsics_from_physical, place_camera, project_camera_points
from .ground_truth import BACKGROUND_DEPTH, DEFAULT_QUANTIZATION, DepthQuantization, joints_annotation, quantize_depth
from .motion import Clip
from .scene_sampler import AssetBanks, SceneConfig

if os.environ.get("SHFORGE_BACKEND", "").lower() == "python":
    _kernel = _raster_py.rasterize_kernel
    BACKEND = "python"
else:
    try:
        from ._raster_ext import rasterize_kernel as _kernel

        BACKEND = "cython"
    except ImportError:
        _kernel = _raster_py.rasterize_kernel
        BACKEND = "python"

KERNELS = {"python": _raster_py.rasterize_kernel}
try:
    from ._raster_ext import rasterize_kernel as _ext_kernel

    KERNELS["cython"] = _ext_kernel
except ImportError:
    pass

NO_FACE = -1


@dataclass(frozen=True)
class GeometryBuffers:
    face_id: np.ndarray  # (H, W) int32, NO_FACE on background
    bary: np.ndarray  # (H, W, 3) perspective-correct barycentrics
    depth: np.ndarray  # (H, W) camera z in meters, inf on background

    @property
    def covered(self) -> np.ndarray:
        return self.face_id != NO_FACE


@dataclass
class FramePasses:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth_m: np.ndarray  # (H, W) float32, BACKGROUND_DEPTH off-body
    segm: np.ndarray  # (H, W) uint8, 0..14
    normals: np.ndarray  # (H, W, 3) float32 camera space, zero off-body
    flow: np.ndarray  # (H, W, 2) float32 px, frame t -> t+1
    joints2d: np.ndarray  # (J, 2) px
    joints3d: np.ndarray  # (J, 3) camera meters
    depth_labels: np.ndarray  # (H, W) uint8, 0..19
    frame_index: int = 0
    flow_valid: bool = True
    pelvis_depth: float = 0.0
    joints_behind: np.ndarray | None = None

    ARRAY_FIELDS = ("rgb", "depth_m", "segm", "normals", "flow", "depth_labels", "joints2d", "joints3d")

    def equals(self, other: "FramePasses") -> bool:
        """Bit-exact comparison of every array and flag."""
        return (all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.ARRAY_FIELDS)
                and self.frame_index == other.frame_index and self.flow_valid == other.flow_valid)


def coverage_violations(p: FramePasses, tol: float = 1e-4) -> int:
    """Pixels where the segm / depth / normal / depth-label coverage masks disagree."""
    seg = p.segm > 0
    dep = p.depth_m < BACKGROUND_DEPTH
    norm = np.linalg.norm(p.normals.astype(np.float64), axis=-1)
    unit = np.abs(norm - 1.0) <= tol
    zero = norm == 0.0
    lab = p.depth_labels > 0
    bad = (seg != dep) | (seg != unit) | (seg != lab) | ~(unit | zero)
    return int(bad.sum())


# ---------------------------------------------------------------------------
# rasterization


def to_screen(points_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """(N, 3) camera points -> contiguous (N, 3) array of (u, v, z)."""
    uv, z, behind = project_camera_points(intr, points_cam)
    uv[behind] = 0.0
    return np.ascontiguousarray(np.column_stack([uv, z]), dtype=np.float64)


def rasterize_screen(screen: np.ndarray, faces: np.ndarray, width: int, height: int,
                     backend: str | None = None) -> GeometryBuffers:
    kernel = _kernel if backend is None else KERNELS[backend]
    faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
    face_id, bary, depth = kernel(np.ascontiguousarray(screen, dtype=np.float64), faces, int(width), int(height))
    return GeometryBuffers(face_id, bary, depth)


def rasterize(posed_vertices: np.ndarray, faces: np.ndarray, intr: CameraIntrinsics,
              pose: CameraPose, backend: str | None = None) -> GeometryBuffers:
    """Z-buffered, perspective-correct scan conversion; pixel centres at (x+0.5, y+0.5).

    No backface culling. Triangles with any vertex at or behind z = 1e-6 m are
    dropped. Depth ties keep the lower face index.
    """
    screen = to_screen(pose.to_camera(posed_vertices), intr)
    return rasterize_screen(screen, faces, intr.width, intr.height, backend)


# ---------------------------------------------------------------------------
# shading

_C0 = 0.5 / math.sqrt(math.pi)
_C1 = math.sqrt(3.0 / (4.0 * math.pi))
_C2 = 0.5 * math.sqrt(15.0 / math.pi)
_C3 = 0.25 * math.sqrt(5.0 / math.pi)
_C4 = 0.25 * math.sqrt(15.0 / math.pi)


def sh_basis(n: np.ndarray) -> np.ndarray:
    """Real SH bands 0-2 at unit directions (..., 3) -> (..., 9).

    Order: Y00; Y1-1 (y), Y10 (z), Y11 (x); Y2-2 (xy), Y2-1 (yz), Y20 (3z^2-1), Y21 (xz), Y22 (x^2-y^2).
    """
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack([
        np.full_like(x, _C0),
        _C1 * y, _C1 * z, _C1 * x,
        _C2 * x * y, _C2 * y * z, _C3 * (3.0 * z * z - 1.0), _C2 * x * z, _C4 * (x * x - y * y),
    ], axis=-1)


def irradiance(normals_world: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    return sh_basis(normals_world) @ np.asarray(coeffs, dtype=np.float64)


def shade_sh(normals_world: np.ndarray, albedo: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Linear RGB = albedo * max(E(n), 0), one irradiance shared by all channels."""
    e = np.maximum(irradiance(normals_world, coeffs), 0.0)
    return np.asarray(albedo, dtype=np.float64) * e[..., None]


def to_uint8(rgb_linear: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(255.0 * rgb_linear + 0.5), 0, 255).astype(np.uint8)


def composite(shaded_rgb: np.ndarray, coverage: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Hard-mask overlay of the body on the background."""
    return np.where(coverage[..., None], shaded_rgb, background).astype(np.uint8)


def fit_background(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Centre-crop and resize to exactly (height, width)."""
    if image.shape[:2] == (height, width):
        return np.ascontiguousarray(image[..., :3], dtype=np.uint8)
    im = ImageOps.fit(Image.fromarray(np.asarray(image, dtype=np.uint8)[..., :3]), (width, height),
                      method=Image.Resampling.BILINEAR)
    return np.asarray(im)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (unit; zero for isolated vertices)."""
    tri = vertices[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    idx = faces.reshape(-1)
    n = np.stack([np.bincount(idx, weights=np.repeat(fn[:, k], 3), minlength=len(vertices)) for k in range(3)],
                 axis=1)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def _interpolate(attr: np.ndarray, faces: np.ndarray, face_id: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of per-vertex attributes at covered pixels (flattened)."""
    corners = attr[faces[face_id]]  # (N, 3, C)
    return np.einsum("nk,nkc->nc", bary, corners)


def render_flow(geom: GeometryBuffers, faces: np.ndarray, vertices_t: np.ndarray, vertices_t1: np.ndarray,
                intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Forward flow in pixels: each visible surface point, carried by its face, projected at t and t+1."""
    h, w = geom.face_id.shape
    flow = np.zeros((h, w, 2), dtype=np.float64)
    mask = geom.covered
    if not mask.any():
        return flow
    fid = geom.face_id[mask]
    b = geom.bary[mask]
    p0 = _interpolate(vertices_t, faces, fid, b)
    p1 = _interpolate(vertices_t1, faces, fid, b)
    uv0, _, _ = project_camera_points(intr, pose.to_camera(p0))
    uv1, z1, behind = project_camera_points(intr, pose.to_camera(p1))
    d = uv1 - uv0
    d[behind] = 0.0
    flow[mask] = d
    return flow


def sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Nearest-texel lookup, v = 0 at the bottom row. Returns albedo in [0, 1]."""
    th, tw = texture.shape[:2]
    col = np.clip((uv[:, 0] * tw).astype(np.int64), 0, tw - 1)
    row = np.clip(((1.0 - uv[:, 1]) * th).astype(np.int64), 0, th - 1)
    return texture[row, col, :3].astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# frame composition


class ClipRenderer:
    """Renders every frame of one clip with a fixed scene configuration.

    Shape, texture, background and camera are resolved once. The camera is
    aimed at the pelvis of the clip's first frame and stays put; posed
    geometry is cached so frame t can look ahead to t+1 for flow.
    """

    def __init__(self, model: BodyModelDef, clip: Clip, scene: SceneConfig, banks: AssetBanks,
                 intr: CameraIntrinsics | None = None, q: DepthQuantization = DEFAULT_QUANTIZATION,
                 backend: str | None = None):
        self.model = model
        self.clip = clip
        self.scene = scene
        self.intr = intr or intrinsics_from_physical()
        self.q = q
        self.backend = backend
        self.faces = np.ascontiguousarray(model.faces, dtype=np.int64)
        self.face_labels = model.face_part_labels.astype(np.uint8)
        self.rest_vertices = apply_shape(model, scene.shape)
        self.rest_joints = regress_joints(model, self.rest_vertices)
        self.texture = banks.textures[scene.texture_id].image()
        self.background = fit_background(banks.backgrounds[scene.background_id].image(),
                                         self.intr.width, self.intr.height)
        self._posed: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        _, joints0 = self.posed(0)
        self.camera = place_camera(joints0[PELVIS], scene.camera_distance, scene.camera_yaw)

    def __len__(self) -> int:
        return self.clip.length

    def posed(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if t not in self._posed:
            if len(self._posed) > 2:
                for k in sorted(self._posed)[:-2]:
                    del self._posed[k]
            self._posed[t] = pose_model(self.model, self.scene.shape, self.clip.frames[t],
                                        self.rest_vertices, self.rest_joints)
        return self._posed[t]

    def render(self, t: int) -> FramePasses:
        if not 0 <= t < self.clip.length:
            raise IndexError(f"frame {t} outside clip of length {self.clip.length}")
        intr, cam = self.intr, self.camera
        h, w = intr.height, intr.width
        verts, joints = self.posed(t)
        geom = rasterize(verts, self.faces, intr, cam, self.backend)
        mask = geom.covered
        fid = geom.face_id[mask]
        b = geom.bary[mask]

        depth_m = np.full((h, w), BACKGROUND_DEPTH, dtype=np.float32)
        depth_m[mask] = geom.depth[mask]

        segm = np.zeros((h, w), dtype=np.uint8)
        segm[mask] = self.face_labels[fid]

        n_world = _interpolate(vertex_normals(verts, self.faces), self.faces, fid, b)
        n_len = np.linalg.norm(n_world, axis=1, keepdims=True)
        degenerate = n_len[:, 0] < 1e-12
        if degenerate.any():
            tri = verts[self.faces[fid[degenerate]]]
            fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
            n_world[degenerate] = fn
            n_len[degenerate] = np.linalg.norm(fn, axis=1, keepdims=True)
        n_world = n_world / n_len
        normals = np.zeros((h, w, 3), dtype=np.float32)
        normals[mask] = n_world @ cam.rotation.T

        uv = _interpolate(self.model.uv_coords, self.faces, fid, b)
        albedo = sample_texture(self.texture, uv)
        shaded = np.zeros((h, w, 3), dtype=np.uint8)
        shaded[mask] = to_uint8(shade_sh(n_world, albedo, self.scene.light))
        rgb = composite(shaded, mask, self.background)

        last = t == self.clip.length - 1
        if last:
            flow = np.zeros((h, w, 2), dtype=np.float32)
        else:
            verts1, _ = self.posed(t + 1)
            flow = render_flow(geom, self.faces, verts, verts1, intr, cam).astype(np.float32)

        joints2d, joints3d, behind = joints_annotation(joints, intr, cam)
        pelvis_z = float(joints3d[PELVIS, 2])
        depth_labels = quantize_depth(depth_m.astype(np.float64), pelvis_z, self.q)
        return FramePasses(
            rgb=rgb, depth_m=depth_m, segm=segm, normals=normals, flow=flow,
            joints2d=joints2d, joints3d=joints3d, depth_labels=depth_labels,
            frame_index=t, flow_valid=not last, pelvis_depth=pelvis_z, joints_behind=behind,
        )

    def __iter__(self):
        for t in range(self.clip.length):
            yield self.render(t)


def render_frame(scene: SceneConfig, model: BodyModelDef, clip: Clip, t: int, banks: AssetBanks,
                 intr: CameraIntrinsics | None = None) -> FramePasses:
    return ClipRenderer(model, clip, scene, banks, intr).render(t)
