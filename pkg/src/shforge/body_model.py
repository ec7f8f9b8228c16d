"""Parametric articulated body: shape blendshapes, joint regression, FK and LBS.

All arrays are float64 in memory. The on-disk model format stores float arrays
as base64-encoded little-endian float32 and integer arrays as plain JSON lists.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ModelFormatError

MODEL_FORMAT = "sh-forge-model/1"
N_SHAPE = 10
N_PARTS = 14
MAX_BETA = 5.0

PART_NAMES = {
    1: "head",
    2: "torso",
    3: "upper_leg_r",
    4: "upper_leg_l",
    5: "lower_leg_r",
    6: "lower_leg_l",
    7: "upper_arm_r",
    8: "upper_arm_l",
    9: "lower_arm_r",
    10: "lower_arm_l",
    11: "hand_r",
    12: "hand_l",
    13: "foot_r",
    14: "foot_l",
}

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
PELVIS = 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BodyModelDef:
    template_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    shape_blendshapes: np.ndarray  # (K, V, 3)
    joint_regressor: np.ndarray  # (J, V)
    skinning_weights: np.ndarray  # (V, J)
    kinematic_parents: np.ndarray  # (J,) int, root = -1
    part_labels: np.ndarray  # (V,) int in 1..14
    uv_coords: np.ndarray  # (V, 2)
    # reserved for pose-corrective blendshapes; never applied when None
    pose_blendshapes: np.ndarray | None = None

    def __post_init__(self):
        for name in ("template_vertices", "shape_blendshapes", "joint_regressor",
                     "skinning_weights", "uv_coords"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.float64)))
        for name in ("faces", "kinematic_parents", "part_labels"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.int64)))

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.kinematic_parents.shape[0]

    @property
    def face_part_labels(self) -> np.ndarray:
        """Per-face label: majority of the three vertex labels, ties to the smallest id."""
        return face_majority_labels(self.faces, self.part_labels)


def face_majority_labels(faces: np.ndarray, vertex_labels: np.ndarray) -> np.ndarray:
    lab = np.sort(vertex_labels[faces], axis=1)
    # with sorted triples, a majority exists iff the middle equals a neighbour
    has_majority = (lab[:, 0] == lab[:, 1]) | (lab[:, 1] == lab[:, 2])
    return np.where(has_majority, lab[:, 1], lab[:, 0])


@dataclass(frozen=True)
class ShapeCoefficients:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_SHAPE))

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if beta.shape != (N_SHAPE,):
            raise ValueError(f"expected {N_SHAPE} shape coefficients, got {beta.shape[0]}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("non-finite shape coefficients")
        object.__setattr__(self, "beta", _readonly(np.clip(beta, -MAX_BETA, MAX_BETA)))


@dataclass(frozen=True)
class PoseFrame:
    root_translation: np.ndarray  # (3,)
    joint_rotations: np.ndarray  # (J, 3) axis-angle

    def __post_init__(self):
        t = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.joint_rotations, dtype=np.float64)
        if r.ndim != 2 or r.shape[1] != 3:
            raise ValueError(f"joint_rotations must be (J, 3), got {r.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("non-finite pose")
        if np.any(np.linalg.norm(r, axis=1) > 2 * math.pi + 1e-9):
            raise ValueError("axis-angle magnitude exceeds 2*pi")
        object.__setattr__(self, "root_translation", _readonly(t))
        object.__setattr__(self, "joint_rotations", _readonly(r))

    @classmethod
    def identity(cls, n_joints: int = 24) -> "PoseFrame":
        return cls(np.zeros(3), np.zeros((n_joints, 3)))


# ---------------------------------------------------------------------------
# validation and serialization


def _tree_order(parents: np.ndarray) -> list[int]:
    """Topological order of the kinematic tree; raises if not a single-rooted tree."""
    n = len(parents)
    roots = [j for j in range(n) if parents[j] < 0]
    if len(roots) != 1:
        raise ModelFormatError(f"kinematic tree must have exactly one root, found {len(roots)}")
    if np.any(parents >= n) or np.any(parents < -1):
        raise ModelFormatError("kinematic parent index out of range")
    children: list[list[int]] = [[] for _ in range(n)]
    for j, p in enumerate(parents):
        if p >= 0:
            children[p].append(j)
    order, stack = [], [roots[0]]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != n:
        raise ModelFormatError("kinematic tree contains a cycle")
    return order


def validate_model(model: BodyModelDef) -> None:
    """Check every BodyModelDef invariant; raise naming the first one violated."""
    V = model.template_vertices.shape[0]
    J = model.kinematic_parents.shape[0]
    if model.template_vertices.ndim != 2 or model.template_vertices.shape[1] != 3 or V == 0:
        raise ModelFormatError("malformed model: template_vertices must be (V, 3)")
    if model.faces.ndim != 2 or model.faces.shape[1] != 3:
        raise ModelFormatError("malformed model: faces must be (F, 3)")
    if model.shape_blendshapes.shape != (N_SHAPE, V, 3):
        raise ModelFormatError(f"malformed model: shape_blendshapes must be ({N_SHAPE}, {V}, 3)")
    if model.joint_regressor.shape != (J, V):
        raise ModelFormatError(f"malformed model: joint_regressor must be ({J}, {V})")
    if model.skinning_weights.shape != (V, J):
        raise ModelFormatError(f"malformed model: skinning_weights must be ({V}, {J})")
    if model.part_labels.shape != (V,):
        raise ModelFormatError(f"malformed model: part_labels must be ({V},)")
    if model.uv_coords.shape != (V, 2):
        raise ModelFormatError(f"malformed model: uv_coords must be ({V}, 2)")
    for name in ("template_vertices", "shape_blendshapes", "joint_regressor", "skinning_weights", "uv_coords"):
        if not np.all(np.isfinite(getattr(model, name))):
            raise ModelFormatError(f"malformed model: non-finite values in {name}")
    if model.faces.size and (model.faces.min() < 0 or model.faces.max() >= V):
        raise ModelFormatError("face index out of range")
    _tree_order(model.kinematic_parents)
    for name, w in (("joint regressor", model.joint_regressor), ("skinning weights", model.skinning_weights)):
        if np.any(w < 0):
            raise ModelFormatError(f"{name} contain negative entries")
        bad = np.flatnonzero(np.abs(w.sum(axis=1) - 1.0) > 1e-6)
        if bad.size:
            raise ModelFormatError(f"{name} row not normalized (row {bad[0]})")
    present = set(np.unique(model.part_labels).tolist())
    extra = present - set(PART_NAMES)
    if extra:
        raise ModelFormatError(f"part label out of range: {min(extra)}")
    missing = sorted(set(PART_NAMES) - present)
    if missing:
        raise ModelFormatError(f"missing part label {missing[0]}")
    if np.any(model.uv_coords < 0) or np.any(model.uv_coords > 1):
        raise ModelFormatError("uv coordinates outside [0, 1]")


def _encode_f32(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f4")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_f32(entry: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: bad array {name!r}") from exc
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise ModelFormatError(f"malformed model: array {name!r} has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


_FLOAT_FIELDS = ("template_vertices", "shape_blendshapes", "joint_regressor", "skinning_weights", "uv_coords")
_INT_FIELDS = ("faces", "kinematic_parents", "part_labels")


def dump_model(model: BodyModelDef) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "n_vertices": model.n_vertices,
        "n_faces": int(model.faces.shape[0]),
        "n_joints": model.n_joints,
        "n_shape": N_SHAPE,
    }
    for name in _FLOAT_FIELDS:
        doc[name] = _encode_f32(getattr(model, name))
    for name in _INT_FIELDS:
        doc[name] = getattr(model, name).tolist()
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def load_model(source: bytes | str | Path | BinaryIO) -> BodyModelDef:
    """Parse a model document and validate it.

    `source` may be raw bytes, a path, or a binary file object.
    """
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if not raw.strip():
        raise ModelFormatError("malformed model: empty stream")
    try:
        doc = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"malformed model: expected format {MODEL_FORMAT!r}")
    kwargs = {}
    for name in _FLOAT_FIELDS:
        if name not in doc:
            raise ModelFormatError(f"malformed model: missing {name!r}")
        kwargs[name] = _decode_f32(doc[name], name)
    for name in _INT_FIELDS:
        try:
            kwargs[name] = np.asarray(doc[name], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model: bad integer array {name!r}") from exc
    if kwargs["faces"].size == 0:
        kwargs["faces"] = kwargs["faces"].reshape(0, 3)
    model = BodyModelDef(**kwargs)
    validate_model(model)
    return model


def save_model(model: BodyModelDef, path: str | Path) -> None:
    Path(path).write_bytes(dump_model(model))


# ---------------------------------------------------------------------------
# operations


def apply_shape(model: BodyModelDef, beta: ShapeCoefficients | np.ndarray) -> np.ndarray:
    if not isinstance(beta, ShapeCoefficients):
        beta = ShapeCoefficients(beta)
    return model.template_vertices + np.tensordot(beta.beta, model.shape_blendshapes, axes=1)


def regress_joints(model: BodyModelDef, rest_vertices: np.ndarray) -> np.ndarray:
    return model.joint_regressor @ rest_vertices


def axis_angle_to_matrix(rotvecs: np.ndarray) -> np.ndarray:
    rotvecs = np.array(rotvecs, dtype=np.float64)  # scipy needs a writable buffer
    return Rotation.from_rotvec(rotvecs.reshape(-1, 3)).as_matrix().reshape(rotvecs.shape[:-1] + (3, 3))


def forward_kinematics(rest_joints: np.ndarray, pose: PoseFrame, parents: Sequence[int]) -> np.ndarray:
    """World transforms (J, 4, 4) mapping rest-pose space to posed space.

    Joint j's transform rotates about its rest position, composed with its
    parent's; the root is additionally translated by the root translation.
    """
    parents = np.asarray(parents)
    J = len(parents)
    if pose.joint_rotations.shape[0] != J:
        raise ValueError(f"pose has {pose.joint_rotations.shape[0]} joints, model has {J}")
    rot = axis_angle_to_matrix(pose.joint_rotations)
    # global transforms of each joint frame (rotation + posed joint position)
    g_rot = np.empty((J, 3, 3))
    g_pos = np.empty((J, 3))
    for j in _tree_order(parents):
        p = parents[j]
        if p < 0:
            g_rot[j] = rot[j]
            g_pos[j] = rest_joints[j] + pose.root_translation
        else:
            g_rot[j] = g_rot[p] @ rot[j]
            g_pos[j] = g_pos[p] + g_rot[p] @ (rest_joints[j] - rest_joints[p])
    out = np.zeros((J, 4, 4))
    out[:, :3, :3] = g_rot
    out[:, :3, 3] = g_pos - np.einsum("jab,jb->ja", g_rot, rest_joints)
    out[:, 3, 3] = 1.0
    return out


def posed_joints(transforms: np.ndarray, rest_joints: np.ndarray) -> np.ndarray:
    return np.einsum("jab,jb->ja", transforms[:, :3, :3], rest_joints) + transforms[:, :3, 3]


def skin(model: BodyModelDef, rest_vertices: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Linear blend skinning: each vertex moved by its weight-blended joint transform."""
    blended = (model.skinning_weights @ transforms[:, :3, :].reshape(len(transforms), 12)).reshape(-1, 3, 4)
    return np.einsum("vab,vb->va", blended[:, :, :3], rest_vertices) + blended[:, :, 3]


def pose_model(model: BodyModelDef, beta, pose: PoseFrame,
               rest_vertices: np.ndarray | None = None,
               rest_joints: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Shape, pose and skin the model; returns (posed vertices, posed joints) in world space."""
    if rest_vertices is None:
        rest_vertices = apply_shape(model, beta)
    if rest_joints is None:
        rest_joints = regress_joints(model, rest_vertices)
    transforms = forward_kinematics(rest_joints, pose, model.kinematic_parents)
    return skin(model, rest_vertices, transforms), posed_joints(transforms, rest_joints)


# ---------------------------------------------------------------------------
# bundled low-poly humanoid

# rest-pose joint positions (meters, y up, +x is the body's left, facing +z)
TOY_JOINTS = np.array([
    [0.00, 0.00, 0.00], [0.09, -0.08, 0.00], [-0.09, -0.08, 0.00], [0.00, 0.11, 0.00],
    [0.10, -0.47, 0.00], [-0.10, -0.47, 0.00], [0.00, 0.24, 0.00], [0.10, -0.87, 0.00],
    [-0.10, -0.87, 0.00], [0.00, 0.33, 0.00], [0.11, -0.93, 0.12], [-0.11, -0.93, 0.12],
    [0.00, 0.51, 0.00], [0.07, 0.43, 0.00], [-0.07, 0.43, 0.00], [0.00, 0.60, 0.00],
    [0.18, 0.46, 0.00], [-0.18, 0.46, 0.00], [0.44, 0.46, 0.00], [-0.44, 0.46, 0.00],
    [0.69, 0.46, 0.00], [-0.69, 0.46, 0.00], [0.77, 0.46, 0.00], [-0.77, 0.46, 0.00],
])
# tip points for tubes hanging off leaf joints
_TOY_LEAF_TIPS = {
    10: [0.11, -0.93, 0.21], 11: [-0.11, -0.93, 0.21], 15: [0.00, 0.78, 0.00],
    22: [0.85, 0.46, 0.00], 23: [-0.85, 0.46, 0.00],
}
# child joint -> (part label, radius) for the tube parent(child) -> child
_TOY_BONES = {
    1: (2, 0.08), 2: (2, 0.08), 3: (2, 0.11), 4: (4, 0.075), 5: (3, 0.075),
    6: (2, 0.11), 7: (6, 0.055), 8: (5, 0.055), 9: (2, 0.11), 10: (14, 0.045),
    11: (13, 0.045), 12: (2, 0.06), 13: (2, 0.05), 14: (2, 0.05), 15: (1, 0.065),
    16: (2, 0.055), 17: (2, 0.055), 18: (8, 0.05), 19: (7, 0.05), 20: (10, 0.04),
    21: (9, 0.04), 22: (12, 0.035), 23: (11, 0.035),
}
_TOY_TIP_PARTS = {10: (14, 0.04), 11: (13, 0.04), 15: (1, 0.10), 22: (12, 0.03), 23: (11, 0.03)}
_RING = 6
_RING_S = (0.0, 0.5, 1.0)


def _perp_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = axis / np.linalg.norm(axis)
    helper = np.eye(3)[np.argmin(np.abs(a))]
    e1 = np.cross(helper, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


def toy_model() -> BodyModelDef:
    """Low-poly articulated humanoid with SMPL's 24-joint tree.

    Each bone is a closed six-sided tube. Joint regressor rows average the
    ring of vertices centred on the joint, so at zero shape the regressed
    joints reproduce ``TOY_JOINTS``. Skinning weights follow the owning bone
    with a 50/50 blend to the neighbouring bone at tube ends.
    """
    parents = np.array(SMPL_PARENTS)
    J = len(parents)
    tubes = []  # (start joint, end point, end joint or None, part, radius)
    for c in range(1, J):
        part, radius = _TOY_BONES[c]
        tubes.append((parents[c], TOY_JOINTS[c], c, part, radius))
    for j, tip in _TOY_LEAF_TIPS.items():
        part, radius = _TOY_TIP_PARTS[j]
        tubes.append((j, np.array(tip), None, part, radius))

    verts, faces, labels, uvs, weights = [], [], [], [], []
    radial, s_of = [], []
    ring_start_of_joint: dict[int, list[int]] = {}
    n_tubes = len(tubes)
    for ti, (j0, end, j1, part, radius) in enumerate(tubes):
        start = TOY_JOINTS[j0]
        axis = end - start
        e1, e2 = _perp_frame(axis)
        base = len(verts)
        for ri, s in enumerate(_RING_S):
            centre = start + s * axis
            for k in range(_RING):
                th = 2 * math.pi * k / _RING
                d = math.cos(th) * e1 + math.sin(th) * e2
                verts.append(centre + radius * d)
                radial.append(d)
                uvs.append(((ti + k / _RING) / n_tubes, s))
                s_of.append(s)
        for s, centre in ((0.0, start), (1.0, end)):
            verts.append(centre.copy())
            radial.append(np.zeros(3))
            uvs.append(((ti + 0.5) / n_tubes, s))
            s_of.append(s)
        cap0, cap1 = base + len(_RING_S) * _RING, base + len(_RING_S) * _RING + 1
        for ri in range(len(_RING_S) - 1):
            for k in range(_RING):
                a = base + ri * _RING + k
                b = base + ri * _RING + (k + 1) % _RING
                c = b + _RING
                d = a + _RING
                faces += [(a, b, c), (a, c, d)]
        last = base + (len(_RING_S) - 1) * _RING
        for k in range(_RING):
            faces.append((cap0, base + (k + 1) % _RING, base + k))
            faces.append((cap1, last + k, last + (k + 1) % _RING))
        n_new = len(verts) - base
        labels += [part] * n_new
        ring_start_of_joint.setdefault(int(j0), list(range(base, base + _RING)))
        for s in s_of[base:]:
            w = np.zeros(J)
            if s == 0.0 and parents[j0] >= 0:
                w[j0] += 0.5
                w[parents[j0]] += 0.5
            elif s == 1.0 and j1 is not None:
                w[j0] += 0.5
                w[j1] += 0.5
            else:
                w[j0] = 1.0
            weights.append(w)

    V = len(verts)
    verts = np.array(verts)
    regressor = np.zeros((J, V))
    for j in range(J):
        regressor[j, ring_start_of_joint[j]] = 1.0 / _RING
    blend = _toy_blendshapes(verts, np.array(radial), np.array(labels))
    model = BodyModelDef(
        template_vertices=verts,
        faces=np.array(faces),
        shape_blendshapes=blend,
        joint_regressor=regressor,
        skinning_weights=np.array(weights),
        kinematic_parents=parents,
        part_labels=np.array(labels),
        uv_coords=np.clip(np.array(uvs), 0.0, 1.0),
    )
    validate_model(model)
    return model


def _toy_blendshapes(v: np.ndarray, radial: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    sx = np.sign(x)
    zeros = np.zeros_like(x)
    head_centre = np.array([0.0, 0.69, 0.0])
    is_head = (labels == 1)[:, None]
    legs = np.clip((-0.08 - y) / 0.85, 0.0, 1.0)
    arms = np.where(y > 0.3, np.clip((np.abs(x) - 0.18) / 0.6, 0.0, 1.0), 0.0)
    shoulders = np.where((y > 0.35) & (np.abs(x) > 0.07), 1.0, 0.0)
    hips = np.where((y < 0.05) & (y > -0.95), 1.0, 0.0)
    belly = np.where((labels == 2) & (z > 0) & (y > 0) & (y < 0.35), z / 0.11, 0.0)
    shapes = [
        0.04 * v,
        0.012 * radial,
        np.stack([zeros, -0.03 * legs, zeros], axis=1),
        np.stack([0.025 * sx * arms, zeros, zeros], axis=1),
        np.stack([0.015 * sx * shoulders, zeros, zeros], axis=1),
        np.stack([zeros, zeros, 0.015 * belly], axis=1),
        np.stack([0.012 * sx * hips, zeros, zeros], axis=1),
        np.where(is_head, 0.1 * (v - head_centre), 0.0),
        np.stack([zeros, 0.02 * np.clip(y / 0.5, 0.0, 1.0), zeros], axis=1),
        np.stack([zeros, zeros, 0.01 * y], axis=1),
    ]
    return np.stack(shapes)
