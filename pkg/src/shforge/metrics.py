"""Segmentation and quantized-depth evaluation measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricsError
from .ground_truth import DEFAULT_QUANTIZATION, DepthQuantization

N_PARTS = 14


def _check_shapes(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


@dataclass
class SegmCounts:
    """Per-part pixel counts; addable so frames can be pooled before dividing."""

    intersection: np.ndarray = field(default_factory=lambda: np.zeros(N_PARTS + 1, dtype=np.int64))
    pred: np.ndarray = field(default_factory=lambda: np.zeros(N_PARTS + 1, dtype=np.int64))
    gt: np.ndarray = field(default_factory=lambda: np.zeros(N_PARTS + 1, dtype=np.int64))
    n_pixels: int = 0

    @classmethod
    def from_maps(cls, pred, gt, n_parts: int = N_PARTS) -> "SegmCounts":
        pred, gt = _check_shapes(pred, gt)
        pred = pred.astype(np.int64).ravel()
        gt = gt.astype(np.int64).ravel()
        for name, a in (("pred", pred), ("gt", gt)):
            if a.size and (a.min() < 0 or a.max() > n_parts):
                raise MetricsError(f"{name} labels outside 0..{n_parts}")
        m = n_parts + 1
        return cls(
            intersection=np.bincount(gt[pred == gt], minlength=m),
            pred=np.bincount(pred, minlength=m),
            gt=np.bincount(gt, minlength=m),
            n_pixels=int(gt.size),
        )

    def __add__(self, other: "SegmCounts") -> "SegmCounts":
        return SegmCounts(self.intersection + other.intersection, self.pred + other.pred,
                          self.gt + other.gt, self.n_pixels + other.n_pixels)

    def per_part_iou(self) -> np.ndarray:
        inter = self.intersection[1:].astype(np.float64)
        union = (self.pred[1:] + self.gt[1:] - self.intersection[1:]).astype(np.float64)
        return np.divide(inter, union, out=np.full_like(inter, np.nan), where=union > 0)

    def per_part_recall(self) -> np.ndarray:
        inter = self.intersection[1:].astype(np.float64)
        gt = self.gt[1:].astype(np.float64)
        return np.divide(inter, gt, out=np.full_like(inter, np.nan), where=gt > 0)

    def global_accuracy(self) -> float:
        fg = self.gt[1:].sum()
        return float(self.intersection[1:].sum() / fg) if fg else math.nan


def _nanmean(a: np.ndarray) -> float:
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else math.nan


def segm_metrics(pred, gt, n_parts: int = N_PARTS) -> tuple[np.ndarray, float, float]:
    """(per-part IOU with NaN for parts absent from both maps, mean IOU, mean per-class recall)."""
    counts = SegmCounts.from_maps(pred, gt, n_parts)
    iou = counts.per_part_iou()
    return iou, _nanmean(iou), _nanmean(counts.per_part_recall())


def _foreground_depths(pred, gt, q: DepthQuantization):
    pred, gt = _check_shapes(pred, gt)
    fg = gt > 0
    if not fg.any():
        raise MetricsError("empty foreground")
    scale = q.bin_width * 1000.0
    return pred[fg].astype(np.float64) * scale, gt[fg].astype(np.float64) * scale


def _rmse(z_pred: np.ndarray, z_gt: np.ndarray) -> float:
    return float(np.sqrt(np.mean((z_pred - z_gt) ** 2)))


def fit_scale_translation(z_pred: np.ndarray, z_gt: np.ndarray) -> tuple[float, float]:
    """Least-squares (a, b) minimising sum (a * z_pred + b - z_gt)^2; a = 0 for constant z_pred."""
    if np.ptp(z_pred) == 0:
        return 0.0, float(np.mean(z_gt))
    mp, mg = z_pred.mean(), z_gt.mean()
    dp = z_pred - mp
    a = float(np.dot(dp, z_gt - mg) / np.dot(dp, dp))
    return a, float(mg - a * mp)


def _st_rmse(z_pred: np.ndarray, z_gt: np.ndarray) -> float:
    a, b = fit_scale_translation(z_pred, z_gt)
    return _rmse(a * z_pred + b, z_gt)


def depth_rmse(pred_labels, gt_labels, q: DepthQuantization = DEFAULT_QUANTIZATION) -> float:
    """RMSE in mm over ground-truth body pixels; a background prediction counts as label 0."""
    return _rmse(*_foreground_depths(pred_labels, gt_labels, q))


def st_rmse(pred_labels, gt_labels, q: DepthQuantization = DEFAULT_QUANTIZATION) -> float:
    """RMSE in mm after the best scale and translation of the prediction along z."""
    z_pred, z_gt = _foreground_depths(pred_labels, gt_labels, q)
    if z_gt.size < 2:
        raise MetricsError("st-RMSE needs at least two foreground pixels")
    return _st_rmse(z_pred, z_gt)


def joint_pixels(joints2d, shape, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """Rounded (half-up) pixel indices (rows, cols) of joints that fall inside the image."""
    j = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    cols = np.floor(j[:, 0] + 0.5)
    rows = np.floor(j[:, 1] + 0.5)
    ok = np.isfinite(cols) & np.isfinite(rows) & (cols >= 0) & (rows >= 0) & (cols < shape[1]) & (rows < shape[0])
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    return rows[ok].astype(np.int64), cols[ok].astype(np.int64)


def _pose_samples(pred_labels, gt_labels, joints2d, q, valid=None):
    pred, gt = _check_shapes(pred_labels, gt_labels)
    rows, cols = joint_pixels(joints2d, gt.shape, valid)
    g = gt[rows, cols]
    keep = g > 0
    if not keep.any():
        raise MetricsError("no usable joints")
    scale = q.bin_width * 1000.0
    return pred[rows, cols][keep].astype(np.float64) * scale, g[keep].astype(np.float64) * scale


def pose_rmse(pred_labels, gt_labels, joints2d, q: DepthQuantization = DEFAULT_QUANTIZATION,
              valid=None) -> tuple[float, float]:
    """(RMSE, st-RMSE) in mm at the pixels under known 2D joints on the body."""
    z_pred, z_gt = _pose_samples(pred_labels, gt_labels, joints2d, q, valid)
    return _rmse(z_pred, z_gt), _st_rmse(z_pred, z_gt)


# ---------------------------------------------------------------------------
# dataset-level report


@dataclass
class MetricsReport:
    per_part_iou: list[float]
    mean_iou: float
    pixel_accuracy: float
    global_accuracy: float
    rmse_mm: float
    st_rmse_mm: float
    pose_rmse_mm: float
    st_pose_rmse_mm: float
    n_frames: int
    n_pixels: int
    n_foreground_pixels: int
    n_joints: int

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, float) and math.isnan(x):
                return None
            return x

        return {k: clean(v) for k, v in self.__dict__.items()}

    def format_text(self) -> str:
        from .body_model import PART_NAMES

        def fmt(x, pct=False):
            if x is None or (isinstance(x, float) and math.isnan(x)):
                return "n/a"
            return f"{100 * x:.2f}" if pct else f"{x:.1f}"

        rows = [(PART_NAMES[p + 1], fmt(v, True)) for p, v in enumerate(self.per_part_iou)]
        rows += [
            ("mean IOU (%)", fmt(self.mean_iou, True)),
            ("pixel accuracy (%)", fmt(self.pixel_accuracy, True)),
            ("global accuracy (%)", fmt(self.global_accuracy, True)),
            ("RMSE (mm)", fmt(self.rmse_mm)),
            ("st-RMSE (mm)", fmt(self.st_rmse_mm)),
            ("PoseRMSE (mm)", fmt(self.pose_rmse_mm)),
            ("st-PoseRMSE (mm)", fmt(self.st_pose_rmse_mm)),
            ("frames", str(self.n_frames)),
            ("foreground pixels", str(self.n_foreground_pixels)),
            ("joints used", str(self.n_joints)),
        ]
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{name.ljust(w)}  {val:>8}" for name, val in rows)


class MetricsAccumulator:
    """Pools segmentation counts and squared depth errors over many frames.

    IOU and RMSE are pooled over all pixels; the scale/translation-invariant
    errors are fitted per frame and averaged over frames.
    """

    def __init__(self, q: DepthQuantization = DEFAULT_QUANTIZATION):
        self.q = q
        self.segm = SegmCounts()
        self.frames = 0
        self._sq = 0.0
        self._n = 0
        self._st = []
        self._pose_sq = 0.0
        self._pose_n = 0
        self._st_pose = []

    def add(self, pred_segm, gt_segm, pred_depth, gt_depth, joints2d=None, joints_valid=None) -> None:
        self.frames += 1
        self.segm = self.segm + SegmCounts.from_maps(pred_segm, gt_segm)
        pred_depth, gt_depth = _check_shapes(pred_depth, gt_depth)
        if (gt_depth > 0).any():
            zp, zg = _foreground_depths(pred_depth, gt_depth, self.q)
            self._sq += float(np.sum((zp - zg) ** 2))
            self._n += zp.size
            if zp.size >= 2:
                self._st.append(_st_rmse(zp, zg))
        if joints2d is not None:
            try:
                zp, zg = _pose_samples(pred_depth, gt_depth, joints2d, self.q, joints_valid)
            except MetricsError:
                return
            self._pose_sq += float(np.sum((zp - zg) ** 2))
            self._pose_n += zp.size
            self._st_pose.append(_st_rmse(zp, zg))

    def report(self) -> MetricsReport:
        iou = self.segm.per_part_iou()
        return MetricsReport(
            per_part_iou=[float(v) for v in iou],
            mean_iou=_nanmean(iou),
            pixel_accuracy=_nanmean(self.segm.per_part_recall()),
            global_accuracy=self.segm.global_accuracy(),
            rmse_mm=math.sqrt(self._sq / self._n) if self._n else math.nan,
            st_rmse_mm=float(np.mean(self._st)) if self._st else math.nan,
            pose_rmse_mm=math.sqrt(self._pose_sq / self._pose_n) if self._pose_n else math.nan,
            st_pose_rmse_mm=float(np.mean(self._st_pose)) if self._st_pose else math.nan,
            n_frames=self.frames,
            n_pixels=self.segm.n_pixels,
            n_foreground_pixels=int(self.segm.gt[1:].sum()),
            n_joints=self._pose_n,
        )
