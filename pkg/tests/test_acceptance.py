"""Acceptance suite: one test per criterion, summarised at the end of the run.

Run standalone with ``python tests/test_acceptance.py`` or ``pytest tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import tree_digest
from oracles import homogeneous, rmse_loop, rodrigues, segm_counts, st_rmse_grid
from shforge.body_model import N_SHAPE, SMPL_PARENTS, PoseFrame, apply_shape, forward_kinematics, regress_joints, skin
from shforge.camera import CameraPose
from shforge.cli import main
from shforge.dataset_io import (STATS_COLUMNS, ClipRecord, decode_raster, encode_raster, format_stats_table,
                                iter_clip_dirs, read_clip, read_manifest, write_clip)
from shforge.errors import CorruptRasterError
from shforge.ground_truth import dequantize, quantize_depth
from shforge.metrics import depth_rmse, segm_metrics, st_rmse
from shforge.motion import OVERLAPS, Clip, MotionSequence, chunk_clips, clip_stride
from shforge.renderer import ClipRenderer, coverage_violations, rasterize, render_flow, sh_basis, shade_sh, to_uint8
from shforge.scene_sampler import CAESAR_LIKE, AssetBanks, sample_scene
from shforge.splitter import asset_policy, assign_split_records

GEN = ["generate", "--toy", "--seed", "7", "--max-clips", "10"]


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    runs, times = {}, {}
    for name, extra in (("a", []), ("b", []), ("w8", ["--workers", "8"])):
        t0 = time.perf_counter()
        assert main(GEN + extra + ["--out", str(root / name)]) == 0
        times[name] = time.perf_counter() - t0
        runs[name] = root / name
    return runs, times


@pytest.mark.criterion(1, "pipeline determinism and runtime")
def test_c01_determinism(toy_runs, record_property):
    runs, times = toy_runs
    digests = {k: tree_digest(v) for k, v in runs.items()}
    record_property("max_runtime_s", f"{max(times.values()):.1f}")
    record_property("identical", len(set(digests.values())) == 1)
    assert len(set(digests.values())) == 1
    assert sum(c.frame_count for c in read_manifest(runs["a"]).clips) == 1000
    assert max(times.values()) < 60.0


@pytest.mark.criterion(2, "coverage consistency over 1000 frames")
def test_c02_coverage(toy_runs, record_property):
    runs, _ = toy_runs
    n_frames = violations = 0
    for clip_dir in iter_clip_dirs(runs["a"]):
        _, frames = read_clip(clip_dir)
        for p in frames:
            violations += coverage_violations(p)
            n_frames += 1
    record_property("frames", n_frames)
    record_property("violations", violations)
    assert n_frames >= 1000 and violations == 0


@pytest.mark.criterion(3, "flow oracle for rigid translation")
def test_c03_flow(model, intr, record_property):
    assert intr.fx == 600
    cam = CameraPose(np.eye(3), np.zeros(3))
    centred = model.template_vertices - model.template_vertices.mean(axis=0)
    v0 = centred * [-1, 1, -1] + [0, 0, 8.0]
    geom = rasterize(v0, model.faces, intr, cam)
    flow = render_flow(geom, model.faces, v0, v0 + [0.08, 0, 0], intr, cam)
    m = geom.covered
    ok = np.abs(flow[m, 0] - 6.0) <= 0.1
    frac = float(ok.mean())
    static = render_flow(geom, model.faces, v0, v0.copy(), intr, cam)
    analytic_err = float(np.abs(flow[m, 0] - intr.fx * 0.08 / geom.depth[m]).max())
    record_property("within_0.1px", f"{frac:.4f}")
    record_property("depth_range_m", f"{geom.depth[m].min():.3f}..{geom.depth[m].max():.3f}")
    record_property("max_err_vs_fx*dx/z", f"{analytic_err:.1e}")
    assert m.sum() > 100 and frac >= 0.99
    assert not static.any()


@pytest.mark.criterion(4, "depth quantization sweep")
def test_c04_quantization(record_property):
    pelvis = 8.0
    offsets = np.arange(-1000, 1001) / 1000.0
    labels = quantize_depth((pelvis + offsets)[None], pelvis)[0]
    in_range = np.abs(offsets) < 9.5 * 0.045
    err = np.abs(dequantize(labels[in_range]) - offsets[in_range]).max()
    record_property("max_roundtrip_mm", f"{err * 1000:.3f}")
    assert err <= 0.0225 + 1e-12
    assert labels[1000] == 10
    assert (labels[offsets <= -9.5 * 0.045] == 1).all() and (labels[offsets >= 9.5 * 0.045] == 19).all()
    assert (np.diff(labels) >= 0).all()


@pytest.mark.criterion(5, "spherical-harmonic shading")
def test_c05_shading(record_property):
    rng = np.random.default_rng(0)
    n = rng.normal(size=(1_000_000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    coeffs = np.zeros(9)
    coeffs[0] = 1.0
    albedo = rng.uniform(0, 1, (1000, 3))
    img = to_uint8(shade_sh(n[:1000], albedo, coeffs))
    expected = albedo * (1 / (2 * math.sqrt(math.pi))) * 255
    step = float(np.abs(img - expected).max())
    y = sh_basis(n)
    gram_err = float(np.abs(4 * math.pi * (y.T @ y) / len(y) - np.eye(9)).max())
    record_property("max_level_error", f"{step:.3f}")
    record_property("gram_error", f"{gram_err:.2e}")
    assert step <= 1.0 and gram_err <= 5e-3


@pytest.mark.criterion(6, "scene sampler statistics")
def test_c06_sampler(banks, record_property):
    scenes = [sample_scene(6, i, banks) for i in range(10_000)]
    d = np.array([s.camera_distance for s in scenes])
    light = np.stack([s.light for s in scenes])
    bound_violations = int(((light < -0.7) | (light > 0.7)).sum() + (light[:, 0] < 0.5).sum())
    caesar = float(np.mean([s.texture_set == CAESAR_LIKE for s in scenes]))
    record_property("distance", f"{d.mean():.3f}+-{d.std():.3f}")
    record_property("caesar_fraction", f"{caesar:.4f}")
    assert abs(d.mean() - 8) <= 0.05 and abs(d.std() - 1) <= 0.05
    assert bound_violations == 0 and abs(caesar - 0.2) <= 0.02


@pytest.mark.criterion(7, "clip chunking stride rule")
def test_c07_chunking(record_property):
    checked = 0
    for n in (50, 100, 240, 1000):
        seq = MotionSequence("s", "s_1", tuple(PoseFrame.identity() for _ in range(n)))
        for ov in OVERLAPS:
            stride = clip_stride(100, ov)
            assert stride == round(100 * (1 - ov))
            # one clip when the sequence fits; otherwise every start below n
            starts = [0] if n <= 100 else list(range(0, n, stride))
            expected = [(s0, min(100, n - s0)) for s0 in starts]
            got = [(c.start_frame, c.length) for c in chunk_clips(seq, 100, ov)]
            assert got == expected, (n, ov)
            checked += 1
    record_property("cases", checked)


@pytest.mark.criterion(8, "metrics oracle equivalence")
def test_c08_metrics(record_property):
    rng = np.random.default_rng(8)
    worst_rel = worst_st = 0.0
    for _ in range(1000):
        gt = rng.integers(0, 15, (16, 16))
        pred = np.where(rng.random((16, 16)) < 0.6, gt, rng.integers(0, 15, (16, 16)))
        gd = np.where(gt > 0, rng.integers(1, 20, (16, 16)), 0)
        pd = np.clip(gd + rng.integers(-3, 4, (16, 16)), 0, 19)
        iou, miou, acc = segm_metrics(pred, gt)
        inter, union, gtc = segm_counts(pred, gt)
        present = [k for k in range(1, 15) if union[k]]
        assert [iou[k - 1] for k in present] == [inter[k] / union[k] for k in present]
        assert miou == np.mean([inter[k] / union[k] for k in present])
        recalls = [inter[k] / gtc[k] for k in range(1, 15) if gtc[k]]
        assert acc == np.mean(recalls)
        r = depth_rmse(pd, gd)
        worst_rel = max(worst_rel, abs(r - rmse_loop(pd, gd)) / rmse_loop(pd, gd))
        s = st_rmse(pd, gd)
        worst_st = max(worst_st, abs(s - st_rmse_grid(pd, gd)))
        assert s <= r + 1e-9
    record_property("rmse_rel_err", f"{worst_rel:.1e}")
    record_property("st_grid_gap_mm", f"{worst_st:.4f}")
    assert worst_rel <= 1e-9 and worst_st <= 0.1


def _roster(seed=0, total=6_536_752, n_subjects=145):
    rng = np.random.default_rng(seed)
    w = rng.lognormal(0.0, 0.8, n_subjects)
    frames = np.floor(w / w.sum() * total).astype(int)
    frames[0] += total - frames.sum()
    recs = []
    for s, f in enumerate(frames):
        n_seq = int(rng.integers(5, 30))
        for q, fq in enumerate(np.diff(np.linspace(0, f, n_seq + 1).astype(int))):
            recs.append(ClipRecord(f"S{s:03d}", f"S{s:03d}_{q:02d}", 0.3, 0, 0, int(fq),
                                   sample_scene(0, 0, AssetBanks())))
    return recs


@pytest.mark.criterion(9, "subject-disjoint split with held-out assets")
def test_c09_split(banks, record_property):
    recs = _roster()
    split = assign_split_records(recs, banks, 0.2, seed=0)
    target = 1194662 / 6536752
    record_property("test_fraction", f"{split.test_fraction:.4f}")
    assert abs(split.test_fraction - target) <= 0.03
    sides = {v: k for k, v in split.subjects.items()}
    p_train, p_test = asset_policy(split, sides["train"], banks), asset_policy(split, sides["test"], banks)
    assert not set(p_train.texture_ids) & set(p_test.texture_ids)
    assert not set(p_train.background_ids) & set(p_test.background_ids)
    assert p_test.texture_ids and p_test.background_ids


@pytest.mark.criterion(10, "skinning identity and rigid equivariance")
def test_c10_skinning(model, record_property):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        v = apply_shape(model, rng.normal(0, 1, N_SHAPE))
        assert np.array_equal(skin(model, v, np.broadcast_to(np.eye(4), (24, 4, 4))), v)
        pose = PoseFrame(rng.normal(0, 1, 3), rng.normal(0, 0.8, (24, 3)))
        T = forward_kinematics(regress_joints(model, v), pose, SMPL_PARENTS)
        G = homogeneous(rodrigues(rng.normal(0, 1.5, 3)), rng.normal(0, 2, 3))
        lhs = skin(model, v, G @ T)
        rhs = skin(model, v, T) @ G[:3, :3].T + G[:3, 3]
        worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
    record_property("max_rel_err", f"{worst:.1e}")
    assert worst <= 1e-6


@pytest.mark.criterion(11, "clip I/O round trip and corrupt headers")
def test_c11_io(model, banks, intr, tmp_path, record_property):
    rng = np.random.default_rng(11)
    seq = MotionSequence("io", "io_1", tuple(PoseFrame(rng.normal(0, 0.05, 3), rng.normal(0, 0.2, (24, 3)))
                                             for _ in range(4)))
    scene = sample_scene(11, 0, banks)
    r = ClipRenderer(model, Clip(seq, 0, 4, 0.3, 0), scene, banks, intr)
    frames = list(r)
    rec = ClipRecord("io", "io_1", 0.3, 0, 0, 4, scene, None, intr, r.camera)
    _, back = read_clip(write_clip(rec, frames, tmp_path))
    assert all(a.equals(b) for a, b in zip(frames, back))
    raw = encode_raster(np.ones((3, 3), np.float32))
    rejected = 0
    for bad in (raw[:10], b"XXXX" + raw[4:], raw[:-4], raw + b"\0" * 4):
        with pytest.raises(CorruptRasterError, match="corrupt raster"):
            decode_raster(bad)
        rejected += 1
    record_property("corrupt_fixtures_rejected", rejected)


@pytest.mark.criterion(12, "stats schema and counting oracle")
def test_c12_stats(toy_runs, capsys, record_property):
    import json

    runs, _ = toy_runs
    root = runs["a"]
    capsys.readouterr()
    assert main(["stats", "--data", str(root), "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    # oracle: walk the tree
    subjects, sequences, clips, frames = set(), set(), 0, 0
    for subj in Path(root).iterdir():
        if not subj.is_dir():
            continue
        for clip in subj.iterdir():
            if clip.name.startswith("."):
                continue
            subjects.add(subj.name)
            sequences.add(clip.name.rsplit("_o", 1)[0])
            clips += 1
            frames += len(list(clip.glob("rgb_*.png")))
    total = rows["Total"]
    record_property("total", f"{total}")
    assert (total["subjects"], total["sequences"], total["clips"], total["frames"]) == (
        len(subjects), len(sequences), clips, frames)
    header = format_stats_table([("Total", tuple(total.values()))]).splitlines()[0]
    assert all(col in header for col in STATS_COLUMNS)
    assert list(rows)[-1] == "Total"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
