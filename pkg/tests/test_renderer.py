import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import inside_triangle, ray_mesh_depth
from shforge.body_model import PELVIS, PoseFrame, face_majority_labels
from shforge.camera import CameraIntrinsics, CameraPose, place_camera
from shforge.ground_truth import BACKGROUND_DEPTH
from shforge.motion import Clip, MotionSequence
from shforge.renderer import (BACKEND, KERNELS, ClipRenderer, composite, coverage_violations, fit_background,
                              irradiance, rasterize, rasterize_screen, render_flow, render_frame, sample_texture,
                              sh_basis, shade_sh, to_uint8, vertex_normals)
from shforge.scene_sampler import sample_scene

BACKENDS = sorted(KERNELS)


def _still_clip(n=3, rotations=None):
    rot = np.zeros((24, 3)) if rotations is None else rotations
    seq = MotionSequence("t", "t_1", tuple(PoseFrame(np.zeros(3), rot) for _ in range(n)))
    return Clip(seq, 0, n, 0.3, 0)


@pytest.fixture(scope="module")
def toy_renderer(model, banks, intr):
    rng = np.random.default_rng(4)
    rot = rng.normal(0, 0.3, (24, 3))
    rot[0] = [0, 0.6, 0]
    scene = sample_scene(11, 3, banks)
    return ClipRenderer(model, _still_clip(2, rot), scene, banks, intr)


# -- rasterization -------------------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("tri", [
    [(1.0, 1.0), (7.0, 1.0), (1.0, 7.0)],
    [(0.5, 0.5), (6.5, 2.5), (2.5, 7.5)],  # vertices exactly on pixel centres
    [(7.9, 0.2), (0.1, 3.3), (5.0, 7.7)],  # clockwise
    [(-3.0, 2.0), (11.0, 4.0), (4.0, 12.0)],  # clipped by the viewport
])
def test_coverage_matches_point_in_triangle_oracle(tri, backend):
    screen = np.array([[x, y, 2.0] for x, y in tri])
    geom = rasterize_screen(screen, np.array([[0, 1, 2]]), 8, 8, backend)
    oracle = np.array([[inside_triangle(x + 0.5, y + 0.5, *tri) for x in range(8)] for y in range(8)])
    assert np.array_equal(geom.covered, oracle)
    assert np.isfinite(geom.depth[oracle]).all() and np.isinf(geom.depth[~oracle]).all()


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_mesh_is_all_background(backend, intr):
    geom = rasterize(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), intr, CameraPose(np.eye(3), np.zeros(3)),
                     backend)
    assert not geom.covered.any() and np.isinf(geom.depth).all()


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("near_first", [True, False])
def test_nearest_surface_wins(backend, near_first):
    near = [[0.0, 0.0, 2.0], [6.0, 0.0, 2.0], [0.0, 6.0, 2.0]]
    far = [[2.0, 2.0, 3.0], [8.0, 2.0, 3.0], [2.0, 8.0, 3.0]]
    screen = np.array(near + far if near_first else far + near)
    geom = rasterize_screen(screen, np.array([[0, 1, 2], [3, 4, 5]]), 8, 8, backend)
    near_id = 0 if near_first else 1
    both = np.array([[inside_triangle(x + 0.5, y + 0.5, *[p[:2] for p in near])
                      and inside_triangle(x + 0.5, y + 0.5, *[p[:2] for p in far]) for x in range(8)]
                     for y in range(8)])
    assert both.any()
    assert (geom.face_id[both] == near_id).all()
    assert (geom.depth[both] == 2.0).all()


@pytest.mark.parametrize("backend", BACKENDS)
def test_triangle_behind_camera_dropped(backend, intr):
    verts = np.array([[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, -0.5]])
    geom = rasterize(verts, np.array([[0, 1, 2]]), intr, CameraPose(np.eye(3), np.zeros(3)), backend)
    assert not geom.covered.any()


@pytest.mark.parametrize("backend", BACKENDS)
def test_perspective_correct_barycentrics(backend):
    # a triangle receding in depth, so affine screen-space weights would be visibly wrong
    intr = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
    verts = np.array([[-1.0, -1.0, 2.0], [1.0, -1.0, 6.0], [-1.0, 1.0, 2.0]])
    geom = rasterize(verts, np.array([[0, 1, 2]]), intr, CameraPose(np.eye(3), np.zeros(3)), backend)
    m = geom.covered
    point = np.einsum("nk,kc->nc", geom.bary[m], verts)
    ys, xs = np.nonzero(m)
    # the interpolated surface point must lie on the ray through the pixel centre
    ray_x = (xs + 0.5 - intr.cx) / intr.fx
    ray_y = (ys + 0.5 - intr.cy) / intr.fy
    np.testing.assert_allclose(point[:, 0] / point[:, 2], ray_x, atol=1e-9)
    np.testing.assert_allclose(point[:, 1] / point[:, 2], ray_y, atol=1e-9)
    np.testing.assert_allclose(point[:, 2], geom.depth[m], atol=1e-9)


def test_barycentric_invariants(toy_renderer):
    verts, _ = toy_renderer.posed(0)
    geom = rasterize(verts, toy_renderer.faces, toy_renderer.intr, toy_renderer.camera)
    b = geom.bary[geom.covered]
    assert geom.covered.sum() > 1000
    assert (b >= 0).all() and np.abs(b.sum(axis=1) - 1).max() <= 1e-5
    assert np.array_equal(np.isfinite(geom.depth), geom.covered)


def test_depth_matches_ray_intersection(toy_renderer):
    cam, intr = toy_renderer.camera, toy_renderer.intr
    verts, _ = toy_renderer.posed(0)
    v_cam = cam.to_camera(verts)
    tris = v_cam[toy_renderer.faces]
    geom = rasterize(verts, toy_renderer.faces, intr, cam)
    ys, xs = np.nonzero(geom.covered)
    pick = np.random.default_rng(0).choice(len(ys), size=1000, replace=False)
    worst = 0.0
    for i in pick:
        y, x = ys[i], xs[i]
        d = np.array([(x + 0.5 - intr.cx) / intr.fx, (y + 0.5 - intr.cy) / intr.fy, 1.0])
        z = ray_mesh_depth(d, tris)
        assert z is not None
        worst = max(worst, abs(z - geom.depth[y, x]))
    assert worst <= 1e-4


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 60))
def test_backends_agree_on_random_soups(seed, n):
    rng = np.random.default_rng(seed)
    screen = np.column_stack([rng.uniform(-10, 50, (3 * n, 2)), rng.uniform(0.5, 5, 3 * n)])
    faces = rng.integers(0, 3 * n, (n, 3))
    a = rasterize_screen(screen, faces, 40, 30, "cython")
    b = rasterize_screen(screen, faces, 40, 30, "python")
    assert np.array_equal(a.face_id, b.face_id)
    assert np.array_equal(a.bary, b.bary) and np.array_equal(a.depth, b.depth)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
def test_backends_agree_on_toy_frame(model, banks, intr, toy_renderer):
    frames = [ClipRenderer(model, toy_renderer.clip, toy_renderer.scene, banks, intr, backend=b).render(0)
              for b in ("cython", "python")]
    assert frames[0].equals(frames[1])


# -- shading -------------------------------------------------------------------------


def _sphere(n, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_constant_sh_is_uniform():
    n = _sphere(1000)
    c = np.zeros(9)
    c[0] = 1.0
    out = shade_sh(n, np.ones((1000, 3)), c)
    np.testing.assert_allclose(out, 1 / (2 * math.sqrt(math.pi)), atol=1e-15)
    assert (to_uint8(out) == math.floor(255 / (2 * math.sqrt(math.pi)) + 0.5)).all()


def test_black_albedo_is_black():
    c = np.random.default_rng(0).uniform(-0.7, 0.7, 9)
    assert not to_uint8(shade_sh(_sphere(100), np.zeros((100, 3)), c)).any()


def test_vertical_band_is_odd():
    n = _sphere(500)
    flipped = n * [1, -1, 1]
    c = np.zeros(9)
    c[1] = 0.6
    np.testing.assert_allclose(irradiance(n, c), -irradiance(flipped, c), atol=1e-15)
    assert (irradiance(np.array([[0, 1.0, 0]]), c) > 0).all()


def test_shading_clamps_negative_irradiance():
    c = np.zeros(9)
    c[0] = -1.0
    assert (shade_sh(_sphere(10), np.ones((10, 3)), c) == 0).all()


def test_sh_monte_carlo_orthonormality():
    y = sh_basis(_sphere(1_000_000, seed=5))
    gram = 4 * math.pi * (y.T @ y) / len(y)
    assert np.abs(gram - np.eye(9)).max() <= 5e-3


# -- compositing / images ---------------------------------------------------------------


def test_composite_cases():
    rng = np.random.default_rng(2)
    body = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
    bg = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
    assert np.array_equal(composite(body, np.ones((6, 5), bool), bg), body)
    assert np.array_equal(composite(body, np.zeros((6, 5), bool), bg), bg)
    checker = (np.add.outer(np.arange(6), np.arange(5)) % 2).astype(bool)
    out = composite(body, checker, bg)
    assert np.array_equal(out[checker], body[checker]) and np.array_equal(out[~checker], bg[~checker])


def test_fit_background_shape():
    img = np.random.default_rng(0).integers(0, 256, (100, 90, 3), dtype=np.uint8)
    assert fit_background(img, 320, 240).shape == (240, 320, 3)
    same = np.zeros((240, 320, 3), np.uint8)
    assert fit_background(same, 320, 240).shape == (240, 320, 3)


def test_sample_texture_orientation():
    tex = np.zeros((2, 2, 3), np.uint8)
    tex[1, 0] = 255  # bottom-left texel
    assert sample_texture(tex, np.array([[0.1, 0.1]]))[0].tolist() == [1.0, 1.0, 1.0]
    assert sample_texture(tex, np.array([[0.9, 0.9]]))[0].tolist() == [0.0, 0.0, 0.0]


def test_vertex_normals_point_outward_on_tetrahedron():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    n = vertex_normals(v, f)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)
    centroid = v.mean(axis=0)
    assert ((n * (v - centroid)).sum(axis=1) > 0).all()


def test_face_label_majority_and_tie():
    faces = np.array([[0, 1, 2], [0, 3, 4]])
    labels = np.array([5, 5, 2, 9, 3])
    assert face_majority_labels(faces, labels).tolist() == [5, 3]


# -- flow ------------------------------------------------------------------------------


def _toy_at_depth(model, depth=8.0):
    verts = model.template_vertices - model.template_vertices.mean(axis=0)
    return verts * [-1, 1, -1] + [0, 0, depth]  # body faces the camera at the origin


def test_flow_zero_for_static_body(model, intr):
    cam = CameraPose(np.eye(3), np.zeros(3))
    v = _toy_at_depth(model)
    geom = rasterize(v, model.faces, intr, cam)
    assert not render_flow(geom, model.faces, v, v.copy(), intr, cam).any()


def test_flow_rigid_translation_matches_pinhole(model, intr):
    cam = CameraPose(np.eye(3), np.zeros(3))
    v0 = _toy_at_depth(model)
    v1 = v0 + [0.08, 0, 0]
    geom = rasterize(v0, model.faces, intr, cam)
    flow = render_flow(geom, model.faces, v0, v1, intr, cam)
    m = geom.covered
    analytic = intr.fx * 0.08 / geom.depth[m]
    assert np.abs(flow[m, 0] - analytic).max() <= 0.1
    assert np.abs(flow[m, 1]).max() <= 1e-9
    assert not flow[~m].any()


def test_last_frame_flow_is_flagged(model, banks, intr):
    r = ClipRenderer(model, _still_clip(3), sample_scene(0, 0, banks), banks, intr)
    frames = list(r)
    assert [f.flow_valid for f in frames] == [True, True, False]
    assert not frames[-1].flow.any()


# -- full frames -----------------------------------------------------------------------


def test_identity_pose_pelvis_at_centre(model, banks, intr):
    p = render_frame(sample_scene(1, 1, banks), model, _still_clip(1), 0, banks, intr)
    assert p.joints2d[PELVIS] == pytest.approx([160.0, 120.0], abs=1e-6)
    # the visible surface at the pelvis pixel lies a little in front of the joint
    assert p.pelvis_depth - 0.3 < p.depth_m[120, 160] < p.pelvis_depth


def test_render_is_deterministic(model, banks, intr, toy_renderer):
    a = toy_renderer.render(0)
    b = ClipRenderer(model, toy_renderer.clip, toy_renderer.scene, banks, intr).render(0)
    assert a.equals(b)


def test_pass_invariants(toy_renderer):
    p = toy_renderer.render(0)
    assert coverage_violations(p) == 0
    assert p.segm.max() <= 14 and p.depth_labels.max() <= 19
    assert len(np.unique(p.segm)) > 8
    assert p.rgb.shape == (240, 320, 3) and p.rgb.dtype == np.uint8
    bg = p.segm == 0
    assert np.array_equal(p.rgb[bg], toy_renderer.background[bg])
    assert (p.depth_m[bg] == BACKGROUND_DEPTH).all()


def test_camera_static_across_clip(model, banks, intr):
    seq = MotionSequence("t", "w", tuple(PoseFrame([0.1 * i, 0, 0], np.zeros((24, 3))) for i in range(4)))
    r = ClipRenderer(model, Clip(seq, 0, 4, 0.3, 0), sample_scene(0, 2, banks), banks, intr)
    frames = list(r)
    assert frames[0].joints2d[PELVIS] == pytest.approx([160, 120])
    assert frames[3].joints2d[PELVIS][0] != pytest.approx(160)
    expected = place_camera(r.posed(0)[1][PELVIS], r.scene.camera_distance, r.scene.camera_yaw)
    assert np.array_equal(r.camera.rotation, expected.rotation)


def test_render_rejects_out_of_range_frame(toy_renderer):
    with pytest.raises(IndexError):
        toy_renderer.render(5)


def test_frame_throughput(model, banks, intr):
    rng = np.random.default_rng(1)
    seq = MotionSequence("t", "p", tuple(PoseFrame(np.zeros(3), rng.normal(0, 0.3, (24, 3))) for _ in range(21)))
    r = ClipRenderer(model, Clip(seq, 0, 21, 0.3, 0), sample_scene(0, 0, banks), banks, intr)
    r.render(0)
    t0 = time.perf_counter()
    for t in range(1, 21):
        r.render(t)
    per_frame = (time.perf_counter() - t0) / 20
    print(f"backend={BACKEND} {1e3 * per_frame:.1f} ms/frame")
    assert per_frame <= 0.050
