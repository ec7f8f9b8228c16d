import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shforge.camera import place_camera, project
from shforge.errors import InvalidLabelError
from shforge.ground_truth import (BACKGROUND_DEPTH, DEFAULT_QUANTIZATION, DepthQuantization, dequantize,
                                  joints_annotation, quantize_depth)

PELVIS = 8.0


def q1(z):
    return int(quantize_depth(np.array([[z]]), PELVIS)[0, 0])


def test_quantize_examples():
    assert q1(PELVIS) == 10
    assert q1(PELVIS + 0.045) == 11
    assert q1(PELVIS - 0.5) == 1
    assert q1(PELVIS + 0.5) == 19


def test_background_is_zero():
    d = np.array([[BACKGROUND_DEPTH, np.inf, PELVIS]])
    assert quantize_depth(d, PELVIS).tolist() == [[0, 0, 10]]


def test_dequantize_examples():
    assert dequantize(10) == 0.0
    assert dequantize(11) == pytest.approx(0.045)
    with pytest.raises(InvalidLabelError, match="background has no depth"):
        dequantize(0)
    with pytest.raises(InvalidLabelError):
        dequantize(20)


def test_quantization_type_invariants():
    q = DEFAULT_QUANTIZATION
    assert (q.n_bins, q.half, q.center_label) == (19, 9, 10)
    with pytest.raises(ValueError):
        DepthQuantization(n_bins=18)
    with pytest.raises(ValueError):
        quantize_depth(np.zeros((1, 1)), float("nan"))


def test_labels_cover_exactly_one_to_nineteen():
    z = PELVIS + np.linspace(-1, 1, 4001)
    assert set(np.unique(quantize_depth(z[None], PELVIS)).tolist()) == set(range(1, 20))


def test_roundtrip_within_half_bin():
    offsets = np.linspace(-9.5 * 0.045 + 1e-9, 9.5 * 0.045 - 1e-9, 20001)
    lab = quantize_depth((PELVIS + offsets)[None], PELVIS)[0]
    assert np.abs(dequantize(lab) - offsets).max() <= 0.0225 + 1e-12


@settings(max_examples=100, deadline=None)
@given(z=arrays(np.float64, 30, elements=st.floats(0.1, 20)), pelvis=st.floats(1, 15))
def test_quantize_monotone(z, pelvis):
    z = np.sort(z)
    lab = quantize_depth(z[None], pelvis)[0].astype(int)
    assert (np.diff(lab) >= 0).all() and lab.min() >= 1 and lab.max() <= 19


def test_joints_annotation_examples(intr):
    pose = place_camera(np.zeros(3), 8.0, 0.0)
    joints = np.array([[0.0, 0, 0], [0.0, 0, 4.0], [0.32, 0, 0], [0, 0, 20.0]])
    uv, j3, behind = joints_annotation(joints, intr, pose)
    assert uv[0] == pytest.approx([160, 120])
    assert j3[1, 2] == pytest.approx(4.0)
    assert uv[2, 0] == pytest.approx(184.0)
    assert behind.tolist() == [False, False, False, True]


def test_joints_annotation_matches_project(intr, rng):
    pose = place_camera(rng.normal(size=3), 6.0, 0.7)
    joints = rng.normal(0, 1, (24, 3))
    uv, _, _ = joints_annotation(joints, intr, pose)
    u, v, _, _ = project(intr, pose, joints)
    assert np.abs(uv - np.stack([u, v], axis=1)).max() <= 1e-9
