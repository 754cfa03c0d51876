import math

import numpy as np
import pytest

from conftest import random_action
from oracles import refine_threshold
from virtual_eye.codec import (
    N_DEPTH_BINS,
    N_ROT_BINS,
    ActionVector,
    PolicyOutputs,
    decode,
    encode,
    euler_from_quat,
    in_view,
    label_refine,
    onehot_outputs,
    quantization_bound,
    quat_from_euler,
    wrap_degrees,
)
from virtual_eye.errors import EncodeOutOfView
from virtual_eye.geometry import RigidTransform, quat_multiply, quat_normalize
from virtual_eye.renderer import VirtualCameraSpec, pixel_to_world, world_to_pixel

IDENTITY = [1.0, 0.0, 0.0, 0.0]


def spec224():
    return VirtualCameraSpec(60, 30, 1.8, look_at=[0.05, -0.1, 0.1], half_extent=0.5, resolution=224)


def test_bin_counts():
    assert N_ROT_BINS == 72 and N_DEPTH_BINS == 36


def test_wrap_degrees():
    assert wrap_degrees(180.0) == -180.0
    assert wrap_degrees(270.0) == -90.0
    assert wrap_degrees(-180.0) == -180.0


def test_look_at_identity_rotation():
    spec = spec224()
    t = encode(ActionVector(spec.look_at, IDENTITY), spec)
    assert abs(t.heatmap.sum() - 1.0) <= 1e-6
    r, c = t.pixel
    assert {int(r), int(c)} <= {111, 112}
    assert t.rot_bins.tolist() == [0, 0, 0]


def test_rotation_bin_example():
    a = ActionVector([0, 0, 0], quat_from_euler([5.0, -5.0, 180.0]))
    t = encode(a, VirtualCameraSpec(90, 0, 1.5))
    assert t.rot_bins.tolist() == [1, 71, 36]


def test_depth_bin_formula(rng):
    spec = spec224()
    lo, hi = spec.depth_range
    for _ in range(200):
        a = random_action(rng, spec)
        d = float(world_to_pixel(spec, a.position)[2])
        want = min(max(math.floor(36 * (d - lo) / (hi - lo)), 0), 35)
        assert encode(a, spec).depth_bin == want


def test_heatmap_properties(rng):
    spec = spec224()
    for _ in range(100):
        a = random_action(rng, spec)
        t = encode(a, spec)
        assert abs(t.heatmap.sum() - 1.0) <= 1e-6
        assert np.all(t.heatmap >= 0)
        u, v, _ = world_to_pixel(spec, a.position)
        r, c = t.pixel
        assert abs(c + 0.5 - u) <= 0.5 + 1e-9 and abs(r + 0.5 - v) <= 0.5 + 1e-9


def test_out_of_view_iff_outside_image(rng):
    spec = VirtualCameraSpec(90, 0, 1.5, resolution=64)
    for _ in range(300):
        p = rng.uniform(-0.8, 0.8, 3)
        u, v, _ = world_to_pixel(spec, p)
        inside = 0 <= u < 64 and 0 <= v < 64
        if inside:
            encode(ActionVector(p, IDENTITY), spec)
        else:
            with pytest.raises(EncodeOutOfView):
                encode(ActionVector(p, IDENTITY), spec)


def test_round_trip_within_quantization_bound(rng):
    spec = spec224()
    bound = spec.half_extent * math.sqrt(2) / 224 + (spec.depth_range[1] - spec.depth_range[0]) / 72
    assert abs(quantization_bound(spec) - bound) < 1e-15
    for _ in range(300):
        a = random_action(rng, spec)
        b = decode(onehot_outputs(encode(a, spec)), spec)
        assert np.linalg.norm(b.position - a.position) <= bound
        err = np.abs(wrap_degrees(b.euler - a.euler))
        assert np.all(err <= 2.5 + 1e-9)
        assert (b.gripper_open, b.collision_allowed) == (a.gripper_open, a.collision_allowed)


def test_bin_centers_are_exact():
    spec = spec224()
    for e in ([0, 0, 0], [5, -5, 90], [-180, 30, 175]):
        a = ActionVector(spec.look_at, quat_from_euler(e))
        b = decode(onehot_outputs(encode(a, spec)), spec)
        assert np.allclose(wrap_degrees(b.euler - a.euler), 0, atol=1e-9)


def test_uniform_logits_decode_to_first_pixel():
    spec = VirtualCameraSpec(90, 0, 1.5, resolution=32)
    out = PolicyOutputs(np.zeros((32, 32)), np.zeros(36), np.zeros((3, 72)), np.zeros(2), np.zeros(2), np.zeros(2))
    a = decode(out, spec)
    u, v, _ = world_to_pixel(spec, a.position)
    assert abs(u - 0.5) < 1e-9 and abs(v - 0.5) < 1e-9
    assert a.gripper_open == 0 and np.allclose(a.euler, 0)


def about_z(deg):
    return quat_from_euler([0, 0, deg])


def test_label_refine_examples():
    p = np.zeros(3)
    assert label_refine(ActionVector(p, IDENTITY), ActionVector(p, IDENTITY)) == 0
    assert label_refine(ActionVector(p, IDENTITY), ActionVector([0.02, 0, 0], IDENTITY)) == 1
    assert label_refine(ActionVector(p, IDENTITY), ActionVector(p, about_z(6))) == 1
    assert label_refine(ActionVector(p, IDENTITY), ActionVector(p, about_z(4))) == 0


def test_label_refine_against_oracle(rng):
    for _ in range(500):
        a = ActionVector(rng.uniform(-0.5, 0.5, 3), quat_normalize(rng.standard_normal(4)))
        p = a.position + rng.normal(0, 0.007, 3)
        q = quat_normalize(a.rotation + rng.normal(0, 0.03, 4))
        b = ActionVector(p, q)
        want = refine_threshold(a.position, a.rotation, b.position, b.rotation)
        assert label_refine(a, b) == want == label_refine(b, a)
        t = RigidTransform(quat_normalize(rng.standard_normal(4)), rng.uniform(-1, 1, 3))
        ta = ActionVector(t.apply(a.position), quat_multiply(t.rotation, a.rotation))
        tb = ActionVector(t.apply(b.position), quat_multiply(t.rotation, b.rotation))
        assert label_refine(ta, tb) == want


def test_euler_round_trip(rng):
    for _ in range(100):
        e = rng.uniform(-180, 180, 3)
        e[1] = rng.uniform(-89, 89)
        assert np.allclose(wrap_degrees(euler_from_quat(quat_from_euler(e)) - e), 0, atol=1e-7)


def test_action_vector_rejects_non_unit():
    with pytest.raises(ValueError):
        ActionVector([0, 0, 0], [1, 1, 0, 0])
