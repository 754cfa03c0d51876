import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from virtual_eye.codec import ActionVector, quat_from_euler  # noqa: E402
from virtual_eye.geometry import PointCloud  # noqa: E402
from virtual_eye.renderer import VirtualCameraSpec, pixel_to_world  # noqa: E402

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def random_spec(rng, resolution=None) -> VirtualCameraSpec:
    return VirtualCameraSpec(
        elev=float(rng.uniform(-90, 90)),
        azim=float(rng.uniform(-180, 180)),
        distance=float(rng.uniform(0.5, 3.0)),
        look_at=rng.uniform(-0.3, 0.3, 3),
        half_extent=float(rng.uniform(0.1, 1.0)),
        resolution=int(resolution if resolution is not None else rng.integers(16, 300)),
    )


def random_cloud(rng, n, spec):
    # mostly inside the frustum, some outside, some duplicated positions
    pts = spec.look_at + rng.uniform(-1.3, 1.3, (n, 3)) * spec.half_extent
    if n > 4:
        pts[: n // 5] = pts[n // 5 : 2 * (n // 5)]
    cols = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    return PointCloud(pts, cols)


def random_action(rng, spec, euler=None):
    """Uniform over the view frustum: pixel inside the image, depth inside the depth range."""
    lo, hi = spec.depth_range
    u, v = rng.uniform(0, spec.resolution, 2)
    p = pixel_to_world(spec, u, v, rng.uniform(lo, hi))
    e = rng.uniform(-180, 180, 3) if euler is None else euler
    e = np.asarray(e, dtype=float)
    e[1] = np.clip(e[1], -85, 85)
    return ActionVector(p, quat_from_euler(e), int(rng.integers(2)), int(rng.integers(2)))


def random_trajectory(rng):
    n = int(rng.integers(2, 80))
    gripper = np.ones(n, dtype=int)
    for t in rng.choice(n, size=min(n, int(rng.integers(0, 5))), replace=False):
        gripper[t:] = 1 - gripper[t:]
    vel = rng.uniform(0.0, 0.05, n)
    vel[rng.random(n) < 0.2] = rng.uniform(0, 2e-3)
    return gripper, vel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reach_demos():
    from virtual_eye.world.demos import make_demo

    return [make_demo("reach", s) for s in range(3)]


@pytest.fixture(scope="session")
def stack_demo():
    from virtual_eye.world.demos import make_demo

    return make_demo("stack", 7)
