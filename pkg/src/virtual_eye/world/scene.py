"""Tabletop scenes made of axis-aligned boxes, seen by four pinhole RGB-D cameras."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba
import numpy as np
from numpy.typing import NDArray

from ..geometry import CameraIntrinsics, CameraRig, RgbdFrame, RigCamera, WorkspaceBounds, pose_from_angles

CAMERA_NAMES = ("front", "left_shoulder", "right_shoulder", "wrist")
IMAGE_SIZE = 128
FOV_DEG = 60.0
RIG_DISTANCE = 1.5
RIG_LOOK_AT = (0.0, 0.0, 0.1)
# (elev, azim) of the fixed cameras
FIXED_POSES = {"front": (15.0, 180.0), "left_shoulder": (40.0, 120.0), "right_shoulder": (40.0, -120.0)}
# the wrist camera rides behind and above the tool point, looking down at it
WRIST_POSE = (70.0, 180.0, 0.35)
WRIST_LOOK_BELOW = 0.1

WORKSPACE = WorkspaceBounds([-0.5, -0.5, -0.02], [0.5, 0.5, 0.6])

GRIPPER_SIZE = (0.04, 0.04, 0.04)
GRIPPER_LIFT = 0.06  # gripper box center sits this far above the tool point
GRIPPER_OPEN_COLOR = (230, 230, 230)
GRIPPER_CLOSED_COLOR = (40, 40, 40)


@dataclass(frozen=True, eq=False)
class Box:
    id: str
    center: NDArray
    size: NDArray  # full edge lengths
    color: tuple = (128, 128, 128)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))

    @property
    def lo(self) -> NDArray:
        return self.center - self.size / 2

    @property
    def hi(self) -> NDArray:
        return self.center + self.size / 2

    def moved(self, center) -> Box:
        return replace(self, center=center)

    def overlaps(self, other: Box, margin: float = 0.0) -> bool:
        """Interiors intersect (touching faces do not count)."""
        return bool(np.all(self.lo < other.hi - margin) and np.all(other.lo < self.hi - margin))


TABLE = Box("table", [0.0, 0.0, -0.025], [1.4, 1.4, 0.05], (150, 120, 90))


def intrinsics_128(size: int = IMAGE_SIZE, fov_deg: float = FOV_DEG) -> CameraIntrinsics:
    f = (size / 2) / np.tan(np.deg2rad(fov_deg) / 2)
    c = (size - 1) / 2
    return CameraIntrinsics(float(f), float(f), c, c, size, size)


def wrist_camera(tool_point, intrinsics: CameraIntrinsics | None = None) -> RigCamera:
    elev, azim, dist = WRIST_POSE
    look = np.asarray(tool_point, dtype=np.float64) - [0.0, 0.0, WRIST_LOOK_BELOW]
    return RigCamera("wrist", intrinsics or intrinsics_128(), pose_from_angles(elev, azim, dist, look))


def make_rig(tool_point=(0.0, 0.0, 0.3)) -> CameraRig:
    k = intrinsics_128()
    cams = [RigCamera(name, k, pose_from_angles(e, a, RIG_DISTANCE, RIG_LOOK_AT)) for name, (e, a) in FIXED_POSES.items()]
    cams.append(wrist_camera(tool_point, k))
    return CameraRig(cams, WORKSPACE)


def gripper_box(tool_point, open_: int) -> Box:
    return Box(
        "gripper",
        np.asarray(tool_point, dtype=np.float64) + [0.0, 0.0, GRIPPER_LIFT],
        GRIPPER_SIZE,
        GRIPPER_OPEN_COLOR if open_ else GRIPPER_CLOSED_COLOR,
    )


@dataclass(eq=False)
class Scene:
    """Table, task objects and the gripper, plus the camera rig observing them."""

    objects: list[Box]
    rig: CameraRig
    seed: int = 0
    table: Box | None = TABLE
    gripper: Box | None = None

    def get(self, obj_id: str) -> Box:
        for b in self.objects:
            if b.id == obj_id:
                return b
        raise KeyError(obj_id)

    def boxes(self) -> list[Box]:
        out = ([self.table] if self.table is not None else []) + list(self.objects)
        if self.gripper is not None:
            out.append(self.gripper)
        return out

    def with_gripper(self, tool_point, open_: int) -> Scene:
        cams = [c for c in self.rig.cameras if c.name != "wrist"] + [wrist_camera(tool_point)]
        return replace(self, rig=CameraRig(cams, self.rig.bounds), gripper=gripper_box(tool_point, open_))

    def moved(self, obj_id: str, center) -> Scene:
        return replace(self, objects=[b.moved(center) if b.id == obj_id else b for b in self.objects])


@numba.njit(cache=True)
def _cast(origin, dirs, lo, hi):
    """Nearest entry parameter and box index per ray (-1 on a miss).

    Slab test per box; rays starting inside a box do not hit it.  Ties go to
    the earlier box.
    """
    n, nb = dirs.shape[0], lo.shape[0]
    best = np.full(n, np.inf)
    which = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for j in range(nb):
            near, far = -np.inf, np.inf
            for a in range(3):
                d = dirs[i, a]
                if d == 0.0:
                    if origin[a] < lo[j, a] or origin[a] > hi[j, a]:
                        near, far = np.inf, -np.inf
                else:
                    t1 = (lo[j, a] - origin[a]) / d
                    t2 = (hi[j, a] - origin[a]) / d
                    near = max(near, min(t1, t2))
                    far = min(far, max(t1, t2))
            if near <= far and near > 0.0 and near < best[i]:
                best[i] = near
                which[i] = j
    return best, which


def camera_rays(cam: RigCamera) -> tuple[NDArray, NDArray]:
    """World-frame origin and per-pixel directions scaled so the optical-axis component is 1."""
    k = cam.intrinsics
    v, u = np.mgrid[0 : k.height, 0 : k.width]
    d_cam = np.stack([(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], axis=1)
    return cam.extrinsics.translation, d_cam @ cam.extrinsics.matrix.T


def raycast_rgbd(scene: Scene, cam: RigCamera) -> RgbdFrame:
    """Exact box intersection per pixel; depth is the z-distance along the optical axis.

    Rays are parameterized so that the ray parameter equals camera-frame z,
    hence the entry parameter is the depth.  Misses read depth 0, color 0.
    """
    k = cam.intrinsics
    origin, dirs = camera_rays(cam)
    boxes = scene.boxes()
    lo = np.array([b.lo for b in boxes], dtype=np.float64).reshape(-1, 3)
    hi = np.array([b.hi for b in boxes], dtype=np.float64).reshape(-1, 3)
    t, which = _cast(origin, dirs, lo, hi)
    colors = np.array([(0, 0, 0)] + [b.color for b in boxes], dtype=np.uint8)
    rgb = colors[which + 1]
    depth = np.where(which >= 0, t, 0.0)
    return RgbdFrame(
        cam.name,
        rgb.reshape(k.height, k.width, 3),
        depth.reshape(k.height, k.width).astype(np.float32),
        k,
        cam.extrinsics,
    )


def render_frames(scene: Scene) -> list[RgbdFrame]:
    return [raycast_rgbd(scene, cam) for cam in scene.rig.cameras]


def surface_distance(points: NDArray, boxes: list[Box]) -> NDArray:
    """Distance from each point to the nearest box surface."""
    points = np.asarray(points, dtype=np.float64)
    best = np.full(len(points), np.inf)
    for b in boxes:
        lo, hi = b.lo, b.hi
        outside = np.linalg.norm(np.maximum(np.maximum(lo - points, points - hi), 0.0), axis=1)
        inside = np.minimum(points - lo, hi - points).min(axis=1)
        best = np.minimum(best, np.where(outside > 0, outside, inside))
    return best
