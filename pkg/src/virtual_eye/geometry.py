"""Camera models, rigid transforms and RGB-D point-cloud fusion.

Conventions
-----------
* World frame is z-up.  Pinhole cameras use the usual optical frame:
  +x right, +y down, +z forward.  Pixel ``(u, v)`` is column ``u``, row ``v``
  and pixel centers sit on integer coordinates.
* Quaternions are scalar-first ``(w, x, y, z)``.
* A camera pose given by ``(elev, azim)`` places the camera on a sphere
  around the look-at point: ``elev`` is measured up from the xy-plane,
  ``azim`` counterclockwise from +x about +z.  World +z projects to image-up;
  for straight-down/up views (where that is undefined) +x is image-up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import MalformedFrameError, UsageError

MAX_DEPTH = 10.0
_DEGENERATE_COS = 1e-9


# ---------------------------------------------------------------------------
# Quaternions


def quat_normalize(q: NDArray) -> NDArray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def as_unit_quat(q: NDArray) -> NDArray:
    """Normalize unless already unit to within 1e-12, so stored values survive reconstruction."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    return q.copy() if abs(n - 1.0) <= 1e-12 else q / n


def quat_multiply(a: NDArray, b: NDArray) -> NDArray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: NDArray) -> NDArray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_to_matrix(q: NDArray) -> NDArray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: NDArray) -> NDArray:
    """Rotation matrix to unit quaternion with ``w >= 0`` (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def quat_angle(a: NDArray, b: NDArray) -> float:
    """Geodesic angle in radians between two unit quaternions."""
    dot = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * np.arccos(min(1.0, dot))


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise UsageError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise UsageError("principal point must lie inside the image")

    def to_matrix(self) -> NDArray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) followed by translation (meters)."""

    rotation: NDArray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: NDArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise UsageError(f"rotation must be a unit quaternion, |q|={n}")
        object.__setattr__(self, "rotation", as_unit_quat(q))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, rotation: NDArray, translation: NDArray) -> RigidTransform:
        return cls(matrix_to_quat(rotation), translation)

    @property
    def matrix(self) -> NDArray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: NDArray) -> NDArray:
        """Transform an ``(N, 3)`` (or ``(3,)``) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        return RigidTransform(q, self.apply(other.translation))

    def inverse(self) -> RigidTransform:
        q = quat_conjugate(self.rotation)
        return RigidTransform(q, -(quat_to_matrix(q) @ self.translation))

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        same_rot = np.allclose(self.rotation, other.rotation, atol=atol) or np.allclose(
            self.rotation, -other.rotation, atol=atol
        )
        return same_rot and np.allclose(self.translation, other.translation, atol=atol)


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    """One camera's registered color + depth (meters, 0 = invalid)."""

    name: str
    rgb: NDArray  # (H, W, 3) uint8
    depth: NDArray  # (H, W) float, meters
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform  # camera -> world

    def check(self) -> None:
        h, w = self.depth.shape[:2]
        if self.depth.ndim != 2 or self.rgb.shape != (h, w, 3):
            raise MalformedFrameError(
                f"frame {self.name!r}: rgb {self.rgb.shape} does not match depth {self.depth.shape}"
            )
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise MalformedFrameError(
                f"frame {self.name!r}: raster {w}x{h} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: NDArray  # (N, 3) float64, world frame
    colors: NDArray  # (N, 3) uint8

    def __post_init__(self):
        if len(self.points) != len(self.colors):
            raise UsageError("points and colors must have equal row count")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class WorkspaceBounds:
    min: NDArray
    max: NDArray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(lo < hi):
            raise UsageError(f"workspace min {lo} must be < max {hi} componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    @property
    def center(self) -> NDArray:
        return 0.5 * (self.min + self.max)

    def contains(self, points: NDArray) -> NDArray:
        points = np.asarray(points)
        return np.all((points >= self.min) & (points <= self.max), axis=-1)


# ---------------------------------------------------------------------------
# Backprojection and fusion


def backproject(frame: RgbdFrame) -> PointCloud:
    """Lift every pixel with valid depth into a world-frame point."""
    frame.check()
    depth = np.asarray(frame.depth, dtype=np.float64)
    valid = (depth > 0) & (depth <= MAX_DEPTH)
    v, u = np.nonzero(valid)
    d = depth[v, u]
    k = frame.intrinsics
    cam = np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=1)
    return PointCloud(frame.extrinsics.apply(cam), np.asarray(frame.rgb)[v, u].astype(np.uint8))


def reproject(
    intrinsics: CameraIntrinsics, extrinsics: RigidTransform, points: NDArray
) -> tuple[NDArray, NDArray, NDArray]:
    """World points to continuous pixel coordinates ``(u, v)`` and z-depth."""
    cam = extrinsics.inverse().apply(points)
    d = cam[..., 2]
    u = intrinsics.fx * cam[..., 0] / d + intrinsics.cx
    v = intrinsics.fy * cam[..., 1] / d + intrinsics.cy
    return u, v, d


def crop(cloud: PointCloud, bounds: WorkspaceBounds) -> PointCloud:
    keep = bounds.contains(cloud.points)
    return PointCloud(cloud.points[keep], cloud.colors[keep])


def fuse(frames: list[RgbdFrame], bounds: WorkspaceBounds) -> PointCloud:
    """Concatenate per-frame backprojections (in frame order) and crop to ``bounds``.

    Duplicated observations are kept; there is no deduplication.
    """
    if not frames:
        raise UsageError("fuse needs at least one frame")
    clouds = [backproject(f) for f in frames]
    merged = PointCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
    )
    return crop(merged, bounds)


# ---------------------------------------------------------------------------
# Camera poses from (elev, azim)


def direction_from_angles(elev: float, azim: float) -> NDArray:
    """Unit vector from the look-at point toward the camera."""
    e, a = np.deg2rad(elev), np.deg2rad(azim)
    return np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])


def camera_axes(elev: float, azim: float) -> tuple[NDArray, NDArray, NDArray]:
    """``(right, down, forward)`` world-frame unit axes of a camera at ``(elev, azim)``."""
    forward = -direction_from_angles(elev, azim)
    if abs(np.cos(np.deg2rad(elev))) < _DEGENERATE_COS:
        # Straight up/down: world +z is parallel to the optical axis.
        forward = np.array([0.0, 0.0, -np.sign(elev)])
        up = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
    else:
        right = np.cross(forward, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
    return right, -up, forward


def pose_from_angles(elev: float, azim: float, distance: float, look_at) -> RigidTransform:
    """Camera->world transform for a camera on a sphere around ``look_at``."""
    if not distance > 0:
        raise UsageError(f"distance must be positive, got {distance}")
    if not -90.0 <= elev <= 90.0:
        raise UsageError(f"elev must be in [-90, 90], got {elev}")
    look_at = np.asarray(look_at, dtype=np.float64).reshape(3)
    right, down, forward = camera_axes(elev, azim)
    center = look_at + distance * direction_from_angles(elev, azim)
    if abs(np.cos(np.deg2rad(elev))) < _DEGENERATE_COS:
        center = look_at + np.array([0.0, 0.0, np.sign(elev) * distance])
    return RigidTransform.from_matrix(np.stack([right, down, forward], axis=1), center)


def angles_of_point(p, look_at=(0.0, 0.0, 0.0)) -> tuple[float, float, float]:
    """``(elev, azim, distance)`` of ``p`` seen from ``look_at``."""
    d = np.asarray(p, dtype=np.float64) - np.asarray(look_at, dtype=np.float64)
    r = float(np.linalg.norm(d))
    elev = float(np.degrees(np.arcsin(np.clip(d[2] / r, -1.0, 1.0))))
    azim = float(np.degrees(np.arctan2(d[1], d[0])))
    return elev, azim, r


# ---------------------------------------------------------------------------
# Rig description file


@dataclass(frozen=True, eq=False)
class RigCamera:
    name: str
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: list[RigCamera]
    bounds: WorkspaceBounds

    def to_dict(self) -> dict:
        return {
            "cameras": [
                {
                    "name": c.name,
                    "intrinsics": {
                        "fx": c.intrinsics.fx,
                        "fy": c.intrinsics.fy,
                        "cx": c.intrinsics.cx,
                        "cy": c.intrinsics.cy,
                        "width": c.intrinsics.width,
                        "height": c.intrinsics.height,
                    },
                    "extrinsics": {
                        "quaternion": [float(x) for x in c.extrinsics.rotation],
                        "translation": [float(x) for x in c.extrinsics.translation],
                    },
                }
                for c in self.cameras
            ],
            "workspace": {"min": self.bounds.min.tolist(), "max": self.bounds.max.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> CameraRig:
        try:
            cams = [
                RigCamera(
                    name=c["name"],
                    intrinsics=CameraIntrinsics(
                        float(c["intrinsics"]["fx"]),
                        float(c["intrinsics"]["fy"]),
                        float(c["intrinsics"]["cx"]),
                        float(c["intrinsics"]["cy"]),
                        int(c["intrinsics"]["width"]),
                        int(c["intrinsics"]["height"]),
                    ),
                    extrinsics=RigidTransform(c["extrinsics"]["quaternion"], c["extrinsics"]["translation"]),
                )
                for c in data["cameras"]
            ]
            bounds = WorkspaceBounds(data["workspace"]["min"], data["workspace"]["max"])
        except (KeyError, TypeError) as exc:
            raise UsageError(f"malformed rig description: missing {exc}") from exc
        return cls(cams, bounds)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> CameraRig:
        return cls.from_dict(json.loads(Path(path).read_text()))
