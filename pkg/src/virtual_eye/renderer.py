"""Orthographic z-buffered point splatting from a virtual camera.

Pixel coordinates are continuous: pixel ``(i, j)`` (column, row) covers
``[i, i+1) x [j, j+1)``, so the look-at point lands on ``(R/2, R/2)`` and a
point ``half_extent`` to the right of it lands on ``u = R``.

Each point covers a square of ``ceil(R / 128)`` pixels per side centered on
its projection: column ``i`` is covered iff
``i + 0.5 - s/2 <= u < i + 0.5 + s/2`` (rows likewise).  Among points covering
a pixel, those within ``TIE_EPS`` of the smallest depth compete and the
lexicographically smallest ``(x, y, z, r, g, b)`` wins, so the image does not
depend on point order.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from numpy.typing import NDArray
from PIL import Image

from .errors import UsageError
from .geometry import PointCloud, RigidTransform, camera_axes, pose_from_angles

TIE_EPS = 1e-12
DEPTH_MAGIC = b"VEYD"
# distance = DISTANCE_FACTOR * workspace diagonal, and the depth span used for
# classification defaults to that diagonal.
DISTANCE_FACTOR = 1.2


@dataclass(frozen=True, eq=False)
class VirtualCameraSpec:
    """Pose and framing of an orthographic virtual camera.

    ``depth_span`` is the width of the depth interval, centered on
    ``distance``, used to normalize and classify depth.  ``None`` means the
    workspace diagonal implied by ``distance / DISTANCE_FACTOR``.
    """

    elev: float
    azim: float
    distance: float
    look_at: NDArray = field(default_factory=lambda: np.zeros(3))
    half_extent: float = 0.5
    resolution: int = 224
    depth_span: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=np.float64).reshape(3))
        if not self.half_extent > 0:
            raise UsageError(f"half_extent must be positive, got {self.half_extent}")
        if int(self.resolution) != self.resolution or self.resolution < 16:
            raise UsageError(f"resolution must be an integer >= 16, got {self.resolution}")
        if not -90.0 <= self.elev <= 90.0:
            raise UsageError(f"elev must be in [-90, 90], got {self.elev}")
        if not self.distance > 0:
            raise UsageError(f"distance must be positive, got {self.distance}")
        if self.depth_span is None:
            object.__setattr__(self, "depth_span", self.distance / DISTANCE_FACTOR)
        object.__setattr__(self, "resolution", int(self.resolution))
        right, down, forward = camera_axes(self.elev, self.azim)
        object.__setattr__(self, "_basis", np.stack([right, down, forward]))

    @property
    def basis(self) -> NDArray:
        """Rows are the world-frame right, down and forward axes."""
        return self._basis

    @property
    def pose(self) -> RigidTransform:
        return pose_from_angles(self.elev, self.azim, self.distance, self.look_at)

    @property
    def center(self) -> NDArray:
        return self.look_at - self.distance * self._basis[2]

    @property
    def pixel_size(self) -> float:
        """World-space width of one pixel."""
        return 2.0 * self.half_extent / self.resolution

    @property
    def depth_range(self) -> tuple[float, float]:
        return self.distance - self.depth_span / 2.0, self.distance + self.depth_span / 2.0

    @property
    def splat_size(self) -> int:
        return math.ceil(self.resolution / 128)

    def replace(self, **changes) -> VirtualCameraSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "elev": float(self.elev),
            "azim": float(self.azim),
            "distance": float(self.distance),
            "look_at": [float(x) for x in self.look_at],
            "half_extent": float(self.half_extent),
            "resolution": int(self.resolution),
            "depth_span": float(self.depth_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> VirtualCameraSpec:
        return cls(
            elev=float(d["elev"]),
            azim=float(d["azim"]),
            distance=float(d["distance"]),
            look_at=d["look_at"],
            half_extent=float(d["half_extent"]),
            resolution=int(d["resolution"]),
            depth_span=d.get("depth_span"),
        )

    def __eq__(self, other):
        return isinstance(other, VirtualCameraSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        d = self.to_dict()
        return "VirtualCameraSpec(" + ", ".join(f"{k}={v}" for k, v in d.items()) + ")"


@dataclass(frozen=True, eq=False)
class VirtualImage:
    rgb: NDArray  # (R, R, 3) uint8
    depth: NDArray  # (R, R) float64, +inf where empty
    spec: VirtualCameraSpec


@numba.njit(cache=True)
def _project(p, look_at, basis, scale, half, distance):
    n = p.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        dx = p[i, 0] - look_at[0]
        dy = p[i, 1] - look_at[1]
        dz = p[i, 2] - look_at[2]
        out[i, 0] = half + (dx * basis[0, 0] + dy * basis[0, 1] + dz * basis[0, 2]) * scale
        out[i, 1] = half + (dx * basis[1, 0] + dy * basis[1, 1] + dz * basis[1, 2]) * scale
        out[i, 2] = distance + (dx * basis[2, 0] + dy * basis[2, 1] + dz * basis[2, 2])
    return out


def world_to_pixel(spec: VirtualCameraSpec, p) -> tuple:
    """Project world point(s) to continuous ``(u, v, depth)``.

    ``depth`` is measured along the optical axis from the camera center.
    Points outside the frustum simply get out-of-range coordinates.
    """
    p = np.asarray(p, dtype=np.float64)
    flat = np.ascontiguousarray(p.reshape(-1, 3))
    out = _project(
        flat,
        spec.look_at,
        spec.basis,
        spec.resolution / (2.0 * spec.half_extent),
        spec.resolution / 2.0,
        float(spec.distance),
    )
    shape = p.shape[:-1]
    return out[:, 0].reshape(shape), out[:, 1].reshape(shape), out[:, 2].reshape(shape)


def pixel_to_world(spec: VirtualCameraSpec, u, v, depth) -> NDArray:
    """Inverse of :func:`world_to_pixel`."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)):
        raise UsageError("pixel_to_world needs a finite depth")
    scale = 2.0 * spec.half_extent / spec.resolution
    half = spec.resolution / 2.0
    cam = np.stack(
        np.broadcast_arrays(
            (np.asarray(u, dtype=np.float64) - half) * scale,
            (np.asarray(v, dtype=np.float64) - half) * scale,
            depth - spec.distance,
        ),
        axis=-1,
    )
    return spec.look_at + cam @ spec.basis


def zoom_spec(spec: VirtualCameraSpec, center, factor: float) -> VirtualCameraSpec:
    """Re-center on ``center`` and magnify by ``factor`` without rotating.

    The depth span shrinks with the image extent, i.e. the whole point cloud
    is scaled about ``center``.
    """
    if not factor > 1:
        raise UsageError(f"zoom factor must be > 1, got {factor}")
    return spec.replace(
        look_at=np.asarray(center, dtype=np.float64),
        half_extent=spec.half_extent / factor,
        depth_span=spec.depth_span / factor,
    )


@numba.njit(cache=True, inline="always")
def _lex_less(pts, cols, a, b):
    for k in range(3):
        if pts[a, k] != pts[b, k]:
            return pts[a, k] < pts[b, k]
    for k in range(3):
        if cols[a, k] != cols[b, k]:
            return cols[a, k] < cols[b, k]
    return False


@numba.njit(cache=True, inline="always")
def _first_covered(x, half):
    # smallest index i with x < i + 0.5 + half
    i = int(math.floor(x - half - 0.5))
    while not (x < i + 0.5 + half):
        i += 1
    return i


@numba.njit(cache=True)
def _splat(u, v, depth, pts, cols, res, size):
    n = u.shape[0]
    zmin = np.full(res * res, np.inf)
    winner = np.full(res * res, -1, dtype=np.int64)
    half = 0.5 * size
    c_first = np.empty(n, dtype=np.int64)
    r_first = np.empty(n, dtype=np.int64)
    c_count = np.zeros(n, dtype=np.int64)
    r_count = np.zeros(n, dtype=np.int64)
    # pass 1: footprint and nearest depth per pixel
    for p in range(n):
        c = _first_covered(u[p], half)
        nc = 0
        while c + nc + 0.5 - half <= u[p]:
            nc += 1
        r = _first_covered(v[p], half)
        nr = 0
        while r + nr + 0.5 - half <= v[p]:
            nr += 1
        # clip to the image
        if c < 0:
            nc += c
            c = 0
        if r < 0:
            nr += r
            r = 0
        nc = min(nc, res - c)
        nr = min(nr, res - r)
        c_first[p] = c
        r_first[p] = r
        c_count[p] = max(nc, 0)
        r_count[p] = max(nr, 0)
        d = depth[p]
        for rr in range(r, r + r_count[p]):
            for cc in range(c, c + c_count[p]):
                k = rr * res + cc
                if d < zmin[k]:
                    zmin[k] = d
    # pass 2: lexicographic tie-break among near-equal depths
    for p in range(n):
        d = depth[p]
        for rr in range(r_first[p], r_first[p] + r_count[p]):
            for cc in range(c_first[p], c_first[p] + c_count[p]):
                k = rr * res + cc
                if d <= zmin[k] + TIE_EPS:
                    w = winner[k]
                    if w < 0 or _lex_less(pts, cols, p, w):
                        winner[k] = p
    return winner


def render(cloud: PointCloud, spec: VirtualCameraSpec) -> VirtualImage:
    """Splat ``cloud`` into an RGB + depth image seen from ``spec``.

    Points outside the near/far planes ``[0, 2 * distance]`` are ignored.
    """
    res = spec.resolution
    rgb = np.zeros((res, res, 3), dtype=np.uint8)
    depth = np.full((res, res), np.inf)
    if len(cloud) == 0:
        return VirtualImage(rgb, depth, spec)
    pts = np.ascontiguousarray(cloud.points, dtype=np.float64)
    cols = np.ascontiguousarray(cloud.colors, dtype=np.uint8)
    u, v, d = world_to_pixel(spec, pts)
    # near/far clipping; non-finite input fails every comparison
    ok = (d >= 0.0) & (d <= 2.0 * spec.distance) & (np.abs(u) < 1e8) & (np.abs(v) < 1e8)
    u = np.where(ok, u, -1e9)
    v = np.where(ok, v, -1e9)
    winner = _splat(u, v, np.where(ok, d, np.inf), pts, cols, res, spec.splat_size)
    hit = winner >= 0
    rgb.reshape(-1, 3)[hit] = cols[winner[hit]]
    depth.reshape(-1)[hit] = d[winner[hit]]
    return VirtualImage(rgb, depth, spec)


# ---------------------------------------------------------------------------
# File IO: <stem>.png, <stem>.depth (VEYD raster), <stem>.json (spec)


def save_virtual_image(img: VirtualImage, stem) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.rgb).save(stem.with_suffix(".png"))
    raster = img.depth.astype("<f4")
    raster[~np.isfinite(img.depth)] = np.finfo(np.float32).max
    header = DEPTH_MAGIC + struct.pack("<IQ", img.spec.resolution, 0)
    stem.with_suffix(".depth").write_bytes(header + raster.tobytes())
    stem.with_suffix(".json").write_text(json.dumps(img.spec.to_dict(), indent=2))


def load_virtual_image(stem) -> VirtualImage:
    stem = Path(stem)
    spec = VirtualCameraSpec.from_dict(json.loads(stem.with_suffix(".json").read_text()))
    blob = stem.with_suffix(".depth").read_bytes()
    if blob[:4] != DEPTH_MAGIC:
        raise ValueError(f"{stem}.depth: bad magic {blob[:4]!r}")
    (res, _reserved) = struct.unpack("<IQ", blob[4:16])
    raster = np.frombuffer(blob[16:], dtype="<f4")
    if raster.size != res * res:
        raise ValueError(f"{stem}.depth: expected {res * res} samples, found {raster.size}")
    depth = raster.reshape(res, res).astype(np.float64)
    depth[raster.reshape(res, res) == np.finfo(np.float32).max] = np.inf
    rgb = np.asarray(Image.open(stem.with_suffix(".png")).convert("RGB"))
    return VirtualImage(rgb, depth, spec)
