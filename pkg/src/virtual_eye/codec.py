"""Action targets: Gaussian heatmap, depth class, rotation bins and bits.

An 8-D keyframe action (position, rotation, gripper-open bit, collision bit)
is encoded relative to a virtual camera: the position becomes a heatmap on
the virtual image plus one of ``N_DEPTH_BINS`` optical-axis depth classes;
rotation is binned per intrinsic-XYZ Euler axis in ``ROT_RESOLUTION``-degree
steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .errors import EncodeOutOfView
from .geometry import as_unit_quat, quat_angle
from .renderer import VirtualCameraSpec, pixel_to_world, world_to_pixel

N_DEPTH_BINS = 36
ROT_RESOLUTION = 5.0
N_ROT_BINS = int(round(360.0 / ROT_RESOLUTION))
HEATMAP_SIGMA = 1.5
POSITION_THRESHOLD = 0.01
ROTATION_THRESHOLD_DEG = 5.0


@dataclass(frozen=True, eq=False)
class ActionVector:
    position: NDArray
    rotation: NDArray  # unit quaternion, wxyz
    gripper_open: int = 1
    collision_allowed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"rotation must be a unit quaternion, |q|={np.linalg.norm(q)}")
        object.__setattr__(self, "rotation", as_unit_quat(q))
        object.__setattr__(self, "gripper_open", int(self.gripper_open))
        object.__setattr__(self, "collision_allowed", int(self.collision_allowed))

    @property
    def euler(self) -> NDArray:
        return euler_from_quat(self.rotation)

    def __repr__(self):
        return (
            f"ActionVector(position={np.round(self.position, 4).tolist()}, "
            f"euler={np.round(self.euler, 2).tolist()}, open={self.gripper_open}, "
            f"collision={self.collision_allowed})"
        )


@dataclass(frozen=True, eq=False)
class EncodedActionTarget:
    heatmap: NDArray  # (R, R), sums to 1
    depth_bin: int
    rot_bins: NDArray  # (3,) ints in [0, N_ROT_BINS)
    open_bit: int
    collision_bit: int
    refine_label: int = 0

    @property
    def open_onehot(self) -> NDArray:
        return np.eye(2)[self.open_bit]

    @property
    def collision_onehot(self) -> NDArray:
        return np.eye(2)[self.collision_bit]

    @property
    def pixel(self) -> tuple[int, int]:
        """``(row, col)`` of the heatmap peak."""
        return np.unravel_index(int(np.argmax(self.heatmap)), self.heatmap.shape)


@dataclass(eq=False)
class PolicyOutputs:
    """Per-head logits; arrays may carry a leading batch axis."""

    heatmap_logits: NDArray  # (R, R)
    depth_logits: NDArray  # (N_DEPTH_BINS,)
    rot_logits: NDArray  # (3, N_ROT_BINS)
    open_logits: NDArray  # (2,)
    collision_logits: NDArray  # (2,)
    refine_logits: NDArray  # (2,)

    def __getitem__(self, i) -> PolicyOutputs:
        return PolicyOutputs(**{k: v[i] for k, v in self.__dict__.items()})

    @property
    def batch_size(self) -> int | None:
        return self.heatmap_logits.shape[0] if self.heatmap_logits.ndim == 3 else None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.__dict__.values())


# ---------------------------------------------------------------------------
# Rotations


def wrap_degrees(a):
    """Wrap angles into ``[-180, 180)``."""
    return (np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0


def euler_from_quat(q) -> NDArray:
    """Intrinsic XYZ Euler angles in degrees, each wrapped to ``[-180, 180)``."""
    e = Rotation.from_quat(np.asarray(q, dtype=np.float64), scalar_first=True).as_euler("XYZ", degrees=True)
    return wrap_degrees(e)


def quat_from_euler(euler) -> NDArray:
    q = Rotation.from_euler("XYZ", np.asarray(euler, dtype=np.float64), degrees=True).as_quat(scalar_first=True)
    return -q if q[0] < 0 else q


def rotation_bins(euler) -> NDArray:
    return np.mod(np.round(np.asarray(euler) / ROT_RESOLUTION).astype(np.int64), N_ROT_BINS)


def bins_to_euler(bins) -> NDArray:
    return wrap_degrees(np.asarray(bins, dtype=np.float64) * ROT_RESOLUTION)


# ---------------------------------------------------------------------------
# Encode / decode


def gaussian_heatmap(u: float, v: float, resolution: int, sigma: float = HEATMAP_SIGMA) -> NDArray:
    """Isotropic Gaussian at sub-pixel ``(u, v)``, truncated at 3 sigma, sum 1."""
    centers = np.arange(resolution) + 0.5
    d2 = (centers[None, :] - u) ** 2 + (centers[:, None] - v) ** 2
    h = np.exp(-d2 / (2.0 * sigma * sigma))
    h[d2 > (3.0 * sigma) ** 2] = 0.0
    return h / h.sum()


def depth_to_bin(depth: float, spec: VirtualCameraSpec) -> int:
    lo, hi = spec.depth_range
    b = int(np.floor(N_DEPTH_BINS * (depth - lo) / (hi - lo)))
    return min(max(b, 0), N_DEPTH_BINS - 1)


def bin_to_depth(b: int, spec: VirtualCameraSpec) -> float:
    lo, hi = spec.depth_range
    return lo + (b + 0.5) * (hi - lo) / N_DEPTH_BINS


def in_view(spec: VirtualCameraSpec, position) -> bool:
    u, v, _ = world_to_pixel(spec, position)
    return bool(0 <= u < spec.resolution and 0 <= v < spec.resolution)


def encode(
    action: ActionVector, spec: VirtualCameraSpec, refine: int = 0, sigma: float = HEATMAP_SIGMA
) -> EncodedActionTarget:
    u, v, d = world_to_pixel(spec, action.position)
    if not (0 <= u < spec.resolution and 0 <= v < spec.resolution):
        raise EncodeOutOfView(
            f"action at {action.position.tolist()} projects to ({float(u):.2f}, {float(v):.2f}), "
            f"outside the {spec.resolution}x{spec.resolution} view"
        )
    return EncodedActionTarget(
        heatmap=gaussian_heatmap(float(u), float(v), spec.resolution, sigma),
        depth_bin=depth_to_bin(float(d), spec),
        rot_bins=rotation_bins(action.euler),
        open_bit=action.gripper_open,
        collision_bit=action.collision_allowed,
        refine_label=int(refine),
    )


def decode_euler(rot_logits: NDArray) -> NDArray:
    return bins_to_euler(np.argmax(rot_logits, axis=-1))


def decode(outputs: PolicyOutputs, spec: VirtualCameraSpec) -> ActionVector:
    """Turn logits into an action; argmax ties resolve to the lowest index."""
    flat = int(np.argmax(outputs.heatmap_logits))
    row, col = divmod(flat, outputs.heatmap_logits.shape[-1])
    depth = bin_to_depth(int(np.argmax(outputs.depth_logits)), spec)
    position = pixel_to_world(spec, col + 0.5, row + 0.5, depth)
    return ActionVector(
        position=position,
        rotation=quat_from_euler(decode_euler(outputs.rot_logits)),
        gripper_open=int(np.argmax(outputs.open_logits)),
        collision_allowed=int(np.argmax(outputs.collision_logits)),
    )


def onehot_outputs(target: EncodedActionTarget, scale: float = 1.0) -> PolicyOutputs:
    """Logits that put all the argmax mass on ``target`` (heatmap keeps its shape)."""
    eye2 = np.eye(2)
    return PolicyOutputs(
        heatmap_logits=scale * target.heatmap,
        depth_logits=scale * np.eye(N_DEPTH_BINS)[target.depth_bin],
        rot_logits=scale * np.eye(N_ROT_BINS)[target.rot_bins],
        open_logits=scale * eye2[target.open_bit],
        collision_logits=scale * eye2[target.collision_bit],
        refine_logits=scale * eye2[target.refine_label],
    )


def quantization_bound(spec: VirtualCameraSpec) -> float:
    """Worst-case encode->decode position error: half a pixel diagonal plus half a depth bin."""
    return spec.half_extent * np.sqrt(2.0) / spec.resolution + spec.depth_span / (2 * N_DEPTH_BINS)


def label_refine(
    coarse: ActionVector,
    fine: ActionVector,
    pos_tol: float = POSITION_THRESHOLD,
    rot_tol_deg: float = ROTATION_THRESHOLD_DEG,
) -> int:
    """1 if the two actions disagree by more than ``pos_tol`` meters or ``rot_tol_deg``."""
    if np.linalg.norm(coarse.position - fine.position) > pos_tol:
        return 1
    return int(np.degrees(quat_angle(coarse.rotation, fine.rotation)) > rot_tol_deg)
