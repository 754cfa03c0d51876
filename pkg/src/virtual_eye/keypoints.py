"""Keyframe discovery on demonstration trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import ActionVector
from .errors import UsageError
from .geometry import RgbdFrame

DEFAULT_VEL_EPS = 1e-3
DEFAULT_MIN_GAP = 2


@dataclass(eq=False)
class TrajectoryStep:
    frames: list[RgbdFrame]
    action: ActionVector
    joint_velocity_norm: float
    gripper_open: int


@dataclass(eq=False)
class Trajectory:
    steps: list[TrajectoryStep]
    instruction: str

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([s.joint_velocity_norm for s in self.steps], dtype=np.float64)

    @property
    def gripper_states(self) -> np.ndarray:
        return np.array([s.gripper_open for s in self.steps], dtype=np.int64)


def keypoint_candidates(gripper_open, velocity, vel_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Masks of gripper-toggle steps and near-rest steps.

    Step 0 is the initial observation and is never a candidate.
    """
    gripper_open = np.asarray(gripper_open)
    velocity = np.asarray(velocity, dtype=np.float64)
    toggles = np.zeros(len(velocity), dtype=bool)
    resting = np.zeros(len(velocity), dtype=bool)
    toggles[1:] = gripper_open[1:] != gripper_open[:-1]
    resting[1:] = velocity[1:] < vel_eps
    return toggles, resting


def _spaced(indices, min_gap: int) -> list[int]:
    kept: list[int] = []
    for i in indices:
        if not kept or i - kept[-1] >= min_gap:
            kept.append(int(i))
    return kept


def extract_keypoints(
    traj: Trajectory | tuple, vel_eps: float = DEFAULT_VEL_EPS, min_gap: int = DEFAULT_MIN_GAP
) -> list[int]:
    """Sparse keyframe indices, strictly increasing and ending at the last step.

    ``traj`` is a :class:`Trajectory` or a ``(gripper_open, velocity)`` pair.

    Candidates closer than ``min_gap`` to an earlier kept one are dropped,
    except that gripper toggles take precedence over near-rest steps: a
    near-rest step is also dropped when a kept toggle follows within
    ``min_gap``.  This keeps the toggle set independent of ``vel_eps``.
    The final step is always kept, regardless of spacing.
    """
    if isinstance(traj, Trajectory):
        gripper, vel = traj.gripper_states, traj.velocities
    else:
        gripper, vel = traj
    vel = np.asarray(vel, dtype=np.float64)
    if len(vel) < 2:
        raise UsageError("trajectory needs at least 2 steps")
    if not vel_eps > 0 or min_gap < 1:
        raise UsageError(f"need vel_eps > 0 and min_gap >= 1, got {vel_eps}, {min_gap}")
    if not np.all(np.isfinite(vel)):
        raise UsageError("velocities must be finite")
    last = len(vel) - 1
    toggles, resting = keypoint_candidates(gripper, vel, vel_eps)
    toggles[last] = resting[last] = False
    toggle_keys = _spaced(np.flatnonzero(toggles), min_gap)
    is_toggle_key = np.zeros(len(vel), dtype=bool)
    is_toggle_key[toggle_keys] = True

    kept: list[int] = []
    next_toggle = iter(toggle_keys + [None])
    upcoming = next(next_toggle)
    for i in np.flatnonzero(toggles | resting):
        i = int(i)
        if is_toggle_key[i]:
            kept.append(i)
            upcoming = next(next_toggle)
            continue
        if toggles[i]:
            continue  # toggle suppressed by an earlier toggle
        if kept and i - kept[-1] < min_gap:
            continue
        if upcoming is not None and upcoming - i < min_gap:
            continue
        kept.append(i)
    kept.append(last)
    return kept
