"""Scripted waypoint experts for three tabletop tasks.

Every demo is a chain of straight segments with cosine easing, so the tool
comes to rest exactly at each waypoint (velocity 0 there) and moves briskly
in between.  Gripper toggles happen on arrival.  Dynamics are kinematic: a
closing gripper picks up an object whose center is within ``GRASP_RADIUS``,
and the object then rides along until the gripper opens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..codec import ActionVector, quat_from_euler
from ..errors import UsageError
from ..keypoints import Trajectory, TrajectoryStep
from ..seeds import rng_for
from .scene import Box, Scene, make_rig, render_frames

TASKS = ("reach", "stack", "place_in_bowl")

COLORS = {
    "red": (200, 40, 40),
    "green": (40, 170, 60),
    "blue": (40, 70, 200),
    "yellow": (220, 200, 40),
    "purple": (140, 60, 170),
    "orange": (230, 120, 30),
}
BLOCK = 0.05
BOWL_SIZE = 0.16
BOWL_WALL = 0.01
BOWL_DEPTH = 0.04
BOWL_COLOR = (90, 200, 200)

SPAWN_HALF = 0.3
MIN_SEPARATION = 0.12
HOVER = 0.12
GRASP_RADIUS = 0.02
STEP_LEN = 0.03
MIN_SEG_STEPS, MAX_SEG_STEPS = 10, 25
DT = 0.1
DOWN = (180.0, 0.0)  # roll, pitch of a top-down grasp
MIN_LEN, MAX_LEN = 20, 160


@dataclass(frozen=True)
class Waypoint:
    position: NDArray
    gripper_open: int  # state after arrival
    collision_allowed: int = 0  # for the segment leading here


@dataclass(eq=False)
class Demonstration:
    trajectory: Trajectory
    task_name: str
    variation: str
    seed: int
    scene: Scene  # initial state
    final_scene: Scene | None = None
    yaw: float = 0.0

    @property
    def instruction(self) -> str:
        return self.trajectory.instruction

    def __len__(self) -> int:
        return len(self.trajectory)


# ---------------------------------------------------------------------------
# Scene sampling


def _spawn_xy(rng, n: int, half: float = SPAWN_HALF, sep: float = MIN_SEPARATION) -> list[NDArray]:
    for _ in range(1000):
        pts = rng.uniform(-half, half, (n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(n) * 1e9
        if d.min() >= sep:
            return list(pts)
    raise RuntimeError("could not place objects without overlap")


def block(obj_id: str, xy, color: str) -> Box:
    return Box(obj_id, [xy[0], xy[1], BLOCK / 2], [BLOCK] * 3, COLORS[color])


def bowl_parts(xy) -> list[Box]:
    x, y = xy
    s, w, h = BOWL_SIZE, BOWL_WALL, BOWL_DEPTH
    parts = [Box("bowl.base", [x, y, w / 2], [s, s, w], BOWL_COLOR)]
    zc = w + h / 2
    parts.append(Box("bowl.wall_n", [x, y + (s - w) / 2, zc], [s, w, h], BOWL_COLOR))
    parts.append(Box("bowl.wall_s", [x, y - (s - w) / 2, zc], [s, w, h], BOWL_COLOR))
    parts.append(Box("bowl.wall_e", [x + (s - w) / 2, y, zc], [w, s - 2 * w, h], BOWL_COLOR))
    parts.append(Box("bowl.wall_w", [x - (s - w) / 2, y, zc], [w, s - 2 * w, h], BOWL_COLOR))
    return parts


def _start_tool(rng) -> NDArray:
    return np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.35, 0.45)])


# ---------------------------------------------------------------------------
# Task scripts: (scene, waypoints, instruction, variation, yaw)


def _reach(rng, n_distractors: int = 1):
    names = list(rng.permutation(list(COLORS)))[: 1 + n_distractors]
    xy = _spawn_xy(rng, len(names))
    objects = [block("target", xy[0], names[0])] + [block(f"distractor{i}", p, c) for i, (p, c) in enumerate(zip(xy[1:], names[1:]))]
    c = objects[0].center
    wps = [Waypoint(c + [0, 0, HOVER], 1), Waypoint(c.copy(), 1)]
    return objects, wps, f"reach the {names[0]} block", names[0], 0.0


def _stack(rng):
    top, base = list(rng.permutation(list(COLORS)))[:2]
    xy = _spawn_xy(rng, 2)
    objects = [block("top", xy[0], top), block("base", xy[1], base)]
    a, b = objects[0].center, objects[1].center
    place = b + [0, 0, BLOCK]
    wps = [
        Waypoint(a + [0, 0, HOVER], 1),
        Waypoint(a.copy(), 0, 1),
        Waypoint(a + [0, 0, HOVER], 0),
        Waypoint(place + [0, 0, HOVER], 0),
        Waypoint(place, 1, 1),
        Waypoint(place + [0, 0, HOVER], 1),
    ]
    yaw = float(rng.choice([0.0, 90.0]))
    return objects, wps, f"stack the {top} block on the {base} block", f"{top} on {base}", yaw


def _place_in_bowl(rng):
    color = str(rng.choice(list(COLORS)))
    xy = _spawn_xy(rng, 2, sep=MIN_SEPARATION + BOWL_SIZE / 2)
    objects = [block("item", xy[0], color)] + bowl_parts(xy[1])
    a = objects[0].center
    place = np.array([xy[1][0], xy[1][1], BOWL_WALL + BLOCK / 2])
    wps = [
        Waypoint(a + [0, 0, HOVER], 1),
        Waypoint(a.copy(), 0, 1),
        Waypoint(a + [0, 0, HOVER], 0),
        Waypoint(place + [0, 0, HOVER], 0),
        Waypoint(place, 1, 1),
        Waypoint(place + [0, 0, HOVER], 1),
    ]
    yaw = float(rng.choice([0.0, 90.0]))
    return objects, wps, f"put the {color} block in the bowl", color, yaw


_SCRIPTS = {"reach": _reach, "stack": _stack, "place_in_bowl": _place_in_bowl}


# ---------------------------------------------------------------------------
# Rollout


def segment_steps(a, b) -> int:
    dist = float(np.linalg.norm(np.asarray(b) - np.asarray(a)))
    return int(np.clip(math.ceil(dist / STEP_LEN), MIN_SEG_STEPS, MAX_SEG_STEPS))


def _ease(a, b, n: int):
    """Positions and speeds for steps 1..n of an eased move; speed is 0 on arrival."""
    for k in range(1, n + 1):
        s = k / n
        pos = a + (b - a) * (1 - math.cos(math.pi * s)) / 2
        speed = 0.0 if k == n else float(np.linalg.norm(b - a)) * math.pi / 2 * math.sin(math.pi * s) / (n * DT)
        yield (b.copy() if k == n else pos), speed


def rollout(scene: Scene, start: NDArray, waypoints: list[Waypoint], instruction: str, yaw: float, render: bool = True):
    rotation = quat_from_euler([DOWN[0], DOWN[1], yaw])
    tool = np.asarray(start, dtype=np.float64)
    grip = 1
    held: tuple[str, NDArray] | None = None
    steps: list[TrajectoryStep] = []

    def record(state: Scene, speed: float, collision: int):
        frames = render_frames(state.with_gripper(tool, grip)) if render else []
        action = ActionVector(tool.copy(), rotation, gripper_open=grip, collision_allowed=collision)
        steps.append(TrajectoryStep(frames, action, speed, grip))

    record(scene, 0.0, 0)
    for wp in waypoints:
        for pos, speed in _ease(tool, wp.position, segment_steps(tool, wp.position)):
            tool = pos
            if held is not None:
                scene = scene.moved(held[0], tool + held[1])
            if speed == 0.0 and wp.gripper_open != grip:
                grip = wp.gripper_open
                if grip == 0:
                    near = [b for b in scene.objects if np.linalg.norm(b.center - tool) <= GRASP_RADIUS]
                    if near:
                        held = (near[0].id, near[0].center - tool)
                else:
                    held = None
            record(scene, speed, wp.collision_allowed)
    return Trajectory(steps, instruction), scene.with_gripper(tool, grip)


def make_demo(task_name: str, seed: int, render: bool = True, **task_options) -> Demonstration:
    """Scripted demonstration of ``task_name`` in a scene drawn from ``seed``."""
    if task_name not in _SCRIPTS:
        raise UsageError(f"unknown task {task_name!r}; expected one of {', '.join(TASKS)}")
    rng = rng_for(seed, "scene", task_name)
    objects, wps, instruction, variation, yaw = _SCRIPTS[task_name](rng, **task_options)
    start = _start_tool(rng)
    scene = Scene(objects, make_rig(start), seed=seed)
    traj, final = rollout(scene, start, wps, instruction, yaw, render=render)
    if not MIN_LEN <= len(traj) <= MAX_LEN:
        raise RuntimeError(f"{task_name} demo has {len(traj)} steps, outside [{MIN_LEN}, {MAX_LEN}]")
    return Demonstration(traj, task_name, variation, seed, scene, final, yaw)


# ---------------------------------------------------------------------------
# Success predicates


def task_success(demo: Demonstration, scene: Scene | None = None, tool=None) -> bool:
    """Whether the final state achieves the task."""
    scene = scene or demo.final_scene
    if demo.task_name == "reach":
        tool = demo.trajectory.steps[-1].action.position if tool is None else np.asarray(tool)
        return bool(np.linalg.norm(tool - scene.get("target").center) <= 1e-9)
    if demo.task_name == "stack":
        top, base = scene.get("top"), scene.get("base")
        flat = np.linalg.norm(top.center[:2] - base.center[:2]) <= 0.01
        resting = abs(top.lo[2] - base.hi[2]) <= 1e-6
        return bool(flat and resting)
    if demo.task_name == "place_in_bowl":
        item, bowl = scene.get("item"), scene.get("bowl.base")
        inner = BOWL_SIZE / 2 - BOWL_WALL - BLOCK / 2
        inside = np.all(np.abs(item.center[:2] - bowl.center[:2]) <= inner + 1e-9)
        resting = abs(item.lo[2] - bowl.hi[2]) <= 1e-6
        return bool(inside and resting)
    raise UsageError(f"unknown task {demo.task_name!r}")
