from .dataset import read_dataset, write_dataset
from .demos import TASKS, Demonstration, make_demo, task_success
from .scene import Box, Scene, make_rig, raycast_rgbd, render_frames

__all__ = [
    "read_dataset",
    "write_dataset",
    "TASKS",
    "Demonstration",
    "make_demo",
    "task_success",
    "Box",
    "Scene",
    "make_rig",
    "raycast_rgbd",
    "render_frames",
]
