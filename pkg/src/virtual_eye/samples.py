"""Turning demonstrations into (virtual view, instruction, target) training samples.

A sample pairs the observation at the previous keyframe (step 0 for the
first one) with the action recorded at the next keyframe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .codec import HEATMAP_SIGMA, ActionVector, EncodedActionTarget, encode, in_view
from .errors import EncodeOutOfView
from .geometry import PointCloud, WorkspaceBounds, fuse
from .keypoints import DEFAULT_MIN_GAP, DEFAULT_VEL_EPS, extract_keypoints
from .policy.model import image_channels
from .policy.train import TrainingSet
from .renderer import DISTANCE_FACTOR, VirtualCameraSpec, VirtualImage, render, zoom_spec
from .world.demos import Demonstration
from .world.scene import WORKSPACE


def default_spec(
    elev: float,
    azim: float,
    bounds: WorkspaceBounds = WORKSPACE,
    look_at=(0.0, 0.0, 0.0),
    half_extent: float = 0.5,
    resolution: int = 224,
) -> VirtualCameraSpec:
    """Global view at ``DISTANCE_FACTOR`` times the workspace diagonal."""
    return VirtualCameraSpec(
        elev=elev,
        azim=azim,
        distance=DISTANCE_FACTOR * bounds.diagonal,
        look_at=look_at,
        half_extent=half_extent,
        resolution=resolution,
    )


@dataclass(eq=False)
class Sample:
    demo_index: int
    obs_step: int
    key_step: int
    instruction: str
    cloud: PointCloud
    image: VirtualImage
    action: ActionVector
    target: EncodedActionTarget

    @property
    def spec(self) -> VirtualCameraSpec:
        return self.image.spec


def keyframe_pairs(demo: Demonstration, vel_eps: float = DEFAULT_VEL_EPS, min_gap: int = DEFAULT_MIN_GAP):
    keys = extract_keypoints(demo.trajectory, vel_eps=vel_eps, min_gap=min_gap)
    return list(zip([0] + keys[:-1], keys))


def observation_cloud(demo: Demonstration, step: int, bounds: WorkspaceBounds = WORKSPACE) -> PointCloud:
    frames = demo.trajectory.steps[step].frames
    if not frames:
        raise ValueError(f"demo step {step} carries no frames (generated with render=False?)")
    return fuse(frames, bounds)


def build_samples(
    demos: list[Demonstration],
    spec: VirtualCameraSpec,
    vel_eps: float = DEFAULT_VEL_EPS,
    min_gap: int = DEFAULT_MIN_GAP,
    bounds: WorkspaceBounds = WORKSPACE,
    refine_labels: dict | None = None,
    sigma: float = HEATMAP_SIGMA,
) -> list[Sample]:
    """One sample per keyframe.  Keyframes whose action leaves the view are skipped with a warning.

    ``refine_labels`` maps ``(demo_index, key_step)`` to the indicator label.
    """
    out = []
    for i, demo in enumerate(demos):
        for obs, key in keyframe_pairs(demo, vel_eps, min_gap):
            action = demo.trajectory.steps[key].action
            if not in_view(spec, action.position):
                warnings.warn(f"demo {i} keyframe {key}: action outside the view, skipped")
                continue
            refine = (refine_labels or {}).get((i, key), 0)
            try:
                target = encode(action, spec, refine=refine, sigma=sigma)
            except EncodeOutOfView as exc:
                warnings.warn(f"demo {i} keyframe {key}: {exc}")
                continue
            cloud = observation_cloud(demo, obs, bounds)
            out.append(Sample(i, obs, key, demo.instruction, cloud, render(cloud, spec), action, target))
    return out


def training_set(samples: list[Sample]) -> TrainingSet:
    return TrainingSet.from_samples(
        [image_channels(s.image) for s in samples], [s.instruction for s in samples], [s.target for s in samples]
    )


def zoomed_training_set(
    samples: list[Sample], factor: float, jitter: float = 0.02, seed: int = 0, sigma: float = HEATMAP_SIGMA
) -> TrainingSet:
    """Fine-stage inputs: each cloud re-rendered around a jittered copy of its target.

    At inference the zoom centers on the coarse prediction, which is off
    by up to the coarse quantization error; the per-axis uniform jitter in
    ``[-jitter, jitter]`` keeps the fine model from learning "always the center".
    """
    rng = np.random.default_rng(seed)
    images, targets = [], []
    for s in samples:
        center = s.action.position + rng.uniform(-jitter, jitter, 3)
        z = zoom_spec(s.spec, center, factor)
        images.append(image_channels(render(s.cloud, z)))
        targets.append(encode(s.action, z, refine=s.target.refine_label, sigma=sigma))
    return TrainingSet.from_samples(images, [s.instruction for s in samples], targets)
