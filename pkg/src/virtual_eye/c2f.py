"""Two-stage inference with a learned switch for the zoomed second pass."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .codec import ActionVector, PolicyOutputs, decode, encode, in_view, label_refine, onehot_outputs
from .errors import EncodeOutOfView, UsageError
from .geometry import PointCloud
from .policy.config import ModelConfig
from .policy.language import encode_language
from .policy.model import forward, image_channels
from .renderer import VirtualCameraSpec, render, zoom_spec

DEFAULT_ZOOM = 4.0


@dataclass(eq=False)
class InferenceTrace:
    coarse_action: ActionVector
    refined: int
    coarse_spec: VirtualCameraSpec
    fine_action: ActionVector | None = None
    fine_spec: VirtualCameraSpec | None = None
    renders: int = 0
    forwards: int = 0
    latency_ms: dict[str, float] = field(default_factory=dict)

    @property
    def action(self) -> ActionVector:
        return self.fine_action if self.refined else self.coarse_action

    def to_dict(self) -> dict:
        def act(a):
            if a is None:
                return None
            return {
                "position": a.position.tolist(),
                "quaternion": a.rotation.tolist(),
                "gripper_open": a.gripper_open,
                "collision_allowed": a.collision_allowed,
            }

        return {
            "refined": self.refined,
            "coarse_action": act(self.coarse_action),
            "fine_action": act(self.fine_action),
            "coarse_spec": self.coarse_spec.to_dict(),
            "fine_spec": self.fine_spec.to_dict() if self.fine_spec else None,
            "renders": self.renders,
            "forwards": self.forwards,
            "latency_ms": self.latency_ms,
        }


def write_traces(path, traces: list[InferenceTrace]) -> None:
    with open(path, "w") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def _run(params, config, img, lang) -> PolicyOutputs:
    return forward(image_channels(img)[None], lang[None], config, params)[0]


def infer(
    coarse_params: dict,
    fine_params: dict | None,
    cloud: PointCloud,
    global_spec: VirtualCameraSpec,
    instruction: str,
    zoom_factor: float = DEFAULT_ZOOM,
    config: ModelConfig | None = None,
    fine_config: ModelConfig | None = None,
    force_refine: bool | None = None,
    lang_seed: int = 0,
) -> InferenceTrace:
    """Coarse pass on the global view; a zoomed fine pass only when the indicator says so.

    ``force_refine`` overrides the indicator (``True``: always refine,
    ``False``: never).  The fine decode cannot leave the zoomed frustum.
    """
    if not zoom_factor > 1:
        raise UsageError(f"zoom_factor must be > 1, got {zoom_factor}")
    config = config or ModelConfig()
    fine_config = fine_config or config
    lat = {}
    t0 = time.perf_counter()
    img = render(cloud, global_spec)
    t1 = time.perf_counter()
    lang = encode_language(instruction, config.embed_dim, seed=lang_seed).astype(np.float32)
    out = _run(coarse_params, config, img, lang)
    t2 = time.perf_counter()
    lat["render_coarse"], lat["forward_coarse"] = (t1 - t0) * 1e3, (t2 - t1) * 1e3
    coarse = decode(out, global_spec)
    refined = int(np.argmax(out.refine_logits)) if force_refine is None else int(bool(force_refine))
    trace = InferenceTrace(coarse, refined, global_spec, renders=1, forwards=1, latency_ms=lat)
    if not refined:
        return trace
    if fine_params is None:
        raise UsageError("refinement requested but no fine-stage parameters were given")
    z = zoom_spec(global_spec, coarse.position, zoom_factor)
    t3 = time.perf_counter()
    zimg = render(cloud, z)
    t4 = time.perf_counter()
    flang = lang if fine_config.embed_dim == config.embed_dim else encode_language(instruction, fine_config.embed_dim, seed=lang_seed).astype(np.float32)
    fout = _run(fine_params, fine_config, zimg, flang)
    t5 = time.perf_counter()
    lat["render_fine"], lat["forward_fine"] = (t4 - t3) * 1e3, (t5 - t4) * 1e3
    trace.fine_action = decode(fout, z)
    trace.fine_spec = z
    trace.renders, trace.forwards = 2, 2
    return trace


def codec_roundtrip(action: ActionVector, spec: VirtualCameraSpec) -> ActionVector:
    """What a perfect policy would output for ``action`` in ``spec``."""
    return decode(onehot_outputs(encode(action, spec)), spec)


def refine_label_for(action: ActionVector, coarse_spec: VirtualCameraSpec, zoom_factor: float) -> int:
    """Quantization discrepancy between the global view and the zoom around its decode."""
    if not zoom_factor > 1:
        raise UsageError(f"zoom_factor must be > 1, got {zoom_factor}")
    coarse = codec_roundtrip(action, coarse_spec)
    fine = codec_roundtrip(action, zoom_spec(coarse_spec, coarse.position, zoom_factor))
    return label_refine(coarse, fine)


def make_refine_labels(actions, coarse_spec: VirtualCameraSpec, zoom_factor: float = DEFAULT_ZOOM) -> dict:
    """Label every keyframe action; ``actions`` maps a key (any hashable) to an :class:`ActionVector`.

    Keys whose action leaves either view are dropped with a warning.
    """
    if not zoom_factor > 1:
        raise UsageError(f"zoom_factor must be > 1, got {zoom_factor}")
    labels = {}
    for key, a in dict(actions).items():
        if not in_view(coarse_spec, a.position):
            warnings.warn(f"keyframe {key}: outside the global view, excluded")
            continue
        try:
            labels[key] = refine_label_for(a, coarse_spec, zoom_factor)
        except EncodeOutOfView as exc:
            warnings.warn(f"keyframe {key}: {exc}, excluded")
    return labels
