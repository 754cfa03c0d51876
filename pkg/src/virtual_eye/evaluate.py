"""Per-keyframe evaluation of trained policies.

Report layout (JSON)::

    {
      "spec": {...}, "zoom_factor": f, "force_refine": null | bool,
      "quantization_bound": f,
      "keyframes": [
        {"demo": i, "task": s, "obs_step": k0, "key_step": k,
         "position_error": m, "rotation_error_deg": deg,
         "gripper_ok": b, "collision_ok": b, "refined": 0|1,
         "renders": n, "forwards": n, "latency_ms": {...}}, ...],
      "summary": {
        "n_keyframes": n, "mean_position_error": m, "median_position_error": m,
        "max_position_error": m, "mean_rotation_error_deg": deg,
        "within_bound_rate": r, "refine_rate": r, "success_rate": r,
        "mean_forwards": f, "mean_renders": f}
    }

A demo counts as a success when every one of its keyframes lands within
``success_tol`` meters, within ``ROT_SUCCESS_DEG`` degrees and with the
right gripper bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .c2f import DEFAULT_ZOOM, infer
from .codec import quantization_bound
from .geometry import quat_angle
from .policy.config import ModelConfig
from .samples import Sample

SUCCESS_TOL = 0.025  # half a block edge
ROT_SUCCESS_DEG = 7.5


def evaluate(
    samples: list[Sample],
    coarse_params: dict,
    fine_params: dict | None = None,
    config: ModelConfig | None = None,
    fine_config: ModelConfig | None = None,
    zoom_factor: float = DEFAULT_ZOOM,
    force_refine: bool | None = None,
    success_tol: float = SUCCESS_TOL,
    tasks: dict[int, str] | None = None,
) -> dict:
    if not samples:
        raise ValueError("nothing to evaluate")
    spec = samples[0].spec
    if fine_params is None and force_refine is None:
        force_refine = False
    rows = []
    traces = []
    for s in samples:
        tr = infer(coarse_params, fine_params, s.cloud, s.spec, s.instruction, zoom_factor, config, fine_config, force_refine)
        a = tr.action
        rows.append(
            {
                "demo": s.demo_index,
                "task": (tasks or {}).get(s.demo_index, ""),
                "obs_step": s.obs_step,
                "key_step": s.key_step,
                "position_error": float(np.linalg.norm(a.position - s.action.position)),
                "rotation_error_deg": float(np.degrees(quat_angle(a.rotation, s.action.rotation))),
                "gripper_ok": bool(a.gripper_open == s.action.gripper_open),
                "collision_ok": bool(a.collision_allowed == s.action.collision_allowed),
                "refined": tr.refined,
                "renders": tr.renders,
                "forwards": tr.forwards,
                "latency_ms": tr.latency_ms,
            }
        )
        traces.append(tr)
    pos = np.array([r["position_error"] for r in rows])
    rot = np.array([r["rotation_error_deg"] for r in rows])
    bound = quantization_bound(spec)
    ok_by_demo: dict[int, bool] = {}
    for r in rows:
        good = r["position_error"] <= success_tol and r["rotation_error_deg"] <= ROT_SUCCESS_DEG and r["gripper_ok"]
        ok_by_demo[r["demo"]] = ok_by_demo.get(r["demo"], True) and good
    summary = {
        "n_keyframes": len(rows),
        "n_demos": len(ok_by_demo),
        "mean_position_error": float(pos.mean()),
        "median_position_error": float(np.median(pos)),
        "max_position_error": float(pos.max()),
        "mean_rotation_error_deg": float(rot.mean()),
        "within_bound_rate": float(np.mean(pos <= bound)),
        "refine_rate": float(np.mean([r["refined"] for r in rows])),
        "success_rate": float(np.mean(list(ok_by_demo.values()))),
        "mean_forwards": float(np.mean([r["forwards"] for r in rows])),
        "mean_renders": float(np.mean([r["renders"] for r in rows])),
    }
    report = {
        "spec": spec.to_dict(),
        "zoom_factor": zoom_factor,
        "force_refine": force_refine,
        "quantization_bound": bound,
        "success_tol": success_tol,
        "keyframes": rows,
        "summary": summary,
    }
    report["_traces"] = traces
    return report


def write_report(path, report: dict) -> None:
    clean = {k: v for k, v in report.items() if not k.startswith("_")}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(clean, indent=1, sort_keys=True))
