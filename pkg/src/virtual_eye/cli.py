"""``virtual-eye`` command line.

Exit codes: 0 success, 2 usage or input error, 3 gradient-check failure,
4 external-service failure (chat endpoint or viewpoint selection).
"""

from __future__ import annotations

import argparse
import collections
import json
import sys
from pathlib import Path

import numpy as np

from .c2f import make_refine_labels
from .config import RunConfig
from .errors import CorruptDatasetError, ExternalServiceError, SelectionFailed, UsageError
from .evaluate import evaluate, write_report
from .geometry import CameraRig, RigCamera
from .keypoints import extract_keypoints
from .policy.checkpoint import load_params, save_params
from .policy.config import ModelConfig
from .policy.gradcheck import gradcheck
from .policy.train import read_log, train
from .renderer import VirtualCameraSpec, save_virtual_image
from .samples import build_samples, keyframe_pairs, training_set, zoomed_training_set
from .viewpoint.agent import select_view
from .viewpoint.client import make_client
from .world.dataset import read_dataset, write_dataset
from .world.demos import TASKS, make_demo
from .world.scene import WORKSPACE

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_EXTERNAL = 0, 2, 3, 4

GRADCHECK_CONFIGS = (
    dict(layers=2, embed_dim=16, heads=2, hidden_dim=32),
    dict(layers=2, embed_dim=16, heads=4, hidden_dim=16),
    dict(layers=2, embed_dim=16, heads=1, hidden_dim=48),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.apply(getattr(args, "set", None) or [])


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _load_spec(path) -> VirtualCameraSpec:
    data = json.loads(_existing(path, "spec file").read_text())
    return VirtualCameraSpec.from_dict(data.get("spec", data))


def _rig_from_frames(frames) -> CameraRig:
    return CameraRig([RigCamera(f.name, f.intrinsics, f.extrinsics) for f in frames], WORKSPACE)


# ---------------------------------------------------------------------------
# commands


def cmd_make_dataset(args) -> int:
    cfg = _config(args)
    task = args.task or cfg["task"]
    n = args.n if args.n is not None else cfg["data.n_demos"]
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    if n < 1:
        raise UsageError("--n must be at least 1")
    opts = {"n_distractors": cfg["data.distractors"]} if task == "reach" else {}
    demos = [make_demo(task, cfg.seed_for("demo", task, i), **opts) for i in range(n)]
    write_dataset(args.out, demos)
    hist = collections.Counter(
        len(extract_keypoints(d.trajectory, cfg["keypoints.vel_eps"], cfg["keypoints.min_gap"])) for d in demos
    )
    print(f"wrote {n} {task} demos to {args.out}")
    print("keypoints  demos")
    for k in sorted(hist):
        print(f"{k:9d}  {hist[k]}")
    return EXIT_OK


def cmd_select_view(args) -> int:
    cfg = _config(args)
    demos = read_dataset(_existing(args.dataset, "dataset"))
    if not demos:
        raise UsageError("dataset holds no demos")
    demo = demos[0]
    rig = CameraRig.load(_existing(args.rig, "rig file")) if args.rig else _rig_from_frames(demo.trajectory.steps[0].frames)
    endpoint = args.client or cfg["llm.endpoint"]
    client = make_client(endpoint, cfg["llm.model"], cfg["llm.api_key_env"])
    task = args.task or demo.instruction
    steps = [0]
    if args.requery_every_k_keyframes:
        keys = [obs for obs, _ in keyframe_pairs(demo, cfg["keypoints.vel_eps"], cfg["keypoints.min_gap"])]
        steps = keys[:: args.requery_every_k_keyframes]
    schedule, transcripts = [], []
    for step in steps:
        try:
            sel = select_view(
                client,
                task,
                rig,
                demo.trajectory.steps[step].frames,
                max_retries=cfg["view.max_retries"],
                distance=cfg["view.distance"],
                half_extent=cfg["view.half_extent"],
                resolution=cfg["view.resolution"],
                look_at=cfg["view.look_at"],
            )
        except SelectionFailed as exc:
            Path(args.out).with_suffix(".transcript.json").write_text(json.dumps(exc.transcript, indent=1))
            raise
        schedule.append({"step": step, "spec": sel.spec.to_dict()})
        transcripts.append({"step": step, "calls": sel.transcript})
    out = {"spec": schedule[0]["spec"], "schedule": schedule}
    Path(args.out).write_text(json.dumps(out, indent=1))
    Path(args.out).with_suffix(".transcript.json").write_text(json.dumps(transcripts, indent=1))
    print(f"selected elev={out['spec']['elev']:g} azim={out['spec']['azim']:g} -> {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    demos = read_dataset(_existing(args.dataset, "dataset"))
    spec = _load_spec(args.spec)
    samples = build_samples(demos, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_virtual_image(s.image, out / f"demo{s.demo_index:03d}_step{s.obs_step:03d}")
    print(f"rendered {len(samples)} views to {out}")
    return EXIT_OK


def _train_stage(ts, model_cfg, cfg, steps, log, seed) -> dict:
    res = train(
        ts,
        model_cfg,
        cfg.optimizer_config(),
        steps=steps,
        batch_size=cfg["train.batch_size"],
        seed=seed,
        log_path=log,
    )
    return res.params


def cmd_train(args) -> int:
    cfg = _config(args)
    demos = read_dataset(_existing(args.dataset, "dataset"))
    spec = _load_spec(args.spec)
    model_cfg = cfg.model_config()
    zoom = cfg["c2f.zoom_factor"]
    vel_eps, gap = cfg["keypoints.vel_eps"], cfg["keypoints.min_gap"]
    actions = {(i, k): d.trajectory.steps[k].action for i, d in enumerate(demos) for _, k in keyframe_pairs(d, vel_eps, gap)}
    labels = make_refine_labels(actions, spec, zoom)
    samples = build_samples(demos, spec, vel_eps, gap, refine_labels=labels, sigma=cfg["codec.sigma"])
    if not samples:
        raise UsageError("no encodable keyframes in the dataset for this spec")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _train_stage(training_set(samples), model_cfg, cfg, cfg["train.steps"], out / "coarse_metrics.csv", cfg.seed_for("train", "coarse"))
    save_params(out / "coarse", params, model_cfg, {"spec": spec.to_dict(), "zoom_factor": zoom})
    if cfg["train.fine"]:
        fine_ts = zoomed_training_set(samples, zoom, cfg["train.zoom_jitter"], cfg.seed_for("zoom-jitter"), cfg["codec.sigma"])
        fparams = _train_stage(fine_ts, model_cfg, cfg, cfg["train.fine_steps"], out / "fine_metrics.csv", cfg.seed_for("train", "fine"))
        save_params(out / "fine", fparams, model_cfg, {"spec": spec.to_dict(), "zoom_factor": zoom})
    print(f"trained on {len(samples)} keyframes ({sum(labels.values())} marked for refinement) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    demos = read_dataset(_existing(args.dataset, "dataset"))
    spec = _load_spec(args.spec)
    ck = _existing(args.checkpoints, "checkpoint directory")
    coarse, model_cfg, _ = load_params(ck / "coarse")
    fine, fine_cfg = None, None
    if (ck / "fine.bin").exists():
        fine, fine_cfg, _ = load_params(ck / "fine")
    force = cfg["c2f.force_refine"]
    if args.force_refine is not None:
        force = args.force_refine == "on"
    samples = build_samples(demos, spec, cfg["keypoints.vel_eps"], cfg["keypoints.min_gap"], sigma=cfg["codec.sigma"])
    report = evaluate(
        samples,
        coarse,
        fine,
        model_cfg,
        fine_cfg,
        zoom_factor=cfg["c2f.zoom_factor"],
        force_refine=force,
        success_tol=cfg["eval.success_tol"],
        tasks={i: d.task_name for i, d in enumerate(demos)},
    )
    write_report(args.out, report)
    s = report["summary"]
    print(
        f"{s['n_keyframes']} keyframes: mean position error {s['mean_position_error']:.4f} m "
        f"(bound {report['quantization_bound']:.4f}), refine rate {s['refine_rate']:.2f}, "
        f"success {s['success_rate']:.2f} -> {args.out}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg["seed"]
    ok = True
    for i, kw in enumerate(GRADCHECK_CONFIGS):
        rep = gradcheck(ModelConfig(**kw), seed=seed + i)
        ok &= rep.passed
        status = "ok" if rep.passed else "FAIL"
        print(f"{status}  {kw}  max rel error {rep.max_rel_error:.2e} over {len(rep.per_tensor)} tensors")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = _existing(args.input, "input file")
    fig, ax = plt.subplots(figsize=(7, 4))
    if src.suffix == ".csv":
        rows = read_log(src)
        if not rows:
            raise UsageError(f"{src} has no rows")
        steps = [r["step"] for r in rows]
        for key in [k for k in rows[0] if k != "step"]:
            ax.plot(steps, [max(r[key], 1e-6) for r in rows], label=key, lw=1)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
    else:
        report = json.loads(src.read_text())
        errs = [r["position_error"] for r in report["keyframes"]]
        ax.hist(errs, bins=30)
        ax.axvline(report["quantization_bound"], color="k", ls="--", label="quantization bound")
        ax.set_xlabel("position error (m)")
        ax.set_ylabel("keyframes")
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=100)
    plt.close(fig)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="virtual-eye", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    sp = sub.add_parser("make-dataset", help="generate scripted demos")
    common(sp)
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--n", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_make_dataset)

    sp = sub.add_parser("select-view", help="ask the chat model for a viewpoint")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--rig", help="rig JSON (default: cameras of the first frame set)")
    sp.add_argument("--task", help="instruction text (default: the first demo's)")
    sp.add_argument("--client", help="endpoint URL or mock:<responses.json> (overrides llm.endpoint)")
    sp.add_argument("--requery-every-k-keyframes", type=int, default=0, metavar="K")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_select_view)

    sp = sub.add_parser("render", help="write the virtual view of every keyframe observation")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("train", help="train coarse (and fine) policies")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="per-keyframe errors and refine statistics")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--spec", required=True)
    sp.add_argument("--force-refine", choices=("on", "off"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the policy gradients")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("plot", help="loss curves from a metrics CSV or an error histogram from a report")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, CorruptDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExternalServiceError, SelectionFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL


if __name__ == "__main__":
    sys.exit(main())
