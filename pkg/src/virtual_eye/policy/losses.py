"""Six-term training loss and its gradient with respect to the logits.

``total = trans + rot + open + collision + depth + dyn_inf`` averaged over
the batch.  All terms are cross-entropies.  For the heatmap the target is a
soft Gaussian, and ``trans`` is reported as cross-entropy minus the target's
own entropy (i.e. the KL divergence), so that a perfect prediction scores 0;
the offset is constant per sample and does not change the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import EncodedActionTarget, PolicyOutputs

TERMS = ("trans", "rot", "open", "collision", "depth", "dyn_inf")


@dataclass(eq=False)
class TargetBatch:
    heatmap: np.ndarray  # (B, R, R)
    depth: np.ndarray  # (B,)
    rot: np.ndarray  # (B, 3)
    open: np.ndarray  # (B,)
    collision: np.ndarray  # (B,)
    refine: np.ndarray  # (B,)

    @classmethod
    def stack(cls, targets: list[EncodedActionTarget], dtype=np.float64) -> TargetBatch:
        return cls(
            heatmap=np.stack([t.heatmap for t in targets]).astype(dtype),
            depth=np.array([t.depth_bin for t in targets]),
            rot=np.stack([t.rot_bins for t in targets]),
            open=np.array([t.open_bit for t in targets]),
            collision=np.array([t.collision_bit for t in targets]),
            refine=np.array([t.refine_label for t in targets]),
        )

    def __len__(self) -> int:
        return len(self.depth)

    def subset(self, idx) -> TargetBatch:
        return TargetBatch(**{k: v[idx] for k, v in self.__dict__.items()})


@dataclass(eq=False)
class LossResult:
    total: float
    terms: dict[str, float]
    grad: PolicyOutputs  # d(total)/d(logits)


def log_softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _ce_index(logits: np.ndarray, index: np.ndarray):
    """Per-row CE against integer labels and its gradient.  ``logits`` is ``(..., K)``."""
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, index[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, index[..., None], np.take_along_axis(grad, index[..., None], -1) - 1.0, -1)
    return -picked, grad


def loss(outputs: PolicyOutputs, targets: TargetBatch | list[EncodedActionTarget]) -> LossResult:
    if outputs.heatmap_logits.ndim == 2:
        outputs = PolicyOutputs(**{k: v[None] for k, v in outputs.__dict__.items()})
    if isinstance(targets, EncodedActionTarget):
        targets = [targets]
    if not isinstance(targets, TargetBatch):
        targets = TargetBatch.stack(list(targets))
    bsz = len(targets)
    heat = outputs.heatmap_logits.reshape(bsz, -1)
    t = targets.heatmap.reshape(bsz, -1).astype(heat.dtype)

    logp = log_softmax(heat)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_logt = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
    trans = (t_logt - t * logp).sum(-1)
    dheat = (np.exp(logp) - t).reshape(outputs.heatmap_logits.shape)

    rot, drot = _ce_index(outputs.rot_logits, targets.rot)
    rot = rot.sum(-1)
    op, dop = _ce_index(outputs.open_logits, targets.open)
    col, dcol = _ce_index(outputs.collision_logits, targets.collision)
    dep, ddep = _ce_index(outputs.depth_logits, targets.depth)
    ref, dref = _ce_index(outputs.refine_logits, targets.refine)

    per_term = {"trans": trans, "rot": rot, "open": op, "collision": col, "depth": dep, "dyn_inf": ref}
    terms = {k: float(v.mean()) for k, v in per_term.items()}
    total = float(sum(terms[k] for k in TERMS))
    inv = 1.0 / bsz
    grad = PolicyOutputs(
        heatmap_logits=dheat * inv,
        depth_logits=ddep * inv,
        rot_logits=drot * inv,
        open_logits=dop * inv,
        collision_logits=dcol * inv,
        refine_logits=dref * inv,
    )
    return LossResult(total, terms, grad)
