"""Central finite-difference check of :func:`~.model.backward`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import N_DEPTH_BINS, gaussian_heatmap
from .config import ModelConfig
from .losses import TargetBatch, loss
from .model import backward, forward, init_params

DEFAULT_TOL = 1e-4


@dataclass
class GradcheckReport:
    config: ModelConfig
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0
    tol: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def random_problem(config: ModelConfig, seed: int, batch: int = 2, dtype=np.float64):
    """Random params, inputs and targets for a gradient check."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed=seed, dtype=dtype)
    # perturb away from the symmetric init so every path carries signal
    for name, v in params.items():
        params[name] = (v + rng.standard_normal(v.shape) * 0.05).astype(dtype)
    r = config.image_size
    images = rng.uniform(0.0, 1.0, (batch, config.channels, r, r)).astype(dtype)
    lang = rng.standard_normal((batch, config.n_lang_tokens, config.embed_dim)).astype(dtype)
    targets = TargetBatch(
        heatmap=np.stack([gaussian_heatmap(*rng.uniform(5, r - 5, 2), r) for _ in range(batch)]).astype(dtype),
        depth=rng.integers(0, N_DEPTH_BINS, batch),
        rot=rng.integers(0, config.rot_bins_per_axis, (batch, 3)),
        open=rng.integers(0, 2, batch),
        collision=rng.integers(0, 2, batch),
        refine=rng.integers(0, 2, batch),
    )
    return params, images, lang, targets


def gradcheck(
    config: ModelConfig,
    seed: int = 0,
    entries_per_tensor: int = 3,
    h: float = 1e-5,
    tol: float = DEFAULT_TOL,
) -> GradcheckReport:
    """Compare analytic gradients with central differences in float64.

    Every parameter tensor is probed at its largest-magnitude analytic entry
    plus ``entries_per_tensor`` random entries.
    """
    params, images, lang, targets = random_problem(config, seed)
    rng = np.random.default_rng(seed + 1)

    def objective() -> float:
        return loss(forward(images, lang, config, params), targets).total

    outputs, cache = forward(images, lang, config, params, keep_cache=True)
    grads = backward(loss(outputs, targets).grad, cache, config, params)

    report = GradcheckReport(config=config, max_rel_error=0.0, tol=tol)
    for name, value in params.items():
        flat = value.reshape(-1)
        gflat = grads[name].reshape(-1)
        picks = {int(np.argmax(np.abs(gflat)))}
        picks.update(int(i) for i in rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False))
        worst = 0.0
        for i in sorted(picks):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            numeric = (up - down) / (2 * h)
            analytic = float(gflat[i])
            scale = max(abs(numeric), abs(analytic), 1e-7)
            worst = max(worst, abs(numeric - analytic) / scale)
            report.checked_entries += 1
        report.per_tensor[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
