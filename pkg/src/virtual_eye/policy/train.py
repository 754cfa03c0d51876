"""Mini-batch training loop for the policy."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..codec import EncodedActionTarget
from ..errors import NonFiniteLossError, UsageError
from .config import ModelConfig
from .language import encode_language
from .losses import TERMS, TargetBatch, loss
from .model import backward, check_params, forward, init_params
from .optim import AdamW, OptimizerConfig

LOG_COLUMNS = ("step", "total") + TERMS


@dataclass(eq=False)
class TrainingSet:
    """Pre-rendered model inputs with their encoded targets."""

    images: np.ndarray  # (N, 4, R, R) float32
    instructions: list[str]
    targets: TargetBatch

    def __post_init__(self):
        n = len(self.images)
        if n == 0:
            raise UsageError("training set is empty")
        if len(self.instructions) != n or len(self.targets) != n:
            raise UsageError("images, instructions and targets differ in length")

    def __len__(self) -> int:
        return len(self.images)

    @classmethod
    def from_samples(cls, images, instructions, targets: list[EncodedActionTarget]) -> TrainingSet:
        return cls(np.stack(images).astype(np.float32), list(instructions), TargetBatch.stack(targets, dtype=np.float32))

    def language(self, dim: int, seed: int = 0) -> np.ndarray:
        cache: dict[str, np.ndarray] = {}
        for text in self.instructions:
            if text not in cache:
                cache[text] = encode_language(text, dim, seed=seed)
        return np.stack([cache[t] for t in self.instructions]).astype(np.float32)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_terms(self) -> dict[str, float]:
        return dict(self.log[-1]) if self.log else {}


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i : i + batch_size]
        if n < batch_size:
            yield order


def train(
    data: TrainingSet,
    config: ModelConfig,
    opt: OptimizerConfig | None = None,
    steps: int = 1000,
    batch_size: int = 16,
    seed: int = 0,
    log_path=None,
    init: dict[str, np.ndarray] | None = None,
    lang_seed: int = 0,
    stop_when=None,
) -> TrainResult:
    """Train from ``init`` (or a fresh seeded init) for ``steps`` updates.

    Each row of the log holds the step number, the batch-mean total and the
    six term values.  ``stop_when(row)`` may end training early.  Raises
    :class:`NonFiniteLossError` as soon as a loss or gradient is not finite.
    """
    if steps < 0 or batch_size < 1:
        raise UsageError("steps must be >= 0 and batch_size >= 1")
    opt = opt or OptimizerConfig()
    params = {k: v.copy() for k, v in init.items()} if init is not None else init_params(config, seed=seed)
    check_params(params, config)
    params = {k: v.astype(np.float32) for k, v in params.items()}
    result = TrainResult(params)
    if steps == 0:
        return result

    lang = data.language(config.embed_dim, seed=lang_seed)
    rng = np.random.default_rng([seed, 1])
    optimizer = AdamW(params, opt, total_steps=steps)
    batches = _batches(len(data), min(batch_size, len(data)), rng)
    writer = fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    start = time.perf_counter()
    try:
        for step in range(1, steps + 1):
            idx = next(batches)
            out, cache = forward(data.images[idx], lang[idx], config, params, keep_cache=True)
            res = loss(out, data.targets.subset(idx))
            if not math.isfinite(res.total):
                bad = [k for k, v in res.terms.items() if not math.isfinite(v)]
                raise NonFiniteLossError(f"step {step}: loss is not finite (terms {bad}, batch {idx.tolist()})")
            grads = backward(res.grad, cache, config, params)
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                raise NonFiniteLossError(f"step {step}: non-finite gradient in {bad[:5]}")
            optimizer.step(params, grads)
            row = {"step": step, "total": res.total, **res.terms}
            result.log.append(row)
            if writer:
                writer.writerow(row)
            if stop_when is not None and stop_when(row):
                break
    finally:
        if fh:
            fh.close()
    result.seconds = time.perf_counter() - start
    return result


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
