"""Parameter checkpoints: one raw ``<f4`` blob plus a JSON manifest.

``model.bin`` holds every tensor back to back in manifest order;
``model.json`` maps each name to its shape and byte offset and records the
model config so a checkpoint can be reloaded without outside context.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CorruptDatasetError, UsageError
from .config import ModelConfig
from .model import check_params

FORMAT = "virtual-eye-params/1"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_params(path, params: dict[str, np.ndarray], config: ModelConfig, extra: dict | None = None) -> Path:
    check_params(params, config)
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {}
    offset = 0
    with open(bin_path, "wb") as fh:
        for name in sorted(params):
            raw = np.ascontiguousarray(params[name], dtype="<f4").tobytes()
            tensors[name] = {"shape": list(params[name].shape), "offset": offset}
            fh.write(raw)
            offset += len(raw)
    manifest = {"format": FORMAT, "config": config.to_dict(), "tensors": tensors, "nbytes": offset}
    if extra:
        manifest["extra"] = extra
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return bin_path


def load_params(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    bin_path, json_path = _paths(path)
    if not bin_path.exists() or not json_path.exists():
        raise UsageError(f"checkpoint {bin_path} / {json_path} not found")
    manifest = json.loads(json_path.read_text())
    if manifest.get("format") != FORMAT:
        raise CorruptDatasetError(f"{json_path}: unknown checkpoint format {manifest.get('format')!r}")
    blob = bin_path.read_bytes()
    if len(blob) != manifest["nbytes"]:
        raise CorruptDatasetError(f"{bin_path}: expected {manifest['nbytes']} bytes, found {len(blob)}")
    config = ModelConfig(**manifest["config"])
    params = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=entry["offset"]).reshape(shape).astype(np.float32)
    check_params(params, config)
    return params, config, manifest.get("extra", {})
