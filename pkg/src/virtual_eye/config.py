"""Flat ``key = value`` run configuration.

Grammar, one entry per line::

    # comment
    key = value        # trailing comments are allowed too

Keys are dotted names from :data:`DEFAULTS`; anything else is rejected.
Values take the type of the default (int, float, bool, str, or a
comma-separated float triple for ``view.look_at``).  ``none`` clears an
optional value.  Later lines and command-line ``--set key=value``
overrides win over earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import UsageError
from .policy.config import ModelConfig
from .policy.optim import OptimizerConfig
from .seeds import derive_seed

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "task": "reach",
    "data.n_demos": 16,
    "data.distractors": 0,
    "llm.endpoint": "https://api.openai.com/v1/chat/completions",
    "llm.model": "gpt-4o",
    "llm.api_key_env": "OPENAI_API_KEY",
    "view.distance": None,  # None: 1.2 x workspace diagonal
    "view.half_extent": 0.5,
    "view.resolution": 224,
    "view.max_retries": 2,
    "view.look_at": (0.0, 0.0, 0.0),
    "codec.sigma": 1.5,
    "keypoints.vel_eps": 1e-3,
    "keypoints.min_gap": 2,
    "model.layers": 8,
    "model.embed_dim": 64,
    "model.heads": 4,
    "model.hidden_dim": 128,
    "optim.lr": 1e-3,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps": 1e-8,
    "optim.weight_decay": 0.0,
    "optim.warmup": 0,
    "optim.clip_norm": 1.0,
    "optim.cosine": False,
    "train.steps": 1000,
    "train.batch_size": 16,
    "train.fine": True,
    "train.fine_steps": 1000,
    "train.zoom_jitter": 0.02,
    "c2f.zoom_factor": 4.0,
    "c2f.force_refine": None,  # None: use the indicator
    "eval.success_tol": 0.025,
}

_TYPES = {
    "view.distance": float,
    "c2f.force_refine": bool,
    "optim.clip_norm": float,
}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    if text.lower() == "none":
        if default is None or key in _TYPES:
            return None
        raise UsageError(f"{key} cannot be none")
    kind = _TYPES.get(key, type(default))
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is tuple:
            vals = tuple(float(x) for x in text.split(","))
            if len(vals) != 3:
                raise ValueError("expected three comma-separated numbers")
            return vals
        return kind(text)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {text!r} ({exc})") from exc


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        if key not in self.values:
            raise UsageError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, text: str) -> None:
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}; known keys: {', '.join(sorted(DEFAULTS))}")
        self.values[key] = _coerce(key, text)

    def apply(self, overrides: list[str]) -> RunConfig:
        for item in overrides or []:
            if "=" not in item:
                raise UsageError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            self.set(k.strip(), v)
        return self

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> RunConfig:
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{source}:{n}: expected 'key = value', got {raw!r}")
            k, v = line.split("=", 1)
            try:
                cfg.set(k.strip(), v)
            except UsageError as exc:
                raise UsageError(f"{source}:{n}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {p} not found")
        return cls.parse(p.read_text(), str(p))

    def dump(self) -> str:
        lines = []
        for k in DEFAULTS:
            v = self.values[k]
            if v is None:
                v = "none"
            elif isinstance(v, tuple):
                v = ",".join(f"{x:g}" for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def seed_for(self, *labels) -> int:
        return derive_seed(self["seed"], *labels)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            layers=self["model.layers"],
            embed_dim=self["model.embed_dim"],
            heads=self["model.heads"],
            hidden_dim=self["model.hidden_dim"],
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self["optim.lr"],
            beta1=self["optim.beta1"],
            beta2=self["optim.beta2"],
            eps=self["optim.eps"],
            weight_decay=self["optim.weight_decay"],
            warmup=self["optim.warmup"],
            clip_norm=self["optim.clip_norm"],
            cosine=self["optim.cosine"],
        )
