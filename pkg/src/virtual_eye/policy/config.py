from __future__ import annotations

from dataclasses import asdict, dataclass

from ..codec import N_DEPTH_BINS, N_ROT_BINS
from ..errors import UsageError


@dataclass(frozen=True)
class ModelConfig:
    """Token layout and widths of the policy transformer.

    Token counts and depth are fixed by the architecture; widths are toy-sized
    so training fits on one CPU core.
    """

    image_size: int = 224
    patch: int = 14
    n_image_tokens: int = 256
    n_lang_tokens: int = 77
    n_depth_tokens: int = N_DEPTH_BINS
    layers: int = 8
    embed_dim: int = 64
    heads: int = 4
    hidden_dim: int = 128
    rot_bins_per_axis: int = N_ROT_BINS
    channels: int = 4  # rgb + depth

    def __post_init__(self):
        if self.image_size % self.patch:
            raise UsageError(f"image_size {self.image_size} is not a multiple of patch {self.patch}")
        if (self.image_size // self.patch) ** 2 != self.n_image_tokens:
            raise UsageError(
                f"(image_size/patch)^2 = {(self.image_size // self.patch) ** 2} "
                f"!= n_image_tokens = {self.n_image_tokens}"
            )
        if self.embed_dim % self.heads:
            raise UsageError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        for name in ("layers", "embed_dim", "heads", "hidden_dim"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_tokens(self) -> int:
        return self.n_image_tokens + self.n_lang_tokens + self.n_depth_tokens

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def patch_features(self) -> int:
        return self.channels * self.patch * self.patch

    def to_dict(self) -> dict:
        return asdict(self)
