from .config import ModelConfig
from .language import encode_language
from .losses import TERMS, LossResult, TargetBatch, loss
from .model import backward, forward, init_params, tokenize_image
from .optim import AdamW, OptimizerConfig
from .train import TrainingSet, TrainResult, train

__all__ = [
    "ModelConfig",
    "encode_language",
    "TERMS",
    "LossResult",
    "TargetBatch",
    "loss",
    "backward",
    "forward",
    "init_params",
    "tokenize_image",
    "AdamW",
    "OptimizerConfig",
    "TrainingSet",
    "TrainResult",
    "train",
]
