from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .model import (
    ModelArch,
    ShapeMismatchError,
    backward,
    cross_entropy,
    forward,
    init_params,
    loss_and_grads,
    loss_ce,
    predict,
)
from .train import TrainConfig, TrainedModel, TrainingDivergedError, evaluate, train

__all__ = [
    "CheckpointError",
    "ModelArch",
    "ShapeMismatchError",
    "TrainConfig",
    "TrainedModel",
    "TrainingDivergedError",
    "backward",
    "cross_entropy",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "loss_ce",
    "predict",
    "save_checkpoint",
    "train",
]
