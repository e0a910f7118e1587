from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import EvalReport, evaluate, format_accuracy
from .optim import Adam, AdamState, adam_step, lr_schedule
from .train import TrainConfig, TrainResult, build_model, load_model, prepare_splits, save_model, tiles_to_arrays, train

__all__ = [
    "Adam", "AdamState", "EvalReport", "TrainConfig", "TrainResult", "adam_step", "build_model",
    "evaluate", "format_accuracy", "load_checkpoint", "load_model", "lr_schedule", "prepare_splits", "save_checkpoint",
    "save_model", "tiles_to_arrays", "train",
]
