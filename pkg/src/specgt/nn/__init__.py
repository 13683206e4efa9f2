"""From-scratch CNN: layers, model, optimizer, training, classification."""

from specgt.nn.model import CNNClassifier, ModelConfig
from specgt.nn.optim import AdamState, adam_step
from specgt.nn.training import TrainConfig, fit, train_epoch, write_history
from specgt.nn.checkpoint import load_checkpoint, save_checkpoint
from specgt.nn.classify import classify_image, evaluate

__all__ = [
    "AdamState",
    "CNNClassifier",
    "ModelConfig",
    "TrainConfig",
    "adam_step",
    "classify_image",
    "evaluate",
    "fit",
    "load_checkpoint",
    "save_checkpoint",
    "train_epoch",
    "write_history",
]
