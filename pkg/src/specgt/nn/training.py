"""Training loop: balanced epochs, Adam, per-epoch history."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from specgt import seeds
from specgt.dataset import PatchDataset, balanced_epoch
from specgt.errors import DataValidationError
from specgt.nn.model import CNNClassifier
from specgt.nn.optim import AdamState, adam_step


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 30
    per_label_samples: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise DataValidationError("batch_size must be >= 2 (batch norm)")
        if self.learning_rate <= 0:
            raise DataValidationError("learning_rate must be > 0")
        if self.epochs < 1 or self.per_label_samples < 1:
            raise DataValidationError("epochs and per_label_samples must be >= 1")
        if self.seed < 0:
            raise DataValidationError("seed must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise DataValidationError("invalid Adam constants")


def train_epoch(
    model: CNNClassifier,
    epoch_ds: PatchDataset,
    cfg: TrainConfig,
    state: AdamState,
    epoch_index: int,
):
    """One pass over an already-shuffled patch sequence.

    Batches are consumed in order; dropout masks come from the
    per-epoch stream (seed, NN_DROPOUT, epoch). A trailing batch of a
    single sample is skipped because batch norm cannot train on it.
    Returns (mean loss, training accuracy) weighted by batch size.
    """
    if len(epoch_ds) < 2:
        raise DataValidationError("an epoch needs at least 2 samples")
    rng = seeds.stream(cfg.seed, seeds.NN_DROPOUT, epoch_index)
    total = len(epoch_ds)
    loss_sum = 0.0
    hit_sum = 0.0
    seen = 0
    for start in range(0, total, cfg.batch_size):
        stop = min(start + cfg.batch_size, total)
        if stop - start < 2:
            break
        x = epoch_ds.values[start:stop].astype(model.config.dtype)
        y = epoch_ds.labels[start:stop]
        loss, acc, grads = model.loss_and_grads(x, y, "train", rng)
        adam_step(
            model.params,
            grads,
            state,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.epsilon,
        )
        n = stop - start
        loss_sum += loss * n
        hit_sum += acc * n
        seen += n
    return loss_sum / seen, hit_sum / seen


def dataset_accuracy(model: CNNClassifier, ds: PatchDataset, batch: int = 1024) -> float:
    if len(ds) == 0:
        return float("nan")
    probs = model.predict(ds.values.astype(model.config.dtype), batch=batch)
    return float((probs.argmax(axis=1) == ds.labels).mean())


def fit(
    model: CNNClassifier,
    train_ds: PatchDataset,
    cfg: TrainConfig,
    val_ds: Optional[PatchDataset] = None,
    history_path: Optional[str] = None,
) -> List[dict]:
    """Balanced-epoch training; returns one history row per epoch.

    Epoch e resamples train_ds through stream (seed, DATASET_EPOCH, e),
    so the whole run replays bit-exactly from (seed, config, dataset).
    """
    state = AdamState(model.params)
    history: List[dict] = []
    for epoch in range(cfg.epochs):
        ep = balanced_epoch(
            train_ds,
            cfg.per_label_samples,
            seeds.stream(cfg.seed, seeds.DATASET_EPOCH, epoch),
        )
        loss, acc = train_epoch(model, ep, cfg, state, epoch)
        val_acc = dataset_accuracy(model, val_ds) if val_ds is not None else float("nan")
        history.append(
            {"epoch": epoch, "loss": loss, "train_acc": acc, "val_acc": val_acc}
        )
    if history_path is not None:
        write_history(history, history_path)
    return history


def write_history(history: List[dict], path: str) -> None:
    """CSV with columns epoch, loss, train_acc, val_acc."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
        for row in history:
            writer.writerow(
                [row["epoch"], repr(row["loss"]), repr(row["train_acc"]), repr(row["val_acc"])]
            )
