"""Training loop, evaluation, confusion matrix, and head replacement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from vitkit import tensor as T
from vitkit.augment import AugmentPolicy
from vitkit.data import DatasetManifest, load_batch
from vitkit.tensor import Parameter, Tensor, backward, clip_global_norm, sgd_step
from vitkit.util import rng_for
from vitkit.vit import ViTModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr < 0:
            raise ValueError(f"invalid hyperparameters: {self}")


@dataclass
class EpochMetrics:
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    history: list[EpochMetrics]
    best_epoch: int  # zero-based index into history
    best_val_acc: float
    best_state: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64; rows = true class, cols = predicted
    labels: list[str]

    def normalized(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros_like(self.counts, dtype=np.float64)
        nonzero = totals[:, 0] > 0
        out[nonzero] = self.counts[nonzero] / totals[nonzero]
        return out

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / float(self.counts.sum())


def _batches(n: int, batch_size: int, order=None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model: ViTModel, data: DatasetManifest, batch_size: int = 64,
             augment: Optional[AugmentPolicy] = None, draw_start: int = 0):
    """(accuracy, mean loss) over the manifest; mutates no parameters."""
    if len(data) == 0:
        raise ValueError("evaluate called on empty data")
    correct = 0
    loss_sum = 0.0
    counter = draw_start
    for idx in _batches(len(data), batch_size):
        x, labels = load_batch(data, idx, model.config.image_resolution,
                               augment=augment, draw_start=counter)
        counter += len(idx)
        logits = model.forward(x)
        loss = T.cross_entropy(logits, labels)
        loss_sum += loss.item() * len(idx)
        correct += int((logits.data.argmax(axis=1) == np.asarray(labels)).sum())
    return correct / len(data), loss_sum / len(data)


def confusion_matrix(model: ViTModel, data: DatasetManifest,
                     batch_size: int = 64) -> ConfusionMatrix:
    if len(data) == 0:
        raise ValueError("confusion_matrix called on empty data")
    k = model.config.num_classes
    counts = np.zeros((k, k), dtype=np.int64)
    for idx in _batches(len(data), batch_size):
        x, labels = load_batch(data, idx, model.config.image_resolution)
        pred = model.forward(x).data.argmax(axis=1)
        for true, p in zip(labels, pred):
            counts[true, p] += 1
    return ConfusionMatrix(counts=counts, labels=list(data.labels))


def train(model: ViTModel, train_data: DatasetManifest, val_data: DatasetManifest,
          hp: HyperParams, augment: Optional[AugmentPolicy] = None,
          augment_val: Optional[AugmentPolicy] = None,
          clip_grad: Optional[float] = None) -> TrainReport:
    """SGD fine-tuning with per-epoch metrics and best-val-accuracy weights.

    Epoch shuffles are keyed by (hp.seed, epoch); augmentation draw indices
    follow a global sample counter so runs are bit-reproducible.
    """
    if model.config.num_classes != len(train_data.labels):
        raise ValueError(
            f"model has {model.config.num_classes} classes but dataset has "
            f"{len(train_data.labels)}"
        )
    params = model.parameters()
    history: list[EpochMetrics] = []
    best_epoch = -1
    best_val_acc = -1.0
    best_state: dict[str, np.ndarray] = {}
    counter = 0
    for epoch in range(hp.epochs):
        order = rng_for(hp.seed, 0x455043, epoch).permutation(len(train_data))
        loss_sum = 0.0
        correct = 0
        for idx in _batches(len(train_data), hp.batch_size, order):
            x, labels = load_batch(train_data, idx, model.config.image_resolution,
                                   augment=augment, draw_start=counter)
            counter += len(idx)
            logits = model.forward(x)
            loss = T.cross_entropy(logits, labels)
            loss_sum += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == np.asarray(labels)).sum())
            backward(loss)
            if clip_grad is not None:
                clip_global_norm(params, clip_grad)
            if hp.lr > 0:
                sgd_step(params, hp.lr)
            else:
                for p in params:
                    p.tensor.grad = None
        val_acc, val_loss = evaluate(model, val_data, hp.batch_size,
                                     augment=augment_val)
        history.append(EpochMetrics(train_loss=loss_sum / len(train_data),
                                    train_acc=correct / len(train_data),
                                    val_loss=val_loss, val_acc=val_acc))
        if val_acc > best_val_acc:  # strict: ties keep the earliest epoch
            best_val_acc = val_acc
            best_epoch = epoch
            best_state = model.state_dict()
        logger.info("epoch %d: train_loss=%.6f train_acc=%.6f val_loss=%.6f val_acc=%.6f",
                    epoch + 1, *vars(history[-1]).values())
    return TrainReport(history=history, best_epoch=best_epoch,
                       best_val_acc=best_val_acc, best_state=best_state)


def fine_tune_head(model: ViTModel, num_classes: int, seed: int = 0) -> ViTModel:
    """Replace the classifier head with a fresh one; all other weights retained."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    d = model.config.hidden_size
    rng = rng_for(seed, 0x484541)
    model.config = replace(model.config, num_classes=num_classes)
    model.params["head.w"] = Parameter(
        "head.w", Tensor(rng.normal(0.0, 0.02, size=(d, num_classes))))
    model.params["head.b"] = Parameter("head.b", Tensor(np.zeros(num_classes)))
    return model


def write_metrics_csv(report: TrainReport, path) -> None:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for i, m in enumerate(report.history, start=1):
        lines.append(f"{i},{m.train_loss:.6f},{m.train_acc:.6f},"
                     f"{m.val_loss:.6f},{m.val_acc:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    """Row-normalized matrix, 6 decimal places, label names on both axes."""
    norm = cm.normalized()
    lines = ["," + ",".join(cm.labels)]
    for label, row in zip(cm.labels, norm):
        lines.append(label + "," + ",".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
