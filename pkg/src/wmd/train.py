"""Training loops, the plateau learning-rate schedule, and offline evaluation.

Classification uses mini-batch gradient descent with Nesterov momentum and
categorical cross-entropy; the learning rate halves (down to a floor) when
the training loss stops improving for a patience window, and the returned
model carries the weights of the epoch with the best validation macro F1.
Segmentation uses Adam with binary cross-entropy and keeps the weights with
the lowest validation loss.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .encoder import AugmentConfig, apply_augment, draw_augment_params
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .metrics import confusion, offline_metrics, overlap


@dataclass(frozen=True)
class TrainConfig:
    task: str  # classification | segmentation
    lr: float
    batch_size: int
    max_epochs: int
    seed: int = 0
    momentum: float = 0.9
    nesterov: bool = True
    plateau_patience: int | None = 4
    lr_decay: float = 0.5
    lr_floor: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    augment: AugmentConfig | None = None
    early_stop_value: float | None = None  # stop once val metric reaches this

    def __post_init__(self):
        if self.task not in ("classification", "segmentation"):
            raise ConfigError(f"unknown task {self.task!r}")
        if min(self.lr, self.batch_size, self.max_epochs) <= 0:
            raise ConfigError("lr, batch_size and max_epochs must be positive")
        if self.lr_floor <= 0 or not 0 < self.lr_decay < 1:
            raise ConfigError("lr_floor must be positive and lr_decay in (0, 1)")

    @classmethod
    def classification(cls, **overrides) -> "TrainConfig":
        base = dict(task="classification", lr=1e-3, batch_size=64, max_epochs=100)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def segmentation(cls, **overrides) -> "TrainConfig":
        base = dict(
            task="segmentation", lr=1e-4, batch_size=16, max_epochs=30, plateau_patience=None
        )
        base.update(overrides)
        return cls(**base)


class PlateauSchedule:
    """Halve the lr when the tracked loss fails to improve for `patience` epochs.

    Improvement means a new minimum by more than 1e-6; the counter resets on
    improvement and after each decay. The lr never drops below the floor.
    """

    def __init__(self, lr: float, patience: int, decay: float = 0.5, floor: float = 1e-4):
        self.lr = lr
        self.patience = patience
        self.decay = decay
        self.floor = floor
        self.best = math.inf
        self.stall = 0

    def update(self, loss: float) -> float:
        """Fold in one epoch's loss; returns the lr for the next epoch."""
        if loss < self.best - 1e-6:
            self.best = loss
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.patience:
                self.lr = max(self.lr * self.decay, self.floor)
                self.stall = 0
        return self.lr


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_value: float = math.nan
    selection: str = ""
    last_state: dict | None = None  # final-epoch weights, before best restore

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_metric", "lr"])
            for e in range(self.epochs_run):
                writer.writerow(
                    [
                        e,
                        f"{self.train_loss[e]:.8f}",
                        f"{self.val_loss[e]:.8f}",
                        f"{self.val_metric[e]:.8f}",
                        f"{self.lr[e]:.8g}",
                    ]
                )


def _to_torch_images(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)


def _check_inputs(model: nn.Module, images: np.ndarray) -> None:
    size = getattr(getattr(model, "config", None), "input_size", None)
    if size is not None and images.shape[1:3] != (size, size):
        raise ShapeError(f"model expects {size}x{size} inputs, got {images.shape[1:3]}")


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator, shuffle: bool = True):
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _augment_batch(
    images: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    return np.stack([apply_augment(img, draw_augment_params(rng, cfg)) for img in images])


def train_classifier(
    model: nn.Module,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
) -> TrainLog:
    """Train in place; on return the model holds the best-validation weights."""
    train_images, train_labels = train_data
    val_images, val_labels = val_data
    if len(train_images) == 0 or len(val_images) == 0:
        raise DataError("classification training needs non-empty train and val splits")
    _check_inputs(model, train_images)
    _check_inputs(model, val_images)

    torch.manual_seed(config.seed)
    loss_fn = nn.CrossEntropyLoss()
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.SGD(
        params, lr=config.lr, momentum=config.momentum, nesterov=config.nesterov
    )
    schedule = (
        PlateauSchedule(config.lr, config.plateau_patience, config.lr_decay, config.lr_floor)
        if config.plateau_patience
        else None
    )
    train_labels_t = torch.from_numpy(np.ascontiguousarray(train_labels, dtype=np.int64))

    log = TrainLog(selection="max_val_f1")
    best_state = None
    lr = config.lr
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        model.train()
        total, seen = 0.0, 0
        for idx in _epoch_batches(len(train_images), config.batch_size, rng):
            batch = train_images[idx]
            if config.augment is not None:
                batch = _augment_batch(batch, config.augment, rng)
            x = _to_torch_images(batch)
            y = train_labels_t[idx]
            optimizer.zero_grad()
            loss = loss_fn(model(x), y)
            if not torch.isfinite(loss):
                raise DivergenceError(epoch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        train_loss = total / seen

        val_loss, val_f1 = _validate_classifier(model, val_images, val_labels, loss_fn, config.batch_size)
        log.train_loss.append(train_loss)
        log.val_loss.append(val_loss)
        log.val_metric.append(val_f1)
        log.lr.append(lr)

        # ties break toward the later epoch: with equal validation F1 the
        # longer-trained weights have sharper margins
        if log.best_epoch < 0 or val_f1 >= log.best_value:
            log.best_epoch = epoch
            log.best_value = val_f1
            best_state = copy.deepcopy(model.state_dict())

        if schedule is not None:
            lr = schedule.update(train_loss)
            for group in optimizer.param_groups:
                group["lr"] = lr
        if config.early_stop_value is not None and val_f1 >= config.early_stop_value:
            break

    log.last_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return log


@torch.no_grad()
def _validate_classifier(model, images, labels, loss_fn, batch_size) -> tuple[float, float]:
    model.eval()
    labels_t = torch.from_numpy(np.ascontiguousarray(labels, dtype=np.int64))
    losses, preds = [], []
    for start in range(0, len(images), batch_size):
        x = _to_torch_images(images[start : start + batch_size])
        logits = model(x)
        losses.append(float(loss_fn(logits, labels_t[start : start + batch_size])) * len(x))
        preds.append(logits.argmax(dim=1).numpy())
    val_loss = sum(losses) / len(images)
    report = offline_metrics(confusion(np.concatenate(preds), labels))
    return val_loss, report.f1


def train_segmenter(
    model: nn.Module,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
) -> TrainLog:
    """Binary cross-entropy segmentation training; keeps the min-val-loss weights."""
    train_images, train_masks = train_data
    val_images, val_masks = val_data
    if len(train_images) == 0 or len(val_images) == 0:
        raise DataError("segmentation training needs non-empty train and val splits")
    _check_inputs(model, train_images)

    torch.manual_seed(config.seed)
    loss_fn = nn.BCELoss()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    masks_t = torch.from_numpy(np.ascontiguousarray(train_masks, dtype=np.float32))[:, None]
    schedule = (
        PlateauSchedule(config.lr, config.plateau_patience, config.lr_decay, config.lr_floor)
        if config.plateau_patience
        else None
    )

    log = TrainLog(selection="min_val_loss")
    best_state = None
    lr = config.lr
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        model.train()
        total, seen = 0.0, 0
        for idx in _epoch_batches(len(train_images), config.batch_size, rng):
            batch = train_images[idx]
            x = _to_torch_images(batch)
            optimizer.zero_grad()
            loss = loss_fn(model(x), masks_t[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(epoch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        train_loss = total / seen

        val_loss, val_dice = _validate_segmenter(model, val_images, val_masks, loss_fn, config.batch_size)
        log.train_loss.append(train_loss)
        log.val_loss.append(val_loss)
        log.val_metric.append(val_dice)
        log.lr.append(lr)

        if log.best_epoch < 0 or val_loss < log.best_value:
            log.best_epoch = epoch
            log.best_value = val_loss
            best_state = copy.deepcopy(model.state_dict())

        if schedule is not None:
            lr = schedule.update(train_loss)
            for group in optimizer.param_groups:
                group["lr"] = lr
        if config.early_stop_value is not None and val_dice >= config.early_stop_value:
            break

    log.last_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return log


@torch.no_grad()
def _validate_segmenter(model, images, masks, loss_fn, batch_size) -> tuple[float, float]:
    model.eval()
    masks_t = torch.from_numpy(np.ascontiguousarray(masks, dtype=np.float32))[:, None]
    losses, dices = [], []
    for start in range(0, len(images), batch_size):
        x = _to_torch_images(images[start : start + batch_size])
        out = model(x)
        losses.append(float(loss_fn(out, masks_t[start : start + batch_size])) * len(x))
        pred = out[:, 0].numpy() >= 0.5
        target = masks[start : start + batch_size] >= 0.5
        dices.extend(overlap(p, t)[1] for p, t in zip(pred, target))
    return sum(losses) / len(images), float(np.mean(dices))


def model_predictor(model: nn.Module, batch_size: int = 64) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a classifier as a plain images -> class-id function."""

    @torch.no_grad()
    def predict(images: np.ndarray) -> np.ndarray:
        _check_inputs(model, images)
        model.eval()
        out = []
        for start in range(0, len(images), batch_size):
            logits = model(_to_torch_images(images[start : start + batch_size]))
            out.append(logits.argmax(dim=1).numpy())
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    return predict


def evaluate(
    predictor: Callable[[np.ndarray], np.ndarray] | nn.Module,
    images: np.ndarray,
    labels: np.ndarray,
) -> dict:
    """Offline metric report for a predictor over a labeled split."""
    if len(images) == 0:
        raise DataError("cannot evaluate an empty split")
    if isinstance(predictor, nn.Module):
        predictor = model_predictor(predictor)
    preds = np.asarray(predictor(images))
    counts = confusion(preds, labels)
    report = offline_metrics(counts)
    return {
        "offline": report.as_dict(),
        "confusion": {
            "tp": list(counts.tp),
            "tn": list(counts.tn),
            "fp": list(counts.fp),
            "fn": list(counts.fn),
        },
        "samples": int(len(images)),
    }
