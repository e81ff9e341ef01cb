"""Class-discriminative heatmaps over the last conv block, scored against masks.

The heatmap weights each feature map by the spatial mean of the target
logit's gradient with respect to it, rectifies the weighted sum, upsamples
bilinearly to the input size, and min-max normalises. Focus is scored by
binarizing the heatmap at 0.5 and computing Dice/IoU against the window's
human mask; a soft Dice over the continuous heatmap is reported alongside to
bound the binarization choice.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data.types import ActionClass
from .encoder import EncodedInput, InputForm
from .errors import ClassError, CorruptedMaskError, DataError, ShapeError
from .masks import HumanMask
from .metrics import NUM_CLASSES, overlap


@dataclass
class FocusHeatmap:
    heat: np.ndarray  # HxW float32 in [0, 1]
    target: ActionClass

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.heat >= threshold


def _minmax(heat: np.ndarray) -> np.ndarray:
    lo, hi = float(heat.min()), float(heat.max())
    if hi - lo > 1e-12:
        return ((heat - lo) / (hi - lo)).astype(np.float32)
    if hi > 0:
        return np.ones_like(heat, dtype=np.float32)
    return np.zeros_like(heat, dtype=np.float32)


def grad_cam(model, image: np.ndarray, target_class: int) -> FocusHeatmap:
    """Heatmap of the input regions driving one class logit.

    The model must expose ``forward_features`` and ``head_from_maps``; the
    gradient of the class logit is taken with respect to the feature maps
    themselves, so the backbone below them never needs gradients.
    """
    if not 0 <= int(target_class) < NUM_CLASSES:
        raise ClassError(f"target class {target_class} outside 0..{NUM_CLASSES - 1}")
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
    with torch.no_grad():
        maps = model.forward_features(x)
    maps = maps.detach().requires_grad_(True)
    with torch.enable_grad():
        logits = model.head_from_maps(maps)
        if logits.requires_grad:
            (grads,) = torch.autograd.grad(logits[0, int(target_class)], maps, allow_unused=True)
        else:
            grads = None
    if grads is None:  # logit does not depend on the maps
        grads = torch.zeros_like(maps)
    alpha = grads.mean(dim=(2, 3))  # (1, C)
    heat = F.relu((alpha[:, :, None, None] * maps).sum(dim=1, keepdim=True))
    heat = F.interpolate(heat, size=image.shape[:2], mode="bilinear", align_corners=False)
    if was_training and hasattr(model, "train"):
        model.train()
    return FocusHeatmap(heat=_minmax(heat[0, 0].detach().numpy()), target=ActionClass(int(target_class)))


@dataclass(frozen=True)
class FocusScore:
    dice: float
    iou: float
    soft_dice: float


def focus_score(heatmap: FocusHeatmap, mask: HumanMask, threshold: float = 0.5) -> FocusScore:
    """Overlap between the binarized heatmap and the window's human mask."""
    if mask.corrupted:
        raise CorruptedMaskError(f"mask for window {mask.source_window} is corrupted")
    m = mask.mask
    if heatmap.heat.shape != m.shape:
        raise ShapeError(f"heatmap {heatmap.heat.shape} vs mask {m.shape}")
    iou, dice = overlap(heatmap.binary(threshold), m)
    denom = float(heatmap.heat.sum() + m.sum())
    soft = 2.0 * float((heatmap.heat * m).sum()) / denom if denom else 1.0
    return FocusScore(dice=dice, iou=iou, soft_dice=soft)


@dataclass
class FocusCell:
    """Aggregate for one (input form, cropped) combination."""

    form: InputForm
    cropped: bool
    dice: list[float] = field(default_factory=list)
    iou: list[float] = field(default_factory=list)
    soft_dice: list[float] = field(default_factory=list)

    def row(self) -> dict:
        def stats(values):
            arr = np.asarray(values)
            return float(arr.mean()), float(arr.std())  # population std

        dice_m, dice_s = stats(self.dice)
        iou_m, iou_s = stats(self.iou)
        soft_m, soft_s = stats(self.soft_dice)
        return {
            "form": self.form.value,
            "cropped": self.cropped,
            "count": len(self.dice),
            "dice_mean": dice_m,
            "dice_std": dice_s,
            "iou_mean": iou_m,
            "iou_std": iou_s,
            "soft_dice_mean": soft_m,
            "soft_dice_std": soft_s,
        }


@dataclass
class FocusReport:
    rows: list[dict]
    skipped_corrupted: int

    def to_json(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps({"rows": self.rows, "skipped_corrupted": self.skipped_corrupted}, indent=2)
        )

    def to_csv(self, path: Path) -> None:
        if not self.rows:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.rows[0].keys()))
            writer.writeheader()
            writer.writerows(self.rows)


def focus_report(
    model, samples: list[tuple[EncodedInput, HumanMask]], threshold: float = 0.5
) -> FocusReport:
    """Mean +/- std of Dice and IoU per (form, crop) cell over paired samples.

    Heatmaps target the model's predicted class for each input. Corrupted
    masks are skipped and counted.
    """
    if not samples:
        raise DataError("focus report needs at least one (input, mask) pair")
    cells: dict[tuple[InputForm, bool], FocusCell] = {}
    skipped = 0
    for encoded, mask in samples:
        if mask.corrupted:
            skipped += 1
            continue
        predicted = model.classify(encoded.image).action
        heat = grad_cam(model, encoded.image, predicted)
        score = focus_score(heat, mask, threshold)
        cell = cells.setdefault(
            (encoded.form, encoded.cropped), FocusCell(form=encoded.form, cropped=encoded.cropped)
        )
        cell.dice.append(score.dice)
        cell.iou.append(score.iou)
        cell.soft_dice.append(score.soft_dice)
    if not cells:
        raise DataError("all sample masks were corrupted")
    rows = [cells[key].row() for key in sorted(cells, key=lambda k: (k[0].value, k[1]))]
    return FocusReport(rows=rows, skipped_corrupted=skipped)


def uniform_heatmap_baseline(mask_fraction: float) -> float:
    """Dice a constant all-ones heatmap would score against masks of this fraction."""
    return 2 * mask_fraction / (1 + mask_fraction) if mask_fraction >= 0 else math.nan
