"""Binary human masks from depth frames, corruption handling, window compositing.

The segmentation pipeline is heuristic: a depth band keeps the user, the
floor plane is fitted over the bottom rows and removed, the largest connected
component survives, and a morphological closing smooths the result. The
thresholds are configurable; the defaults suit depth in millimetres with the
user standing 0.3-2.5 m from the camera.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .encoder import GeometryChain, InputForm
from .errors import CorruptedWindowError, ShapeError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_CLOSE_5X5 = np.ones((5, 5), dtype=bool)


def _close_5x5(mask: np.ndarray) -> np.ndarray:
    # pad by the structuring-element radius so the closing never erodes the
    # image border (scipy treats outside pixels as background)
    padded = np.pad(mask, 2, mode="constant", constant_values=False)
    return ndimage.binary_closing(padded, structure=_CLOSE_5X5)[2:-2, 2:-2]


@dataclass(frozen=True)
class MaskConfig:
    depth_min_mm: float = 300.0
    depth_max_mm: float = 2500.0
    floor_tolerance_mm: float = 50.0
    # the floor fit only removes pixels when the plane visibly ramps;
    # a near-flat fit means no floor is in view
    min_floor_slope_mm_per_row: float = 0.5
    corruption_low: float = 0.02
    corruption_high: float = 0.40


@dataclass
class HumanMask:
    """Window-level binary mask on the same grid as its paired input."""

    mask: np.ndarray  # HxW bool
    corrupted: bool
    source_window: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)

    @property
    def fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def segment_person_depth(depth: np.ndarray, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """Isolate the user from one depth frame (mm, 0 = invalid pixel).

    Steps: keep the configured depth band, fit the floor as depth ~ a*row + b
    over the bottom quarter of rows and remove pixels near the fit, keep the
    largest 8-connected component, then close with a 5x5 square. Returns a
    bool mask; an all-invalid frame yields an empty mask.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth must be HxW, got {depth.shape}")
    h = depth.shape[0]
    valid = depth > 0
    keep = valid & (depth >= cfg.depth_min_mm) & (depth <= cfg.depth_max_mm)

    fit_rows = slice(h - h // 4, h)
    rows_grid = np.broadcast_to(np.arange(h)[:, None], depth.shape)
    fit_mask = np.zeros_like(valid)
    fit_mask[fit_rows] = valid[fit_rows]
    if fit_mask.sum() >= 2:
        r = rows_grid[fit_mask].astype(np.float64)
        d = depth[fit_mask]
        a, b = np.polyfit(r, d, 1)
        if abs(a) >= cfg.min_floor_slope_mm_per_row:
            floor = np.abs(depth - (a * rows_grid + b)) <= cfg.floor_tolerance_mm
            keep &= ~floor

    if not keep.any():
        return np.zeros_like(keep)
    labels, count = ndimage.label(keep, structure=_EIGHT_CONNECTED)
    if count > 1:
        sizes = ndimage.sum_labels(keep, labels, index=np.arange(1, count + 1))
        keep = labels == (1 + int(np.argmax(sizes)))
    return _close_5x5(keep)


def detect_corruption(mask: np.ndarray, cfg: MaskConfig = MaskConfig()) -> bool:
    """A mask is corrupted when its foreground fraction leaves the sane band."""
    frac = float(np.asarray(mask, dtype=bool).mean()) if mask.size else 0.0
    return not (cfg.corruption_low <= frac <= cfg.corruption_high)


def repair_mask(mask: np.ndarray) -> np.ndarray:
    """Fill interior holes and close once; the foreground never shrinks."""
    mask = np.asarray(mask, dtype=bool)
    out = ndimage.binary_fill_holes(mask)
    out = _close_5x5(out)
    # closing and hole filling are extensive, but guard the contract anyway
    return out | mask


def composite_window_mask(
    per_frame_masks: list[np.ndarray],
    form: InputForm,
    geometry: GeometryChain,
    source_window: int = 0,
    corrupted: list[bool] | None = None,
) -> HumanMask:
    """Combine the window's per-frame masks to match its encoded input.

    DIF inputs react to the first and last frames, so their mask union covers
    every pixel that can appear moving; ADD inputs blend all four frames, so
    all four masks are united. The result goes through the same crop and
    resize/pad as the paired input and is re-binarized at 0.5.
    """
    if len(per_frame_masks) != 4:
        raise ShapeError(f"expected 4 per-frame masks, got {len(per_frame_masks)}")
    if corrupted is None:
        corrupted = [detect_corruption(m) for m in per_frame_masks]
    if any(corrupted):
        bad = [i for i, c in enumerate(corrupted) if c]
        raise CorruptedWindowError(f"window {source_window} has corrupted member masks {bad}")
    shape = per_frame_masks[0].shape
    if any(m.shape != shape for m in per_frame_masks):
        raise ShapeError("per-frame masks disagree on shape")
    if form == InputForm.DIF:
        union = per_frame_masks[0].astype(bool) | per_frame_masks[-1].astype(bool)
    else:
        union = np.zeros(shape, dtype=bool)
        for m in per_frame_masks:
            union |= m.astype(bool)
    return HumanMask(
        mask=geometry.apply_mask(union), corrupted=False, source_window=source_window
    )


def write_mask_png(path: Path, mask: np.ndarray) -> None:
    """1-bit PNG, filename-paired with its encoded window."""
    img = (np.asarray(mask, dtype=bool).astype(np.uint8)) * 255
    if not cv2.imwrite(str(path), img, [cv2.IMWRITE_PNG_BILEVEL, 1]):
        raise IOError(f"failed to write mask {path}")


def read_mask_png(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise IOError(f"failed to read mask {path}")
    return img > 127
