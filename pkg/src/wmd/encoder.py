"""Temporal single-image encoding: sliding windows, DIF/ADD images, geometry.

A 15 Hz frame stream is cut into 4-frame windows advancing by 2 frames. Each
window collapses into one image: DIF maps the signed last-minus-first pixel
difference affinely into [0, 1] (static pixels land on 0.5), ADD stores the
window mean rescaled to [0, 1]. Optional ROI cropping and an
aspect-preserving resize with centred zero padding bring images to the model
input size; the same geometry chain is reused for ground-truth masks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np

from .data.types import ActionClass, FrameRGBD
from .errors import RoiError, ShapeError, WindowError

DEFAULT_WINDOW_LEN = 4
DEFAULT_STRIDE = 2
TENSOR_MAGIC = b"WMDTENS1"


class InputForm(str, Enum):
    DIF = "dif"
    ADD = "add"


@dataclass(frozen=True)
class Window:
    """Four consecutive frames of the 15 Hz stream."""

    frames: tuple[FrameRGBD, ...]
    start_index: int
    fps: float = 15.0

    def __post_init__(self):
        if len(self.frames) != DEFAULT_WINDOW_LEN:
            raise WindowError(f"window must hold {DEFAULT_WINDOW_LEN} frames, got {len(self.frames)}")

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps

    @property
    def end_time(self) -> float:
        return self.frames[-1].timestamp


@dataclass
class EncodedInput:
    """One encoded window image with its provenance."""

    image: np.ndarray  # HxWx3 float32 in [0, 1]
    form: InputForm
    cropped: bool
    window_ref: int
    action: ActionClass | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeError(f"encoded image must be HxWx3, got {self.image.shape}")
        lo, hi = float(self.image.min()), float(self.image.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ShapeError(f"encoded image values outside [0, 1]: [{lo}, {hi}]")


@dataclass(frozen=True)
class RoiSpec:
    """Pixel bounds [x0, x1) x [y0, y1) applied identically to every frame."""

    x0: int
    x1: int
    y0: int
    y1: int

    @classmethod
    def default_for(cls, width: int, height: int) -> "RoiSpec":
        # central 60% of the width, full rows: the user stands between the handles
        return cls(x0=round(0.2 * width), x1=round(0.8 * width), y0=0, y1=height)


def make_windows(
    frames: list[FrameRGBD],
    window_len: int = DEFAULT_WINDOW_LEN,
    stride: int = DEFAULT_STRIDE,
    fps: float = 15.0,
) -> list[Window]:
    """Sliding windows starting at 0, stride, 2*stride, ...; partial tails dropped."""
    if len(frames) < window_len:
        raise WindowError(f"need at least {window_len} frames, got {len(frames)}")
    return [
        Window(frames=tuple(frames[s : s + window_len]), start_index=s, fps=fps)
        for s in range(0, len(frames) - window_len + 1, stride)
    ]


def _check_window_shapes(window: Window) -> None:
    shape = window.frames[0].rgb.shape
    for f in window.frames[1:]:
        if f.rgb.shape != shape:
            raise ShapeError(f"window mixes frame shapes {shape} and {f.rgb.shape}")


def encode_dif(window: Window) -> EncodedInput:
    """Signed last-minus-first difference mapped affinely into [0, 1].

    A static pixel encodes as 0.5; full-range positive/negative motion reaches
    1.0/0.0, preserving motion direction.
    """
    _check_window_shapes(window)
    first = window.frames[0].rgb.astype(np.float32)
    last = window.frames[-1].rgb.astype(np.float32)
    image = (last - first + 255.0) / 510.0
    return EncodedInput(image=image, form=InputForm.DIF, cropped=False, window_ref=window.start_index)


def encode_add(window: Window) -> EncodedInput:
    """Window mean rescaled to [0, 1] (a monotone rescaling of the frame sum)."""
    _check_window_shapes(window)
    acc = np.zeros(window.frames[0].rgb.shape, dtype=np.float64)
    for f in window.frames:
        acc += f.rgb
    image = (acc / len(window.frames) / 255.0).astype(np.float32)
    return EncodedInput(image=image, form=InputForm.ADD, cropped=False, window_ref=window.start_index)


def encode_window(window: Window, form: InputForm) -> EncodedInput:
    return encode_dif(window) if form == InputForm.DIF else encode_add(window)


def crop_roi(image: np.ndarray, roi: RoiSpec) -> np.ndarray:
    """Cut the ROI sub-image; bounds are validated against the image grid."""
    h, w = image.shape[:2]
    if not (0 <= roi.x0 < roi.x1 <= w and 0 <= roi.y0 < roi.y1 <= h):
        raise RoiError(f"roi {roi} outside {w}x{h} image")
    return image[roi.y0 : roi.y1, roi.x0 : roi.x1].copy()


def resize_pad(image: np.ndarray, target: int = 224) -> np.ndarray:
    """Bilinear resize so the larger side equals target, centre-pad with zeros."""
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ShapeError("cannot resize an empty image")
    if h == target and w == target:
        return image.copy()
    if h >= w:
        new_h, new_w = target, max(1, round(w * target / h))
    else:
        new_h, new_w = max(1, round(h * target / w)), target
    resized = cv2.resize(image.astype(np.float32), (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2 and image.ndim == 3:
        resized = resized[..., None]
    top = (target - new_h) // 2
    left = (target - new_w) // 2
    shape = (target, target) + resized.shape[2:]
    out = np.zeros(shape, dtype=np.float32)
    out[top : top + new_h, left : left + new_w] = resized
    return out


@dataclass(frozen=True)
class GeometryChain:
    """Crop + resize/pad applied identically to inputs and their masks."""

    roi: RoiSpec | None
    target: int = 224

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        if self.roi is not None:
            image = crop_roi(image, self.roi)
        return resize_pad(image, self.target)

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        """Same transform on a binary mask, re-binarized at 0.5 after resize."""
        out = self.apply_image(mask.astype(np.float32))
        if out.ndim == 3:
            out = out[..., 0]
        return out >= 0.5


def encode_and_transform(
    window: Window,
    form: InputForm,
    geometry: GeometryChain,
    action: ActionClass | None = None,
) -> EncodedInput:
    """Full encoding path: DIF/ADD, optional crop, resize/pad to the target."""
    raw = encode_window(window, form)
    return EncodedInput(
        image=geometry.apply_image(raw.image),
        form=form,
        cropped=geometry.roi is not None,
        window_ref=window.start_index,
        action=action,
    )


# -- training-time augmentation -------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Magnitude bounds for the augmentation draws (all exposed in config)."""

    brightness: float = 0.2
    contrast: float = 0.2
    shift: float = 0.1
    zoom: float = 0.1
    blur_sigma_max: float = 1.5
    blur_prob: float = 0.5


@dataclass(frozen=True)
class AugmentParams:
    brightness_delta: float
    contrast_factor: float
    dx_frac: float
    dy_frac: float
    zoom_factor: float
    blur_sigma: float  # 0 disables the blur

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(0.0, 1.0, 0.0, 0.0, 1.0, 0.0)


def draw_augment_params(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    """One independent draw per transform, in a fixed order."""
    brightness = float(rng.uniform(-cfg.brightness, cfg.brightness))
    contrast = float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast))
    dx = float(rng.uniform(-cfg.shift, cfg.shift))
    dy = float(rng.uniform(-cfg.shift, cfg.shift))
    zoom = float(rng.uniform(1 - cfg.zoom, 1 + cfg.zoom))
    blur_on = float(rng.uniform(0.0, 1.0)) < cfg.blur_prob
    sigma = float(rng.uniform(0.0, cfg.blur_sigma_max)) if blur_on else 0.0
    return AugmentParams(brightness, contrast, dx, dy, zoom, sigma)


def apply_augment(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Brightness, contrast about the mean, shift, zoom, optional blur.

    No rotations and no horizontal flips: mirroring would swap the turn
    classes. Identity parameters return the input unchanged; the output is
    always clipped to [0, 1].
    """
    out = np.asarray(image, dtype=np.float32)
    h, w = out.shape[:2]
    changed = False
    if params.dx_frac != 0.0 or params.dy_frac != 0.0 or params.zoom_factor != 1.0:
        z = params.zoom_factor
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        # zoom about the centre composed with the pixel shift
        mat = np.array(
            [
                [z, 0.0, cx - z * cx + params.dx_frac * w],
                [0.0, z, cy - z * cy + params.dy_frac * h],
            ],
            dtype=np.float64,
        )
        out = cv2.warpAffine(out, mat, (w, h), flags=cv2.INTER_LINEAR, borderValue=0.0)
        if out.ndim == 2 and image.ndim == 3:
            out = out[..., None]
        changed = True
    if params.blur_sigma > 0.0:
        out = cv2.GaussianBlur(out, (0, 0), sigmaX=params.blur_sigma)
        if out.ndim == 2 and image.ndim == 3:
            out = out[..., None]
        changed = True
    if params.contrast_factor != 1.0:
        mean = out.mean()
        out = mean + params.contrast_factor * (out - mean)
        changed = True
    if params.brightness_delta != 0.0:
        out = out + params.brightness_delta
        changed = True
    return np.clip(out, 0.0, 1.0) if changed else out


def augment(
    image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()
) -> np.ndarray:
    return apply_augment(image, draw_augment_params(rng, cfg))


# -- binary tensor cache ----------------------------------------------------


def write_tensor(path: Path, array: np.ndarray) -> None:
    """8-byte magic, uint32 ndim + dims, then row-major little-endian float32."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TENSOR_MAGIC:
            raise ShapeError(f"{path} is not an encoded-tensor file (magic {magic!r})")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f4")
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ShapeError(f"{path} holds {data.size} values, header says {expected}")
    return data.reshape(shape).copy()
