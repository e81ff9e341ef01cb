"""Model graphs: VGG-style and residual classifiers, channel attention,
encoder-decoder segmenter, and the segmentation-pretrained classifier.

Every classifier exposes ``forward_features`` (the last convolutional block's
maps, the grad-CAM target) and ``head_from_maps`` (attention if enabled, then
global average pooling and the 4-way linear layer). ``scale`` multiplies all
channel widths so the same graphs run at desk scale on CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data.types import ActionClass
from .errors import ConfigError, ShapeError, TransferError

CLASSIFIER_BACKBONES = ("vgg_style", "residual")
ALL_BACKBONES = CLASSIFIER_BACKBONES + ("encoder_classifier", "segmenter")

_VGG_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")
_RESIDUAL_STAGES = ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2))
_UNET_WIDTHS = (64, 128, 256, 512, 1024)
WEIGHTED_TYPES = (nn.Conv2d, nn.ConvTranspose2d, nn.BatchNorm2d, nn.Linear)


@dataclass(frozen=True)
class ModelConfig:
    backbone: str
    attention: bool = False
    scale: float = 1.0
    input_size: int = 224
    num_classes: int = 4
    pretrained: str = "none"  # none | imagenet_import
    frozen_layers: int = 0

    def __post_init__(self):
        if self.backbone not in ALL_BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.attention and self.backbone not in CLASSIFIER_BACKBONES:
            raise ConfigError("attention is only valid for classifier backbones")
        if not 0 < self.scale <= 1:
            raise ConfigError(f"scale must lie in (0, 1], got {self.scale}")
        if self.input_size < 32:
            raise ConfigError("input_size must be >= 32")
        if self.pretrained not in ("none", "imagenet_import"):
            raise ConfigError(f"unknown pretrained mode {self.pretrained!r}")
        if self.frozen_layers < 0:
            raise ConfigError("frozen_layers must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClassifierOutput:
    probs: np.ndarray  # (num_classes,) nonnegative, sums to 1
    logits: np.ndarray
    feature_maps: np.ndarray  # (H', W', C)

    @property
    def action(self) -> ActionClass:
        return ActionClass(int(np.argmax(self.probs)))


def _scaled(width: int, scale: float) -> int:
    return max(1, round(width * scale))


def weighted_layers(module: nn.Module) -> list[nn.Module]:
    """Weight-carrying layers in graph (definition) order."""
    return [m for m in module.modules() if isinstance(m, WEIGHTED_TYPES)]


def he_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ChannelAttention(nn.Module):
    """Channel descriptor gating: pool, 1x1 bottleneck convs, sigmoid, rescale."""

    def __init__(self, channels: int, bottleneck: int | None = None):
        super().__init__()
        mid = bottleneck or max(1, channels // 8)
        self.conv1 = nn.Conv2d(channels, mid, kernel_size=1)
        self.conv2 = nn.Conv2d(mid, channels, kernel_size=1)

    def descriptor(self, maps: torch.Tensor) -> torch.Tensor:
        pooled = F.adaptive_avg_pool2d(maps, 1)
        return torch.sigmoid(self.conv2(F.relu(self.conv1(pooled))))

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return maps * self.descriptor(maps)


def channel_attention(maps: torch.Tensor, params: ChannelAttention) -> torch.Tensor:
    """Functional form; validates the channel count against the parameters."""
    if maps.ndim != 4:
        raise ShapeError(f"feature maps must be NCHW, got {tuple(maps.shape)}")
    if maps.shape[1] != params.conv1.in_channels:
        raise ShapeError(
            f"maps have {maps.shape[1]} channels, attention expects {params.conv1.in_channels}"
        )
    return params(maps)


class ActionClassifier(nn.Module):
    """Shared classifier plumbing: attention, GAP + linear head, freezing.

    ``forward_features`` returns the maps that feed global average pooling —
    for attention models these are the channel-gated maps, which is the layer
    class-activation heatmaps target.
    """

    def __init__(self, config: ModelConfig, feature_channels: int):
        super().__init__()
        self.config = config
        self.feature_channels = feature_channels
        self.attention = ChannelAttention(feature_channels) if config.attention else None
        self.fc = nn.Linear(feature_channels, config.num_classes)
        self.frozen_modules: list[nn.Module] = []

    head_prefixes = ("fc",)

    def backbone_features(self, x: torch.Tensor) -> torch.Tensor:  # pragma: no cover
        raise NotImplementedError

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        maps = self.backbone_features(x)
        if self.attention is not None:
            maps = self.attention(maps)
        return maps

    def head_from_maps(self, maps: torch.Tensor) -> torch.Tensor:
        return self.fc(maps.mean(dim=(2, 3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head_from_maps(self.forward_features(x))

    def train(self, mode: bool = True):
        super().train(mode)
        for m in self.frozen_modules:
            m.eval()
        return self

    @torch.no_grad()
    def classify(self, image: np.ndarray) -> ClassifierOutput:
        """Run one HxWx3 float image in [0, 1] through the model."""
        size = self.config.input_size
        if image.shape[:2] != (size, size):
            raise ShapeError(f"model expects {size}x{size} input, got {image.shape[:2]}")
        was_training = self.training
        self.eval()
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
        maps = self.forward_features(x)
        logits = self.head_from_maps(maps)
        probs = torch.softmax(logits, dim=1)
        if was_training:
            self.train()
        return ClassifierOutput(
            probs=probs[0].numpy(),
            logits=logits[0].numpy(),
            feature_maps=maps[0].permute(1, 2, 0).numpy(),
        )


class VggClassifier(ActionClassifier):
    """13-conv stack with batch norm after every conv; the last conv uses tanh
    to keep the final feature maps bounded, then GAP and a softmax head."""

    def __init__(self, config: ModelConfig):
        width = _scaled(_VGG_PLAN[-2], config.scale)
        super().__init__(config, feature_channels=width)
        layers: list[nn.Module] = []
        in_ch = 3
        conv_ids = [i for i, v in enumerate(_VGG_PLAN) if v != "M"]
        last_conv = conv_ids[-1]
        for i, v in enumerate(_VGG_PLAN):
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2))
                continue
            out_ch = _scaled(v, config.scale)
            layers.append(nn.Conv2d(in_ch, out_ch, 3, padding=1))
            layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.Tanh() if i == last_conv else nn.ReLU(inplace=True))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        he_init(self)

    def backbone_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, planes: int, stride: int = 1):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = nn.Conv2d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity)


class ResidualClassifier(ActionClassifier):
    """50-layer residual layout (3-4-6-3 bottleneck stages), width-scaled."""

    def __init__(self, config: ModelConfig):
        planes = [_scaled(p, config.scale) for p, _, _ in _RESIDUAL_STAGES]
        super().__init__(config, feature_channels=planes[-1] * Bottleneck.expansion)
        stem_ch = _scaled(64, config.scale)
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_ch, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(stem_ch),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        in_ch = stem_ch
        for (base, blocks, stride), p in zip(_RESIDUAL_STAGES, planes):
            layers = [Bottleneck(in_ch, p, stride)]
            in_ch = p * Bottleneck.expansion
            layers += [Bottleneck(in_ch, p) for _ in range(blocks - 1)]
            stages.append(nn.Sequential(*layers))
        self.stages = nn.Sequential(*stages)
        he_init(self)

    def backbone_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(self.stem(x))


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class UNetEncoder(nn.Module):
    """Contracting path: 4 double-conv levels plus the bottleneck level.

    The first 16 weighted layers (8 convs and their batch norms) are exactly
    the four levels before the bottleneck, which is what encoder freezing
    targets by default.
    """

    def __init__(self, scale: float):
        super().__init__()
        w = [_scaled(v, scale) for v in _UNET_WIDTHS]
        self.widths = w
        self.inc = DoubleConv(3, w[0])
        self.down1 = DoubleConv(w[0], w[1])
        self.down2 = DoubleConv(w[1], w[2])
        self.down3 = DoubleConv(w[2], w[3])
        self.down4 = DoubleConv(w[3], w[4])  # bottleneck
        self.pool = nn.MaxPool2d(2, 2)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """All level outputs, shallowest first (skips + bottleneck)."""
        x1 = self.inc(x)
        x2 = self.down1(self.pool(x1))
        x3 = self.down2(self.pool(x2))
        x4 = self.down3(self.pool(x3))
        x5 = self.down4(self.pool(x4))
        return [x1, x2, x3, x4, x5]


class UNetSegmenter(nn.Module):
    """Contracting/expanding encoder-decoder with skip connections and a
    per-pixel sigmoid output."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = UNetEncoder(config.scale)
        w = self.encoder.widths
        self.up4 = nn.ConvTranspose2d(w[4], w[3], 2, stride=2)
        self.dec4 = DoubleConv(w[3] * 2, w[3])
        self.up3 = nn.ConvTranspose2d(w[3], w[2], 2, stride=2)
        self.dec3 = DoubleConv(w[2] * 2, w[2])
        self.up2 = nn.ConvTranspose2d(w[2], w[1], 2, stride=2)
        self.dec2 = DoubleConv(w[1] * 2, w[1])
        self.up1 = nn.ConvTranspose2d(w[1], w[0], 2, stride=2)
        self.dec1 = DoubleConv(w[0] * 2, w[0])
        self.out_conv = nn.Conv2d(w[0], 1, 1)
        he_init(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1, x2, x3, x4, x5 = self.encoder(x)
        y = self.dec4(torch.cat([x4, self.up4(x5)], dim=1))
        y = self.dec3(torch.cat([x3, self.up3(y)], dim=1))
        y = self.dec2(torch.cat([x2, self.up2(y)], dim=1))
        y = self.dec1(torch.cat([x1, self.up1(y)], dim=1))
        return torch.sigmoid(self.out_conv(y))

    @torch.no_grad()
    def segment(self, image: np.ndarray) -> np.ndarray:
        was_training = self.training
        self.eval()
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
        out = self(x)[0, 0].numpy()
        if was_training:
            self.train()
        return out


class UNetEncoderClassifier(ActionClassifier):
    """Classifier built on the segmenter's contracting path: encoder, two conv
    blocks, 50% dropout, GAP, and the 4-way head."""

    head_prefixes = ("head1", "head2", "fc")

    def __init__(self, config: ModelConfig):
        w = [_scaled(v, config.scale) for v in _UNET_WIDTHS]
        super().__init__(config, feature_channels=w[3])
        self.encoder = UNetEncoder(config.scale)
        self.head1 = nn.Sequential(
            nn.Conv2d(w[4], w[3], 3, padding=1), nn.BatchNorm2d(w[3]), nn.ReLU(inplace=True)
        )
        self.head2 = nn.Sequential(
            nn.Conv2d(w[3], w[3], 3, padding=1), nn.BatchNorm2d(w[3]), nn.ReLU(inplace=True)
        )
        self.dropout = nn.Dropout(0.5)
        he_init(self)

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        bottleneck = self.encoder(x)[-1]
        return self.head2(self.head1(bottleneck))

    def head_from_maps(self, maps: torch.Tensor) -> torch.Tensor:
        return self.fc(self.dropout(maps).mean(dim=(2, 3)))

    def load_encoder_weights(self, encoder_state: dict[str, torch.Tensor]) -> None:
        own = self.encoder.state_dict()
        for name, tensor in encoder_state.items():
            if name not in own:
                raise TransferError(f"encoder weight {name!r} missing in classifier encoder")
            if own[name].shape != tensor.shape:
                raise TransferError(
                    f"encoder weight {name!r} shape {tuple(tensor.shape)} != {tuple(own[name].shape)}"
                )
        self.encoder.load_state_dict(encoder_state)

    def freeze_encoder_prefix(self, n_layers: int) -> None:
        """Freeze the first n weighted layers of the encoder in graph order."""
        layers = weighted_layers(self.encoder)
        if n_layers > len(layers):
            raise ConfigError(
                f"frozen_layers={n_layers} exceeds encoder depth {len(layers)}"
            )
        self.frozen_modules = layers[:n_layers]
        for m in self.frozen_modules:
            for p in m.parameters():
                p.requires_grad_(False)
            m.eval()


def build_classifier(config: ModelConfig, seed: int = 0) -> ActionClassifier:
    """A vgg_style or residual classifier per the config."""
    if config.backbone not in CLASSIFIER_BACKBONES:
        raise ConfigError(f"build_classifier cannot build {config.backbone!r}")
    torch.manual_seed(seed)
    model = VggClassifier(config) if config.backbone == "vgg_style" else ResidualClassifier(config)
    return model


def build_segmenter(config: ModelConfig, seed: int = 0) -> UNetSegmenter:
    if config.backbone != "segmenter":
        raise ConfigError(f"build_segmenter cannot build {config.backbone!r}")
    torch.manual_seed(seed)
    return UNetSegmenter(config)


def build_encoder_classifier(
    config: ModelConfig,
    segmenter: UNetSegmenter | dict[str, torch.Tensor] | None = None,
    seed: int = 0,
) -> UNetEncoderClassifier:
    """The segmentation-pretrained classifier.

    When a trained segmenter (or its encoder state dict) is given, its
    contracting-path weights initialise the classifier encoder and the first
    ``config.frozen_layers`` weighted layers are frozen. Without weights the
    whole model keeps its He-normal initialisation.
    """
    if config.backbone != "encoder_classifier":
        raise ConfigError(f"build_encoder_classifier cannot build {config.backbone!r}")
    torch.manual_seed(seed)
    model = UNetEncoderClassifier(config)
    if segmenter is not None:
        state = (
            segmenter.encoder.state_dict() if isinstance(segmenter, UNetSegmenter) else segmenter
        )
        model.load_encoder_weights(state)
    if config.frozen_layers:
        model.freeze_encoder_prefix(config.frozen_layers)
    return model


@dataclass
class ImportReport:
    """Outcome of a pretrained-weight import; mismatches warn, never fail."""

    loaded: list[str] = field(default_factory=list)
    skipped_head: list[str] = field(default_factory=list)
    unloaded: list[str] = field(default_factory=list)
    fresh_init: bool = False

    def summary(self) -> str:
        if self.fresh_init:
            return "random init (no pretrained source)"
        return (
            f"loaded {len(self.loaded)} tensors, "
            f"{len(self.skipped_head)} head tensors fresh, "
            f"{len(self.unloaded)} unmatched"
        )


def import_pretrained(model: nn.Module, source: dict[str, np.ndarray] | None) -> ImportReport:
    """Copy backbone weights from an archive state where names/shapes match.

    Head layers are always left freshly initialised. ``source=None`` keeps the
    documented random initialisation. Unmatched tensors are reported, not
    fatal.
    """
    if source is None:
        return ImportReport(fresh_init=True)
    report = ImportReport()
    head_prefixes = getattr(model, "head_prefixes", ())
    own = model.state_dict()
    for name, tensor in own.items():
        if name.endswith("num_batches_tracked"):
            continue
        if any(name == p or name.startswith(p + ".") for p in head_prefixes):
            report.skipped_head.append(name)
            continue
        if name in source and tuple(source[name].shape) == tuple(tensor.shape):
            own[name] = torch.from_numpy(np.ascontiguousarray(source[name])).to(tensor.dtype)
            report.loaded.append(name)
        else:
            report.unloaded.append(name)
    model.load_state_dict(own)
    return report


def build_model(config: ModelConfig, seed: int = 0) -> nn.Module:
    if config.backbone in CLASSIFIER_BACKBONES:
        return build_classifier(config, seed)
    if config.backbone == "segmenter":
        return build_segmenter(config, seed)
    return build_encoder_classifier(config, seed=seed)
