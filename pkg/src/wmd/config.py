"""TOML configuration: one section per pipeline stage, CLI flags override."""

from __future__ import annotations

from pathlib import Path

import toml

from .data.ops import SplitRatios
from .data.synthetic import SyntheticSceneConfig
from .encoder import AugmentConfig, InputForm, RoiSpec
from .errors import ConfigError
from .masks import MaskConfig
from .models import ModelConfig
from .pipeline import PrepareStageConfig, SynthStageConfig
from .simulate import EncoderSettings
from .train import TrainConfig


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        return toml.loads(path.read_text())
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def _section(cfg: dict, name: str) -> dict:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return dict(section)


def _apply(section: dict, overrides: dict) -> dict:
    section.update({k: v for k, v in overrides.items() if v is not None})
    return section


def synth_config(cfg: dict, **overrides) -> SynthStageConfig:
    section = _apply(_section(cfg, "synth"), overrides)
    scene_fields = _section({"scene": section.pop("scene", {})}, "scene")
    scene_over = section.pop("scene_overrides", {})
    scene_fields.update(scene_over)
    try:
        scene = SyntheticSceneConfig(**scene_fields)
        if "speeds" in section:
            section["speeds"] = tuple(section["speeds"])
        if "circuits" in section:
            section["circuits"] = tuple(section["circuits"])
        return SynthStageConfig(scene=scene, **section)
    except TypeError as exc:
        raise ConfigError(f"bad [synth] config: {exc}") from exc


def prepare_config(cfg: dict, **overrides) -> PrepareStageConfig:
    section = _apply(_section(cfg, "prepare"), overrides)
    ratios = SplitRatios(
        train=section.pop("train_ratio", 0.6),
        val=section.pop("val_ratio", 0.2),
        test=section.pop("test_ratio", 0.2),
    )
    try:
        return PrepareStageConfig(ratios=ratios, **section)
    except TypeError as exc:
        raise ConfigError(f"bad [prepare] config: {exc}") from exc


def encoder_settings(cfg: dict, **overrides) -> EncoderSettings:
    section = _apply(_section(cfg, "encoder"), overrides)
    roi = None
    roi_fields = section.pop("roi", None)
    if roi_fields:
        try:
            roi = RoiSpec(**roi_fields)
        except TypeError as exc:
            raise ConfigError(f"bad [encoder.roi] config: {exc}") from exc
    form = section.pop("form", "add")
    try:
        return EncoderSettings(form=InputForm(form), roi=roi, **section)
    except ValueError as exc:
        raise ConfigError(f"unknown encoder form {form!r}") from exc
    except TypeError as exc:
        raise ConfigError(f"bad [encoder] config: {exc}") from exc


def augment_config(cfg: dict) -> AugmentConfig | None:
    section = _section(cfg, "augment")
    if not section.pop("enabled", False):
        return None
    try:
        return AugmentConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [augment] config: {exc}") from exc


def mask_config(cfg: dict, **overrides) -> MaskConfig:
    section = _apply(_section(cfg, "masks"), overrides)
    try:
        return MaskConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [masks] config: {exc}") from exc


def model_config(cfg: dict, **overrides) -> ModelConfig:
    section = _apply(_section(cfg, "model"), overrides)
    section.setdefault("backbone", "residual")
    try:
        return ModelConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [model] config: {exc}") from exc


def train_config(cfg: dict, task: str, **overrides) -> TrainConfig:
    section = _apply(_section(cfg, "train"), overrides)
    section.pop("task", None)
    section["augment"] = augment_config(cfg)
    try:
        if task == "classification":
            return TrainConfig.classification(**section)
        return TrainConfig.segmentation(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [train] config: {exc}") from exc
