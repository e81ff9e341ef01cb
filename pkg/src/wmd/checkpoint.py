"""Checkpoint archives: per-tensor raw little-endian float32 plus a JSON manifest.

A checkpoint is a zip file holding ``manifest.json`` (model config, seed,
epoch, validation metric, and each tensor's shape) and one
``tensors/<name>.bin`` entry per state tensor. Integer bookkeeping buffers
(batch counters) are not persisted; everything else round-trips exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .models import ModelConfig, build_model


def _state_to_numpy(state: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in state.items():
        if name.endswith("num_batches_tracked"):
            continue
        out[name] = tensor.detach().cpu().numpy().astype("<f4")
    return out


def save_checkpoint(path: Path, model: torch.nn.Module, manifest: dict) -> None:
    tensors = _state_to_numpy(model.state_dict())
    manifest = dict(manifest)
    manifest["tensors"] = {name: list(arr.shape) for name, arr in tensors.items()}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name, arr in tensors.items():
            zf.writestr(f"tensors/{name}.bin", np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        tensors = {}
        for name, shape in manifest.get("tensors", {}).items():
            raw = zf.read(f"tensors/{name}.bin")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return manifest, tensors


def load_model(path: Path, seed: int = 0) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model named in the manifest and restore its exact weights."""
    manifest, tensors = read_checkpoint(path)
    if "model_config" not in manifest:
        raise DataError(f"checkpoint {path} has no model_config in its manifest")
    config = ModelConfig(**manifest["model_config"])
    model = build_model(config, seed=seed)
    own = model.state_dict()
    for name, value in own.items():
        if name.endswith("num_batches_tracked"):
            continue
        if name not in tensors:
            raise DataError(f"checkpoint {path} is missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(value.shape):
            raise DataError(
                f"checkpoint tensor {name!r} shape {tensors[name].shape} != model {tuple(value.shape)}"
            )
        own[name] = torch.from_numpy(tensors[name]).to(value.dtype)
    model.load_state_dict(own)
    if config.frozen_layers and hasattr(model, "freeze_encoder_prefix"):
        model.freeze_encoder_prefix(config.frozen_layers)
    model.eval()
    return model, manifest
