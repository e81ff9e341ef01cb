"""Run manifests: content-hashed stage inputs/outputs for reproducible reruns.

Every artifact-producing command writes a ``manifest.json`` into its output
directory. The manifest key hashes the stage config, seeds, tool version and
upstream content hash; a stage whose key matches the existing manifest is up
to date and skipped.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def hash_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_tree(root: Path, patterns: tuple[str, ...] = ("**/*",)) -> str:
    """Content hash over all files under root (sorted relative paths)."""
    root = Path(root)
    digest = hashlib.sha256()
    files: list[Path] = []
    for pattern in patterns:
        files.extend(p for p in root.glob(pattern) if p.is_file())
    for path in sorted(set(files)):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(bytes.fromhex(hash_file(path)))
    return digest.hexdigest()


@dataclass
class RunManifest:
    stage: str
    config: dict
    seeds: dict
    inputs_hash: str
    tool_version: str = TOOL_VERSION
    created_unix: float = field(default_factory=time.time)
    duration_s: float = 0.0
    outputs: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        """Hash of everything that determines the stage's outputs."""
        return hash_text(
            _canonical(
                {
                    "stage": self.stage,
                    "config": self.config,
                    "seeds": self.seeds,
                    "inputs_hash": self.inputs_hash,
                    "tool_version": self.tool_version,
                }
            )
        )

    def write(self, out_dir: Path) -> None:
        payload = {
            "stage": self.stage,
            "config": self.config,
            "seeds": self.seeds,
            "inputs_hash": self.inputs_hash,
            "tool_version": self.tool_version,
            "created_unix": self.created_unix,
            "duration_s": self.duration_s,
            "outputs": self.outputs,
            "key": self.key,
        }
        (Path(out_dir) / MANIFEST_NAME).write_text(json.dumps(payload, indent=2, sort_keys=True))


def read_manifest(out_dir: Path) -> dict | None:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    return json.loads(path.read_text())


def stage_up_to_date(out_dir: Path, manifest: RunManifest) -> bool:
    existing = read_manifest(out_dir)
    return existing is not None and existing.get("key") == manifest.key
