"""On-disk trial format: rgb/depth PNG streams, label CSVs, and meta.json.

Layout per trial::

    trial_<pid>_<speed>_<circuit>[_r<rep>]/
        rgb/%06d.png        8-bit RGB
        depth/%06d.png      16-bit grayscale, millimetres
        labels_joy.csv      timestamp_s,class_id
        labels_vel.csv      timestamp_s,class_id
        meta.json           participant, speed, circuit, fps (and rep if > 0)

The ``_r<rep>`` suffix disambiguates repeated trials of the same
participant/speed/circuit cell and is omitted for rep 0.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import cv2
import numpy as np

from ..errors import DataError
from .types import ActionClass, FrameRGBD, LabelTrack, TrialRecording


def trial_dir_name(participant_id: int, gait_speed: float, circuit: str, rep: int = 0) -> str:
    name = f"trial_{participant_id:02d}_{gait_speed:.1f}_{circuit}"
    return name if rep == 0 else f"{name}_r{rep}"


def _write_labels(path: Path, track: LabelTrack) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "class_id"])
        for t, action in track.transitions:
            writer.writerow([f"{t:.6f}", int(action)])


def read_label_track(path: Path, source: str) -> LabelTrack:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"empty label file {path}")
    transitions = tuple(
        (float(r["timestamp_s"]), ActionClass(int(r["class_id"]))) for r in rows
    )
    return LabelTrack(source=source, transitions=transitions)


class TrialWriter:
    """Streams a trial to disk frame by frame (no full-trial materialization)."""

    def __init__(
        self,
        root: Path,
        participant_id: int,
        gait_speed: float,
        circuit: str,
        fps: int = 30,
        rep: int = 0,
    ):
        self.out = Path(root) / trial_dir_name(participant_id, gait_speed, circuit, rep)
        (self.out / "rgb").mkdir(parents=True, exist_ok=True)
        (self.out / "depth").mkdir(parents=True, exist_ok=True)
        self.meta = {
            "participant": participant_id,
            "speed": gait_speed,
            "circuit": circuit,
            "fps": fps,
        }
        if rep:
            self.meta["rep"] = rep

    def add_frame(self, index: int, frame: FrameRGBD) -> None:
        cv2.imwrite(
            str(self.out / "rgb" / f"{index:06d}.png"),
            cv2.cvtColor(frame.rgb, cv2.COLOR_RGB2BGR),
        )
        cv2.imwrite(str(self.out / "depth" / f"{index:06d}.png"), frame.depth)

    def finish(self, joy: LabelTrack, vel: LabelTrack) -> Path:
        _write_labels(self.out / "labels_joy.csv", joy)
        _write_labels(self.out / "labels_vel.csv", vel)
        (self.out / "meta.json").write_text(json.dumps(self.meta, indent=2))
        return self.out


def write_trial(trial: TrialRecording, root: Path, rep: int = 0) -> Path:
    """Persist a trial under root; returns the trial directory."""
    fps = 30
    if len(trial.frames) > 1:
        fps = round(1.0 / (trial.frames[1].timestamp - trial.frames[0].timestamp))
    writer = TrialWriter(root, trial.participant_id, trial.gait_speed, trial.circuit, fps, rep)
    for i, frame in enumerate(trial.frames):
        writer.add_frame(i, frame)
    return writer.finish(trial.joy, trial.vel)


def read_trial_meta(trial_dir: Path) -> dict:
    meta_path = Path(trial_dir) / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{trial_dir} has no meta.json")
    return json.loads(meta_path.read_text())


def read_trial(trial_dir: Path) -> TrialRecording:
    """Load a trial directory back into memory.

    Frame timestamps are reconstructed from the index and the meta fps.
    """
    trial_dir = Path(trial_dir)
    meta = read_trial_meta(trial_dir)
    fps = meta["fps"]
    rgb_files = sorted((trial_dir / "rgb").glob("*.png"))
    if not rgb_files:
        raise DataError(f"{trial_dir} contains no rgb frames")
    frames = []
    for i, rgb_path in enumerate(rgb_files):
        bgr = cv2.imread(str(rgb_path), cv2.IMREAD_COLOR)
        depth = cv2.imread(str(trial_dir / "depth" / rgb_path.name), cv2.IMREAD_UNCHANGED)
        if bgr is None or depth is None:
            raise DataError(f"unreadable frame pair {rgb_path.name} in {trial_dir}")
        frames.append(
            FrameRGBD(
                rgb=cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB),
                depth=np.asarray(depth, dtype=np.uint16),
                timestamp=i / fps,
            )
        )
    return TrialRecording(
        participant_id=meta["participant"],
        gait_speed=meta["speed"],
        circuit=meta["circuit"],
        frames=frames,
        joy=read_label_track(trial_dir / "labels_joy.csv", "JOY"),
        vel=read_label_track(trial_dir / "labels_vel.csv", "VEL"),
    )


def list_trial_dirs(root: Path) -> list[Path]:
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("trial_"))
