"""Core data model: action classes, RGB-D frames, label tracks, trials, splits."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..errors import ConfigError, SplitError

GAIT_SPEEDS = (0.5, 0.7, 1.0)
CIRCUITS = ("right_wide", "right_tight", "left_wide", "left_tight")
RECORDING_FPS = 30
STREAM_FPS = 15


class ActionClass(IntEnum):
    """The four walking-direction actions. Ids 0..3 are part of the wire format."""

    STOP = 0
    WALK = 1
    TURN_RIGHT = 2
    TURN_LEFT = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "ActionClass":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ConfigError(f"unknown action label {label!r}") from None


TURN_CLASSES = (ActionClass.TURN_RIGHT, ActionClass.TURN_LEFT)


def turn_class_for_circuit(circuit: str) -> ActionClass:
    if circuit not in CIRCUITS:
        raise ConfigError(f"unknown circuit {circuit!r}")
    return ActionClass.TURN_RIGHT if circuit.startswith("right") else ActionClass.TURN_LEFT


@dataclass
class FrameRGBD:
    """One synchronized RGB + depth frame.

    rgb is HxWx3 uint8, depth is HxW uint16 in millimetres (0 = invalid pixel).
    """

    rgb: np.ndarray
    depth: np.ndarray
    timestamp: float

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ConfigError(f"rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[:2]:
            raise ConfigError(
                f"depth shape {self.depth.shape} != rgb grid {self.rgb.shape[:2]}"
            )
        if self.rgb.dtype != np.uint8:
            raise ConfigError(f"rgb dtype must be uint8, got {self.rgb.dtype}")
        if self.depth.dtype != np.uint16:
            raise ConfigError(f"depth dtype must be uint16, got {self.depth.dtype}")


@dataclass(frozen=True)
class LabelTrack:
    """Ordered class transitions from one labelling source.

    Transitions are (timestamp_s, action) pairs, strictly increasing in time,
    with no two consecutive entries sharing a class.
    """

    source: str  # JOY | VEL | MERGED
    transitions: tuple[tuple[float, ActionClass], ...]

    def __post_init__(self):
        if self.source not in ("JOY", "VEL", "MERGED"):
            raise ConfigError(f"unknown label source {self.source!r}")
        if not self.transitions:
            raise ConfigError("label track must contain at least one transition")
        times = [t for t, _ in self.transitions]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("transition timestamps must be strictly increasing")
        classes = [c for _, c in self.transitions]
        if any(a == b for a, b in zip(classes, classes[1:])):
            raise ConfigError("consecutive transitions must change class")
        object.__setattr__(self, "transitions", tuple((float(t), ActionClass(c)) for t, c in self.transitions))

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.transitions)

    @property
    def classes(self) -> tuple[ActionClass, ...]:
        return tuple(c for _, c in self.transitions)

    def class_at(self, t: float) -> ActionClass:
        """Class in effect at time t (latest transition with timestamp <= t)."""
        idx = bisect.bisect_right(self.times, t) - 1
        if idx < 0:
            raise ConfigError(f"time {t} precedes the first transition at {self.times[0]}")
        return self.transitions[idx][1]


@dataclass
class TrialRecording:
    """A full trial: 30 Hz RGB-D frames plus both label tracks and metadata."""

    participant_id: int
    gait_speed: float
    circuit: str
    frames: list[FrameRGBD]
    joy: LabelTrack
    vel: LabelTrack

    def __post_init__(self):
        if self.participant_id < 1:
            raise ConfigError("participant_id must be >= 1")
        if self.gait_speed not in GAIT_SPEEDS:
            raise ConfigError(f"gait_speed must be one of {GAIT_SPEEDS}, got {self.gait_speed}")
        if self.circuit not in CIRCUITS:
            raise ConfigError(f"unknown circuit {self.circuit!r}")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("frame timestamps must be strictly increasing")

    @property
    def duration(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].timestamp - self.frames[0].timestamp


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint participant-id sets for train/val/test."""

    train_ids: frozenset[int]
    val_ids: frozenset[int]
    test_ids: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "train_ids", frozenset(self.train_ids))
        object.__setattr__(self, "val_ids", frozenset(self.val_ids))
        object.__setattr__(self, "test_ids", frozenset(self.test_ids))
        sets = (self.train_ids, self.val_ids, self.test_ids)
        names = ("train", "val", "test")
        for i in range(3):
            for j in range(i + 1, 3):
                common = sets[i] & sets[j]
                if common:
                    raise SplitError(
                        f"participants {sorted(common)} appear in both {names[i]} and {names[j]}"
                    )

    @property
    def all_ids(self) -> frozenset[int]:
        return self.train_ids | self.val_ids | self.test_ids

    def subset_for(self, participant_id: int) -> str:
        if participant_id in self.train_ids:
            return "train"
        if participant_id in self.val_ids:
            return "val"
        if participant_id in self.test_ids:
            return "test"
        raise SplitError(f"participant {participant_id} not in any split")
