"""Stream, label, and split operations used during dataset preparation."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import AlignmentError, SegmentTooShortError, SplitError
from .types import ActionClass, DatasetSplit, FrameRGBD, LabelTrack

# Frames this close to a segment boundary are never used as samples.
DEFAULT_BOUNDARY_MARGIN = 2

# The production 15-participant study uses this fixed assignment.
_STUDY_TRAIN = frozenset(range(1, 15)) - {5, 8, 11}
_STUDY_VAL = frozenset({5})
_STUDY_TEST = frozenset({8, 11, 15})


def downsample_stream(frames: list[FrameRGBD]) -> list[FrameRGBD]:
    """Halve the frame rate by keeping even indices (0, 2, 4, ...).

    Timestamps are preserved; an empty input yields an empty output.
    """
    return frames[::2]


def merge_labels(joy: LabelTrack, vel: LabelTrack) -> LabelTrack:
    """Combine two tracks so each class starts at the later of the two marks.

    Both tracks must carry the same class sequence; otherwise the first
    mismatching transition index is reported.
    """
    n = min(len(joy.transitions), len(vel.transitions))
    for i in range(n):
        if joy.transitions[i][1] != vel.transitions[i][1]:
            raise AlignmentError(i)
    if len(joy.transitions) != len(vel.transitions):
        raise AlignmentError(n, f"track lengths differ: {len(joy.transitions)} vs {len(vel.transitions)}")
    merged = tuple(
        (max(tj, tv), cj)
        for (tj, cj), (tv, _) in zip(joy.transitions, vel.transitions)
    )
    return LabelTrack(source="MERGED", transitions=merged)


def _segments(frame_classes: list[ActionClass]) -> list[tuple[int, int, ActionClass]]:
    """Maximal runs of equal class, as (start, end_exclusive, class)."""
    runs = []
    start = 0
    for i in range(1, len(frame_classes) + 1):
        if i == len(frame_classes) or frame_classes[i] != frame_classes[start]:
            runs.append((start, i, frame_classes[start]))
            start = i
    return runs


def _centered_strided_indices(lo: int, hi: int, n: int) -> list[int]:
    """n indices spread uniformly and symmetrically across [lo, hi)."""
    span = hi - lo
    return [lo + math.floor((i + 0.5) * span / n) for i in range(n)]


def extract_balanced_frames(
    frames: list[FrameRGBD],
    labels: LabelTrack,
    n: int,
    margin: int = DEFAULT_BOUNDARY_MARGIN,
) -> list[tuple[FrameRGBD, ActionClass]]:
    """Pick exactly n frames per labeled segment, away from its boundaries.

    Frames are taken centered within [start+margin, end-margin), uniformly
    strided. A segment with fewer than n + 2*margin frames raises
    SegmentTooShortError.
    """
    classes = [labels.class_at(f.timestamp) for f in frames]
    out: list[tuple[FrameRGBD, ActionClass]] = []
    for seg_id, (a, b, action) in enumerate(_segments(classes)):
        interior = (b - a) - 2 * margin
        if interior < n:
            raise SegmentTooShortError(seg_id, b - a, n + 2 * margin)
        for idx in _centered_strided_indices(a + margin, b - margin, n):
            out.append((frames[idx], action))
    return out


def select_balanced_windows(
    frame_classes: list[ActionClass],
    n: int,
    window_len: int = 4,
    stride: int = 2,
    margin: int = DEFAULT_BOUNDARY_MARGIN,
) -> list[tuple[int, ActionClass]]:
    """Pick n window start indices per segment on the stride grid.

    Only windows whose full span lies inside [start+margin, end-margin) of a
    single segment are eligible; n of them are chosen per segment with the
    same centered-strided rule used for frames. Returns (start_index, class)
    pairs. Raises SegmentTooShortError when a segment offers fewer than n
    eligible windows.
    """
    out: list[tuple[int, ActionClass]] = []
    for seg_id, (a, b, action) in enumerate(_segments(frame_classes)):
        starts = [
            s
            for s in range(0, len(frame_classes) - window_len + 1, stride)
            if s >= a + margin and s + window_len <= b - margin
        ]
        if len(starts) < n:
            raise SegmentTooShortError(seg_id, b - a, n)
        picked = _centered_strided_indices(0, len(starts), n)
        out.extend((starts[k], action) for k in picked)
    return out


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2


def split_dataset(
    participant_ids: list[int] | tuple[int, ...],
    ratios: SplitRatios = SplitRatios(),
) -> DatasetSplit:
    """Assign participants to train/val/test.

    The 15-participant production layout uses the fixed assignment
    (train = 1..14 minus {5, 8, 11}, val = {5}, test = {8, 11, 15}). Any other
    layout of >= 3 participants is split by ratios: val and test sizes are
    floored (but kept >= 1), the remainder goes to train, and sorted ids fill
    the sets in order.
    """
    ids = sorted(participant_ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise SplitError(f"duplicate participant ids {dupes}")
    if set(ids) == set(range(1, 16)):
        return DatasetSplit(_STUDY_TRAIN, _STUDY_VAL, _STUDY_TEST)
    if len(ids) < 3:
        raise SplitError(f"need at least 3 participants to split, got {len(ids)}")
    n = len(ids)
    n_val = max(1, math.floor(n * ratios.val))
    n_test = max(1, math.floor(n * ratios.test))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise SplitError(f"ratios {ratios} leave no training participants for n={n}")
    return DatasetSplit(
        train_ids=frozenset(ids[:n_train]),
        val_ids=frozenset(ids[n_train : n_train + n_val]),
        test_ids=frozenset(ids[n_train + n_val :]),
    )
