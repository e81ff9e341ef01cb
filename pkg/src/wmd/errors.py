"""Exception types shared across the pipeline."""

from __future__ import annotations


class WmdError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(WmdError):
    """Invalid or inconsistent configuration value."""


class DataError(WmdError):
    """A dataset is empty, malformed, or otherwise unusable."""


class AlignmentError(WmdError):
    """Two label tracks disagree on their class sequence."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"label tracks diverge at transition index {index}")


class SegmentTooShortError(WmdError):
    """A labeled segment has too few frames for balanced extraction."""

    def __init__(self, segment_id: int, length: int, required: int):
        self.segment_id = segment_id
        self.length = length
        self.required = required
        super().__init__(
            f"segment {segment_id} has {length} frames, needs at least {required}"
        )


class SplitError(WmdError):
    """Participant-id sets overlap, duplicate, or are too small to split."""


class WindowError(WmdError):
    """Not enough frames to form a sliding window."""


class ShapeError(WmdError):
    """Array shapes do not match the operation's contract."""


class RoiError(WmdError):
    """Region-of-interest bounds fall outside the image."""


class CorruptedWindowError(WmdError):
    """A window contains at least one corrupted per-frame mask."""


class CorruptedMaskError(WmdError):
    """A mask flagged as corrupted was passed where a clean one is required."""


class TransferError(WmdError):
    """Weight shapes do not match during encoder transfer."""


class DivergenceError(WmdError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


class ClassError(WmdError):
    """Class id outside the 4-class action set."""


class PipelineError(WmdError):
    """An upstream pipeline stage has not produced its artifacts yet."""

    def __init__(self, missing_stage: str, message: str | None = None):
        self.missing_stage = missing_stage
        super().__init__(message or f"missing artifacts from stage '{missing_stage}'")
