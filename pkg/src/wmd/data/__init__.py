"""Trial data model, preparation operations, synthetic generation, and I/O."""

from .ops import (
    DEFAULT_BOUNDARY_MARGIN,
    SplitRatios,
    downsample_stream,
    extract_balanced_frames,
    merge_labels,
    select_balanced_windows,
    split_dataset,
)
from .synthetic import (
    SyntheticRenderer,
    SyntheticSceneConfig,
    config_for_trial,
    generate_synthetic_trial,
)
from .trial_io import (
    TrialWriter,
    list_trial_dirs,
    read_label_track,
    read_trial,
    read_trial_meta,
    trial_dir_name,
    write_trial,
)
from .types import (
    CIRCUITS,
    GAIT_SPEEDS,
    RECORDING_FPS,
    STREAM_FPS,
    ActionClass,
    DatasetSplit,
    FrameRGBD,
    LabelTrack,
    TrialRecording,
    turn_class_for_circuit,
)

__all__ = [
    "ActionClass",
    "CIRCUITS",
    "DEFAULT_BOUNDARY_MARGIN",
    "DatasetSplit",
    "FrameRGBD",
    "GAIT_SPEEDS",
    "LabelTrack",
    "RECORDING_FPS",
    "STREAM_FPS",
    "SplitRatios",
    "SyntheticRenderer",
    "SyntheticSceneConfig",
    "TrialRecording",
    "TrialWriter",
    "config_for_trial",
    "downsample_stream",
    "extract_balanced_frames",
    "generate_synthetic_trial",
    "list_trial_dirs",
    "merge_labels",
    "read_label_track",
    "read_trial",
    "read_trial_meta",
    "select_balanced_windows",
    "split_dataset",
    "trial_dir_name",
    "turn_class_for_circuit",
    "write_trial",
]
