"""Online trial simulation: stream windows, debounce predictions, track metrics.

The post-processor accepts a class change only after the current class has
held for a minimum duration (default 2 s) and never lets the two turn classes
follow each other directly. Per ground-truth transition the report records
the signed delay until the post-processed trace first shows the new class;
negative delays mean the class appeared early.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data.ops import downsample_stream, merge_labels
from .data.types import ActionClass, LabelTrack, TrialRecording
from .encoder import (
    DEFAULT_STRIDE,
    DEFAULT_WINDOW_LEN,
    EncodedInput,
    GeometryChain,
    InputForm,
    RoiSpec,
    Window,
    encode_and_transform,
    make_windows,
)
from .errors import ConfigError
from .metrics import OnlineCounts, OnlineValues, online_update

_FORBIDDEN = {
    (ActionClass.TURN_RIGHT, ActionClass.TURN_LEFT),
    (ActionClass.TURN_LEFT, ActionClass.TURN_RIGHT),
}

MIN_ACTION_DURATION_S = 2.0


@dataclass(frozen=True)
class PostProcessorState:
    """Debouncer state: the accepted class and how long it has held."""

    current: ActionClass | None = None
    dwell: float = 0.0
    min_duration: float = MIN_ACTION_DURATION_S


def postprocess(
    state: PostProcessorState, raw_pred: ActionClass, dt: float
) -> tuple[PostProcessorState, ActionClass]:
    """Fold one raw prediction into the debouncer.

    The first prediction initialises the accepted class. Afterwards a change
    is accepted only once the current class has dwelled at least
    ``min_duration`` seconds, and an accepted turn is never replaced directly
    by the opposite turn. Rejections keep accumulating dwell time, so the
    debounce never resets on noise.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    raw_pred = ActionClass(raw_pred)
    if state.current is None:
        return replace(state, current=raw_pred, dwell=0.0), raw_pred
    if raw_pred == state.current:
        return replace(state, dwell=state.dwell + dt), state.current
    if state.dwell < state.min_duration:
        return replace(state, dwell=state.dwell + dt), state.current
    if (state.current, raw_pred) in _FORBIDDEN:
        return replace(state, dwell=state.dwell + dt), state.current
    return replace(state, current=raw_pred, dwell=0.0), raw_pred


@dataclass(frozen=True)
class TransitionDelay:
    gt_time: float
    action: ActionClass
    pred_time: float | None
    delay: float | None

    @property
    def missed(self) -> bool:
        return self.pred_time is None


@dataclass
class TransitionReport:
    entries: list[TransitionDelay]

    @property
    def delays(self) -> list[float | None]:
        return [e.delay for e in self.entries]

    def as_dict(self) -> list[dict]:
        return [
            {
                "gt_time": e.gt_time,
                "class": int(e.action),
                "class_name": e.action.label,
                "pred_time": e.pred_time,
                "delay": e.delay,
                "missed": e.missed,
            }
            for e in self.entries
        ]


def transition_delays(
    gt: LabelTrack, times: np.ndarray, post_labels: np.ndarray
) -> TransitionReport:
    """Signed delay per ground-truth transition.

    For a transition to class c at time t_g, the matching prediction time is
    the earliest onset of a run of c in the post-processed trace within
    [previous transition, next transition); searching from the previous
    transition lets early predictions yield negative delays. Matching onsets
    rather than any instant keeps the lingering tail of an earlier occurrence
    of c from being attributed to this transition. A class whose run never
    starts inside the interval is recorded as missed.
    """
    times = np.asarray(times, dtype=np.float64)
    post_labels = np.asarray(post_labels, dtype=np.int64)
    is_onset = np.ones(len(post_labels), dtype=bool)
    is_onset[1:] = post_labels[1:] != post_labels[:-1]
    entries = []
    transitions = gt.transitions
    for k in range(1, len(transitions)):
        t_g, action = transitions[k]
        lo = transitions[k - 1][0]
        hi = transitions[k + 1][0] if k + 1 < len(transitions) else np.inf
        in_range = (times >= lo) & (times < hi) & (post_labels == int(action)) & is_onset
        if in_range.any():
            pred_time = float(times[in_range][0])
            entries.append(
                TransitionDelay(
                    gt_time=float(t_g),
                    action=ActionClass(action),
                    pred_time=pred_time,
                    delay=pred_time - float(t_g),
                )
            )
        else:
            entries.append(
                TransitionDelay(gt_time=float(t_g), action=ActionClass(action), pred_time=None, delay=None)
            )
    return TransitionReport(entries=entries)


@dataclass(frozen=True)
class EncoderSettings:
    """Window encoding configuration used online and in the batch pipeline."""

    form: InputForm = InputForm.ADD
    crop: bool = True
    roi: RoiSpec | None = None  # None + crop=True uses the default central ROI
    target: int = 224
    window_len: int = DEFAULT_WINDOW_LEN
    stride: int = DEFAULT_STRIDE

    def geometry_for(self, width: int, height: int) -> GeometryChain:
        roi = None
        if self.crop:
            roi = self.roi or RoiSpec.default_for(width, height)
        return GeometryChain(roi=roi, target=self.target)


@dataclass
class TrialSimulation:
    times: np.ndarray
    raw: np.ndarray
    post: np.ndarray
    gt: np.ndarray
    metrics: list[OnlineValues]
    final_counts: OnlineCounts
    report: TransitionReport
    latencies_s: np.ndarray
    gt_track: LabelTrack

    def to_json(self, path: Path) -> None:
        payload = {
            "times": self.times.tolist(),
            "raw": self.raw.tolist(),
            "post": self.post.tolist(),
            "gt": self.gt.tolist(),
            "online": [
                {"t": float(t), "ia": m.ia, "ip": m.ip, "wia": m.wia, "cip": m.cip}
                for t, m in zip(self.times, self.metrics)
            ],
            "delays": self.report.as_dict(),
            "latency_s": {
                "median": float(np.median(self.latencies_s)),
                "max": float(self.latencies_s.max()),
                "per_window": self.latencies_s.tolist(),
            },
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def _as_predictor(model):
    if callable(model) and not hasattr(model, "classify"):
        return model

    def predict(encoded: EncodedInput) -> ActionClass:
        return model.classify(encoded.image).action

    return predict


def run_trial(
    trial: TrialRecording,
    model,
    settings: EncoderSettings,
    gt_track: str = "merged",
    min_duration: float = MIN_ACTION_DURATION_S,
) -> TrialSimulation:
    """Stream one untrimmed trial through encode -> predict -> debounce.

    ``model`` is either a classifier exposing ``classify`` or a callable
    mapping an EncodedInput to an ActionClass (scripted predictors). Online
    metrics accumulate over the post-processed labels; timeline timestamps
    are window end times, the earliest instant each window fully exists.
    """
    if gt_track == "merged":
        track = merge_labels(trial.joy, trial.vel)
    elif gt_track == "joy":
        track = trial.joy
    elif gt_track == "vel":
        track = trial.vel
    else:
        raise ConfigError(f"unknown gt track {gt_track!r}")

    frames15 = downsample_stream(trial.frames)
    windows = make_windows(frames15, settings.window_len, settings.stride)
    h, w = frames15[0].rgb.shape[:2]
    geometry = settings.geometry_for(w, h)
    predictor = _as_predictor(model)

    state = PostProcessorState(min_duration=min_duration)
    counts = OnlineCounts()
    times, raw_trace, post_trace, gt_trace, latencies = [], [], [], [], []
    values_trace: list[OnlineValues] = []
    prev_t = None
    for window in windows:
        t = window.end_time
        started = time.perf_counter()
        encoded = encode_and_transform(window, settings.form, geometry)
        raw = ActionClass(predictor(encoded))
        dt = (t - prev_t) if prev_t is not None else settings.stride / window.fps
        state, accepted = postprocess(state, raw, dt)
        latencies.append(time.perf_counter() - started)
        gt_label = track.class_at(t)
        counts, values = online_update(counts, int(accepted), int(gt_label))
        times.append(t)
        raw_trace.append(int(raw))
        post_trace.append(int(accepted))
        gt_trace.append(int(gt_label))
        values_trace.append(values)
        prev_t = t

    times_arr = np.asarray(times)
    post_arr = np.asarray(post_trace, dtype=np.int64)
    return TrialSimulation(
        times=times_arr,
        raw=np.asarray(raw_trace, dtype=np.int64),
        post=post_arr,
        gt=np.asarray(gt_trace, dtype=np.int64),
        metrics=values_trace,
        final_counts=counts,
        report=transition_delays(track, times_arr, post_arr),
        latencies_s=np.asarray(latencies),
        gt_track=track,
    )


def plot_simulation(sim: TrialSimulation, label_path: Path, metric_path: Path) -> None:
    """Write label-trace and metric-trace figures for one simulation."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.step(sim.times, sim.gt, where="post", linestyle="--", label="GT", linewidth=1.4)
    ax.step(sim.times, sim.raw, where="post", linestyle=":", label="predicted", linewidth=1.2)
    ax.step(sim.times, sim.post, where="post", label="post-processed", linewidth=1.6)
    ax.set_yticks(range(4), [a.label for a in ActionClass])
    ax.set_xlabel("time (s)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(label_path, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(sim.times, [m.ia for m in sim.metrics], label="IA")
    ax.plot(sim.times, [m.wia for m in sim.metrics], "--", label="wIA")
    ax.plot(sim.times, [m.ip for m in sim.metrics], "-.", label="IP")
    ax.plot(sim.times, [m.cip for m in sim.metrics], ":", label="cIP")
    ax.set_xlabel("time (s)")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(metric_path, dpi=120)
    plt.close(fig)
