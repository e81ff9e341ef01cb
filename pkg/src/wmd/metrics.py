"""Classification, overlap, and streaming online metrics.

Offline metrics use one-vs-rest confusion counts over the 4 action classes.
Precision and recall are macro averages; the reported `accuracy` is the macro
average of per-class one-vs-rest accuracies, normalised by the class count so
it stays in [0, 1] (the raw per-class sum would exceed 1). `frame_accuracy`
is the plain fraction of correctly classified samples; both are reported
because the one-vs-rest form is inflated by true negatives.

Online metrics accumulate the same one-vs-rest counts frame by frame: a
correct frame adds one true positive and three true negatives, a wrong frame
adds one false positive, one false negative, and two true negatives. The
dynamic weight w is the seen-portion ratio of ground-truth negatives to
positives (clamped to 1 before any frame is seen) and calibrates the weighted
accuracy and precision variants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError

NUM_CLASSES = 4


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class one-vs-rest counts; index i is class i."""

    tp: tuple[int, ...]
    tn: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def total(self) -> int:
        return self.tp[0] + self.tn[0] + self.fp[0] + self.fn[0]


def confusion(preds, gts) -> ConfusionCounts:
    """One-vs-rest confusion counts for class ids in 0..3."""
    preds = np.asarray(preds, dtype=np.int64)
    gts = np.asarray(gts, dtype=np.int64)
    if preds.shape != gts.shape:
        raise ShapeError(f"preds shape {preds.shape} != gts shape {gts.shape}")
    if preds.size and (preds.min() < 0 or preds.max() >= NUM_CLASSES or gts.min() < 0 or gts.max() >= NUM_CLASSES):
        raise ShapeError("class ids must lie in 0..3")
    tp, tn, fp, fn = [], [], [], []
    for c in range(NUM_CLASSES):
        p = preds == c
        g = gts == c
        tp.append(int(np.sum(p & g)))
        fp.append(int(np.sum(p & ~g)))
        fn.append(int(np.sum(~p & g)))
        tn.append(int(np.sum(~p & ~g)))
    return ConfusionCounts(tp=tuple(tp), tn=tuple(tn), fp=tuple(fp), fn=tuple(fn))


def _safe_div(num: float, den: float) -> float:
    # zero-denominator terms contribute 0 to macro means
    return num / den if den else 0.0


@dataclass(frozen=True)
class OfflineMetrics:
    accuracy: float  # macro mean of per-class one-vs-rest accuracies
    frame_accuracy: float  # plain fraction of correct samples
    precision: float
    recall: float
    f1: float
    per_class: dict[int, dict[str, float]]

    def as_dict(self) -> dict:
        return {
            "acc": self.accuracy,
            "frame_acc": self.frame_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def offline_metrics(counts: ConfusionCounts) -> OfflineMetrics:
    per_class = {}
    for c in range(NUM_CLASSES):
        tp, tn, fp, fn = counts.tp[c], counts.tn[c], counts.fp[c], counts.fn[c]
        per_class[c] = {
            "accuracy": _safe_div(tp + tn, tp + tn + fp + fn),
            "precision": _safe_div(tp, tp + fp),
            "recall": _safe_div(tp, tp + fn),
        }
    acc = sum(v["accuracy"] for v in per_class.values()) / NUM_CLASSES
    precision = sum(v["precision"] for v in per_class.values()) / NUM_CLASSES
    recall = sum(v["recall"] for v in per_class.values()) / NUM_CLASSES
    f1 = _safe_div(2 * precision * recall, precision + recall)
    frame_acc = _safe_div(sum(counts.tp), counts.total)
    return OfflineMetrics(
        accuracy=acc,
        frame_accuracy=frame_acc,
        precision=precision,
        recall=recall,
        f1=f1,
        per_class=per_class,
    )


def overlap(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """(IoU, Dice) between two binary grids; two empty grids score 1.0."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
    tp = int(np.sum(a & b))
    fp = int(np.sum(a & ~b))
    fn = int(np.sum(~a & b))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    iou = tp / (tp + fp + fn)
    dice = 2 * tp / ((tp + fp) + (tp + fn))
    return iou, dice


@dataclass(frozen=True)
class OnlineCounts:
    """Cumulative one-vs-rest counts over seen frames (summed over classes)."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    frames_seen: int = 0
    gt_positives: int = 0
    gt_negatives: int = 0
    fixed_w: float | None = None  # pin w instead of deriving it from GT

    @property
    def w(self) -> float:
        if self.fixed_w is not None:
            return self.fixed_w
        if self.gt_positives == 0:
            return 1.0
        return self.gt_negatives / self.gt_positives


@dataclass(frozen=True)
class OnlineValues:
    ia: float
    ip: float
    wia: float
    cip: float


def online_update(state: OnlineCounts, pred: int, gt: int) -> tuple[OnlineCounts, OnlineValues]:
    """Fold one frame into the stream counts and report the instant metrics.

    Each frame contributes one-vs-rest over the 4 classes; w is recomputed
    from the ground truth seen so far (including this frame) unless pinned.
    """
    if not (0 <= pred < NUM_CLASSES and 0 <= gt < NUM_CLASSES):
        raise ShapeError("class ids must lie in 0..3")
    if pred == gt:
        state = replace(state, tp=state.tp + 1, tn=state.tn + 3)
    else:
        state = replace(state, fp=state.fp + 1, fn=state.fn + 1, tn=state.tn + 2)
    state = replace(
        state,
        frames_seen=state.frames_seen + 1,
        gt_positives=state.gt_positives + 1,
        gt_negatives=state.gt_negatives + (NUM_CLASSES - 1),
    )
    return state, online_values(state)


def online_values(state: OnlineCounts) -> OnlineValues:
    k = state.frames_seen
    w = state.w
    denom = k * NUM_CLASSES
    ia = _safe_div(state.tp + state.tn, denom)
    ip = _safe_div(state.tp, state.tp + state.fp)
    wia = _safe_div(w * state.tp + state.tn / w, denom) if w else 0.0
    cip = _safe_div(w * state.tp, w * state.tp + state.fp)
    return OnlineValues(ia=ia, ip=ip, wia=wia, cip=cip)


def replay_stream(
    preds, gts, fixed_w: float | None = None
) -> tuple[OnlineCounts, list[OnlineValues]]:
    """Run a whole prediction stream through online_update."""
    state = OnlineCounts(fixed_w=fixed_w)
    trace = []
    for p, g in zip(preds, gts):
        state, values = online_update(state, int(p), int(g))
        trace.append(values)
    return state, trace
