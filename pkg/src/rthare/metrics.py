"""Temporal action segmentation metrics: frame accuracy, edit score, F1@k.

All three operate on per-frame label sequences. Edit and F1@k first merge
consecutive identical labels into segments; the edit score is the
normalized Levenshtein distance between the segment label sequences
(durations ignored), and F1@k counts a predicted segment as a true
positive when its IoU with a same-label, not-yet-matched ground-truth
segment reaches k/100.

Everything here is a pure function; per-video evaluation may fan out
across threads freely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "Segment",
    "MetricsReport",
    "merge_segments",
    "expand_segments",
    "frame_accuracy",
    "edit_score",
    "f1_at_k",
    "evaluate",
    "evaluate_sequences",
    "read_label_file",
    "write_label_file",
    "DEFAULT_F1_THRESHOLDS",
]

DEFAULT_F1_THRESHOLDS = (10, 25, 50)

Label = Union[int, str]


class MetricsError(ValueError):
    """Bad metric inputs (length mismatch, unparseable files, ...)."""


@dataclass
class Segment:
    """A maximal run of one label over the half-open frame range [start, end)."""

    label: Label
    start: int
    end: int
    confidence: float = float("nan")

    def __post_init__(self):
        if self.start >= self.end:
            raise MetricsError(f"segment [{self.start}, {self.end}) is empty")

    @property
    def duration(self) -> int:
        return self.end - self.start


def merge_segments(seq: Sequence[Label]) -> List[Segment]:
    """Merge consecutive identical labels into segments covering [0, T)."""
    if len(seq) == 0:
        raise MetricsError("cannot merge an empty label sequence")
    segments = []
    start = 0
    for i in range(1, len(seq) + 1):
        if i == len(seq) or seq[i] != seq[start]:
            segments.append(Segment(seq[start], start, i))
            start = i
    return segments


def expand_segments(segments: Sequence[Segment]) -> List[Label]:
    """Inverse of merge_segments for a covering segment list."""
    out: List[Label] = []
    for seg in segments:
        out.extend([seg.label] * seg.duration)
    return out


def frame_accuracy(pred: Sequence[Label], gt: Sequence[Label]) -> float:
    """Percentage of frames whose predicted label matches the ground truth."""
    if len(pred) != len(gt):
        raise MetricsError(f"length mismatch: pred {len(pred)} vs gt {len(gt)}")
    if len(gt) == 0:
        raise MetricsError("empty label sequences")
    hits = sum(1 for p, g in zip(pred, gt) if p == g)
    return 100.0 * hits / len(gt)


def _levenshtein(a: Sequence[Label], b: Sequence[Label]) -> int:
    # single-row DP
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def edit_score(pred: Sequence[Label], gt: Sequence[Label]) -> float:
    """Normalized segmental edit score (percent).

    100 * (1 - Levenshtein(S_pred, S_gt) / max(|S_pred|, |S_gt|)) over the
    segment label sequences; durations are ignored.
    """
    sp = [s.label for s in merge_segments(pred)]
    sg = [s.label for s in merge_segments(gt)]
    return 100.0 * (1.0 - _levenshtein(sp, sg) / max(len(sp), len(sg)))


def f1_at_k(pred: Sequence[Label], gt: Sequence[Label], k: float,
            strict: bool = False) -> float:
    """Segmental F1 at IoU threshold k/100 (percent).

    Each predicted segment (temporal order) is matched to the same-label
    ground-truth segment with the highest IoU; it is a true positive when
    that IoU reaches k/100 and the ground-truth segment is still
    unmatched, otherwise a false positive. Unmatched ground truth counts
    as false negatives. ``strict`` switches the threshold comparison from
    inclusive (>=, the default) to exclusive (>).
    """
    if not 0 < k < 100:
        raise MetricsError(f"k must be in (0, 100), got {k}")
    ps = merge_segments(pred)
    gs = merge_segments(gt)
    matched = [False] * len(gs)
    tp = 0
    fp = 0
    for p in ps:
        best_iou = -1.0
        best_j = -1
        for j, g in enumerate(gs):
            if p.label != g.label:
                iou = 0.0
            else:
                inter = max(0, min(p.end, g.end) - max(p.start, g.start))
                union = max(p.end, g.end) - min(p.start, g.start)
                iou = inter / union
            if iou > best_iou:
                best_iou = iou
                best_j = j
        hit = best_iou > k / 100.0 if strict else best_iou >= k / 100.0
        if hit and best_iou > 0 and not matched[best_j]:
            tp += 1
            matched[best_j] = True
        else:
            fp += 1
    fn = matched.count(False)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    accuracy: float
    edit: float
    f1: Dict[int, float] = field(default_factory=dict)

    def as_text(self) -> str:
        rows = [("accuracy", self.accuracy), ("edit", self.edit)]
        rows += [(f"F1@{k}", v) for k, v in sorted(self.f1.items())]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:6.2f}" for name, value in rows)

    def as_csv(self) -> str:
        names = ["accuracy", "edit"] + [f"f1@{k}" for k in sorted(self.f1)]
        values = [self.accuracy, self.edit] + [self.f1[k] for k in sorted(self.f1)]
        return ",".join(names) + "\n" + ",".join(f"{v:.6f}" for v in values) + "\n"


def evaluate_sequences(pred: Sequence[Label], gt: Sequence[Label],
                       thresholds: Sequence[float] = DEFAULT_F1_THRESHOLDS,
                       strict: bool = False) -> MetricsReport:
    return MetricsReport(
        accuracy=frame_accuracy(pred, gt),
        edit=edit_score(pred, gt),
        f1={int(k): f1_at_k(pred, gt, k, strict=strict) for k in thresholds},
    )


# ---------------------------------------------------------------------------
# Label files: one class name per line


def read_label_file(path, label_set: Optional[Sequence[str]] = None) -> List[str]:
    with open(path) as fp:
        labels = [line.rstrip("\n") for line in fp]
    while labels and labels[-1] == "":
        labels.pop()
    if not labels:
        raise MetricsError(f"{path}: empty label file")
    if label_set is not None:
        allowed = set(label_set)
        for lineno, label in enumerate(labels, start=1):
            if label not in allowed:
                raise MetricsError(f"{path}:{lineno}: unknown class name {label!r}")
    return labels


def write_label_file(path, labels: Sequence[str]) -> None:
    with open(path, "w") as fp:
        for label in labels:
            fp.write(f"{label}\n")


def evaluate(pred_file, gt_file, label_set: Optional[Sequence[str]] = None,
             thresholds: Sequence[float] = DEFAULT_F1_THRESHOLDS,
             strict: bool = False) -> MetricsReport:
    """Evaluate a prediction label file against a ground-truth label file."""
    pred = read_label_file(pred_file, label_set)
    gt = read_label_file(gt_file, label_set)
    if len(pred) != len(gt):
        raise MetricsError(
            f"frame count mismatch: {pred_file} has {len(pred)}, {gt_file} has {len(gt)}"
        )
    return evaluate_sequences(pred, gt, thresholds=thresholds, strict=strict)
