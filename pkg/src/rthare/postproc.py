"""Prediction refinement: boundary regression plus threshold filtering.

Frame-wise class probabilities drive a boundary detector (peaks of the L2
distance between mean probability vectors before/after each frame); the
labels between consecutive boundaries are unified to the span's majority
label; segments that are too short or too low-confidence are then
absorbed into their longer neighbor until a fixpoint. The combination
resolves over-segmentation without deleting any frames: the output always
covers exactly [0, T).

Labels here are integer class ids matching the probability columns.
All functions are pure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .metrics import MetricsError, Segment, expand_segments, merge_segments

__all__ = [
    "PostprocConfig",
    "detect_boundaries",
    "boundary_regress",
    "threshold_filter",
    "refine",
    "segment_confidences",
    "as_prob_series",
    "read_probs_csv",
    "write_probs_csv",
]


@dataclass
class PostprocConfig:
    window: int = 8
    thresh: float = 0.35
    min_gap: Optional[int] = None   # defaults to window
    min_dur: Optional[int] = None   # defaults to window
    min_conf: float = 0.4

    def __post_init__(self):
        if self.window < 1:
            raise MetricsError(f"window must be >= 1, got {self.window}")
        if not 0 < self.thresh < 1:
            raise MetricsError(f"thresh must be in (0, 1), got {self.thresh}")
        if self.min_gap is None:
            self.min_gap = self.window
        if self.min_dur is None:
            self.min_dur = self.window

    @classmethod
    def for_fps(cls, fps: float, **kwargs) -> "PostprocConfig":
        """Window scaled to the frame rate: 8 frames at 30 FPS, floor 2."""
        return cls(window=max(2, round(8 * fps / 30.0)), **kwargs)


def as_prob_series(probs) -> np.ndarray:
    """Validate a [T, C] per-frame probability matrix (rows sum to 1)."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MetricsError(f"probability series must be [T, C], got shape {arr.shape}")
    if np.any(arr < -1e-9) or np.any(arr > 1 + 1e-9):
        raise MetricsError("probabilities must lie in [0, 1]")
    sums = arr.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-5)[0]
    if bad.size:
        raise MetricsError(f"probability row {bad[0]} sums to {sums[bad[0]]:.6f}, not 1")
    return arr


def detect_boundaries(probs, window: int, thresh: float, min_gap: int) -> List[int]:
    """Frame indices where the windowed mean probability shifts sharply.

    The score at frame b is the L2 distance between the mean probability
    vectors of [b-window, b) and [b, b+window); local maxima above thresh
    become boundaries, and boundaries closer than min_gap collapse to the
    higher-scoring one (ties keep the earlier).
    """
    if window < 1:
        raise MetricsError(f"window must be >= 1, got {window}")
    if not 0 < thresh < 1:
        raise MetricsError(f"thresh must be in (0, 1), got {thresh}")
    arr = as_prob_series(probs)
    t = arr.shape[0]
    if t < 2 * window:
        return []

    csum = np.vstack([np.zeros((1, arr.shape[1])), np.cumsum(arr, axis=0)])
    positions = np.arange(window, t - window + 1)
    before = (csum[positions] - csum[positions - window]) / window
    after = (csum[positions + window] - csum[positions]) / window
    scores = np.linalg.norm(after - before, axis=1)

    candidates = []
    for i, b in enumerate(positions):
        left = scores[i - 1] if i > 0 else -np.inf
        right = scores[i + 1] if i + 1 < len(scores) else -np.inf
        if scores[i] > thresh and scores[i] > left and scores[i] >= right:
            candidates.append((int(b), float(scores[i])))

    # collapse near-coincident boundaries to the strongest one
    changed = True
    while changed and len(candidates) > 1:
        changed = False
        for i in range(len(candidates) - 1):
            (b1, s1), (b2, s2) = candidates[i], candidates[i + 1]
            if b2 - b1 < min_gap:
                del candidates[i if s2 > s1 else i + 1]
                changed = True
                break
    return [b for b, _ in candidates]


def _majority_label(span_labels: np.ndarray, span_probs: Optional[np.ndarray]) -> int:
    counts = np.bincount(span_labels)
    top = counts.max()
    tied = np.nonzero(counts == top)[0]
    if len(tied) == 1 or span_probs is None:
        return int(tied[0])
    # break ties by higher mean probability, then lower class id
    means = [span_probs[:, c].mean() if c < span_probs.shape[1] else -1.0 for c in tied]
    best = max(means)
    for c, m in zip(tied, means):
        if m == best:
            return int(c)
    return int(tied[0])


def boundary_regress(labels, boundaries: Sequence[int],
                     probs=None) -> np.ndarray:
    """Unify each inter-boundary span to its majority label.

    Ties go to the label with the higher mean probability over the span
    (when probabilities are supplied), then to the lower class id.
    """
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1 or lab.size == 0:
        raise MetricsError(f"labels must be a non-empty 1-d sequence, got shape {lab.shape}")
    if np.any(lab < 0):
        raise MetricsError("labels must be non-negative class ids")
    t = lab.size
    bounds = sorted(set(int(b) for b in boundaries))
    if bounds and (bounds[0] < 0 or bounds[-1] >= t):
        raise MetricsError(f"boundaries {bounds} outside [0, {t})")
    parr = None if probs is None else as_prob_series(probs)
    out = lab.copy()
    edges = [0] + [b for b in bounds if 0 < b < t] + [t]
    for start, end in zip(edges, edges[1:]):
        if end <= start:
            continue
        span_probs = None if parr is None else parr[start:end]
        out[start:end] = _majority_label(lab[start:end], span_probs)
    return out


def segment_confidences(labels, probs) -> List[Segment]:
    """Merge labels into segments with mean max-probability confidences."""
    lab = np.asarray(labels, dtype=np.int64)
    parr = as_prob_series(probs)
    if parr.shape[0] != lab.size:
        raise MetricsError(f"labels ({lab.size}) and probabilities ({parr.shape[0]}) disagree")
    frame_conf = parr.max(axis=1)
    segments = merge_segments(lab.tolist())
    for seg in segments:
        seg.confidence = float(frame_conf[seg.start:seg.end].mean())
    return segments


def threshold_filter(segments: Sequence[Segment], min_dur: int,
                     min_conf: float) -> List[Segment]:
    """Absorb short or low-confidence segments into their longer neighbor.

    Violating segments merge into the adjacent neighbor with the longer
    duration (ties take the earlier one); confidences combine as
    duration-weighted means. Repeats to a fixpoint; a single remaining
    segment is always kept. The result still covers the input range.
    """
    segs = [Segment(s.label, s.start, s.end, s.confidence) for s in segments]
    if not segs:
        raise MetricsError("empty segment list")

    def coalesce(items: List[Segment]) -> List[Segment]:
        out = [items[0]]
        for seg in items[1:]:
            prev = out[-1]
            if seg.label == prev.label and seg.start == prev.end:
                out[-1] = _merged(prev, seg)
            else:
                out.append(seg)
        return out

    def _merged(a: Segment, b: Segment) -> Segment:
        if np.isnan(a.confidence) or np.isnan(b.confidence):
            conf = float("nan")
        else:
            conf = (a.confidence * a.duration + b.confidence * b.duration) / (
                a.duration + b.duration)
        return Segment(a.label, a.start, b.end, conf)

    def violates(seg: Segment) -> bool:
        too_short = seg.duration < min_dur
        too_weak = (not np.isnan(seg.confidence)) and seg.confidence < min_conf
        return too_short or too_weak

    segs = coalesce(segs)
    while len(segs) > 1:
        victim_idx = next((i for i, s in enumerate(segs) if violates(s)), None)
        if victim_idx is None:
            break
        i = victim_idx
        if i == 0:
            target = 1
        elif i == len(segs) - 1:
            target = i - 1
        else:
            target = i - 1 if segs[i - 1].duration >= segs[i + 1].duration else i + 1
        lo, hi = min(i, target), max(i, target)
        victim, keeper = segs[i], segs[target]
        # merged label from the longer of the pair; equal lengths keep the
        # earlier segment's label
        if keeper.duration > victim.duration:
            label = keeper.label
        elif victim.duration > keeper.duration:
            label = victim.label
        else:
            label = segs[lo].label
        absorbed = Segment(label, segs[lo].start, segs[hi].end,
                           _merged(segs[lo], segs[hi]).confidence)
        segs = segs[:lo] + [absorbed] + segs[hi + 1:]
        segs = coalesce(segs)
    return segs


def refine(labels, probs, cfg: PostprocConfig) -> np.ndarray:
    """Boundary regression plus threshold filtering over one sequence.

    detect boundaries -> unify spans to majority labels -> merge into
    segments -> absorb short/weak segments -> expand back to frames. The
    output covers exactly [0, T) and the transform is idempotent for a
    fixed configuration.
    """
    lab = np.asarray(labels, dtype=np.int64)
    parr = as_prob_series(probs)
    if parr.shape[0] != lab.size:
        raise MetricsError(f"labels ({lab.size}) and probabilities ({parr.shape[0]}) disagree")
    if lab.size == 1:
        return lab.copy()
    boundaries = detect_boundaries(parr, cfg.window, cfg.thresh, cfg.min_gap)
    regressed = boundary_regress(lab, boundaries, parr)
    segments = segment_confidences(regressed, parr)
    filtered = threshold_filter(segments, cfg.min_dur, cfg.min_conf)
    return np.asarray(expand_segments(filtered), dtype=np.int64)


# ---------------------------------------------------------------------------
# Probability CSV: header row of class names, one row per frame


def write_probs_csv(path, probs, class_names: Sequence[str]) -> None:
    arr = as_prob_series(probs)
    if arr.shape[1] != len(class_names):
        raise MetricsError(
            f"{arr.shape[1]} probability columns vs {len(class_names)} class names")
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(class_names)
        for row in arr:
            writer.writerow([f"{v:.9g}" for v in row])


def read_probs_csv(path) -> Tuple[np.ndarray, List[str]]:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{path}: empty probability file") from None
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise MetricsError(f"{path}: no probability rows")
    return as_prob_series(np.asarray(rows)), list(header)
