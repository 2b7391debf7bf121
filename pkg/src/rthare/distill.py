"""Knowledge-distillation training for the motion feature extractor.

The student network learns to regress the feature vectors of a frozen
teacher under a mean-squared-error objective, averaged over the clips of
the training manifest. The desk-scale teacher is a fixed-seed reference
network over stacked absolute frame differences (or precomputed target
features loaded from files); either way it is deterministic: the same
clip always yields the same target.

Optimization is AdamW (decoupled weight decay) with a step-decay learning
rate: the rate is multiplied by ``decay`` at every 1/N of the iterations
in each epoch (N = ``decay_points_per_epoch``).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .imfe import IMFEConfig, IMFENetwork, extract_motion_feature, save_checkpoint
from .layers import ConvLayer, GroupNorm, conv2d, norm_forward
from .tensor import (
    ConfigError,
    DimensionError,
    GradientTape,
    NumericsError,
    Parameter,
    Tensor,
    add,
    backward,
    global_avg_pool,
    load_tensor,
    mse as mse_op,
    relu,
    scale,
)

__all__ = [
    "AdamWParams",
    "TrainConfig",
    "TeacherOracle",
    "AdamW",
    "mse_loss",
    "lr_at",
    "train_step",
    "validate",
    "train",
    "load_manifest",
]


@dataclass(frozen=True)
class AdamWParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.9
    decay_points_per_epoch: int = 5
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    adamw: AdamWParams = field(default_factory=AdamWParams)

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.decay_points_per_epoch < 1:
            raise ConfigError("decay_points_per_epoch must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared element differences between two equal-length vectors."""
    if a.shape != b.shape:
        raise DimensionError(f"mse_loss: length mismatch {a.shape} vs {b.shape}")
    return mse_op(a, b)


def lr_at(iteration: int, iters_per_epoch: int, cfg: TrainConfig) -> float:
    """Step-decayed learning rate at a global iteration index.

    lr = lr0 * decay ** (completed intervals), where one interval is
    1/decay_points_per_epoch of an epoch; intervals keep accumulating
    across epochs.
    """
    if iters_per_epoch < cfg.decay_points_per_epoch:
        raise ConfigError(
            f"iters_per_epoch ({iters_per_epoch}) must be >= decay points per epoch "
            f"({cfg.decay_points_per_epoch})"
        )
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    completed = (iteration * cfg.decay_points_per_epoch) // iters_per_epoch
    return cfg.lr0 * cfg.decay ** completed


class TeacherOracle:
    """Deterministic target-feature source for distillation.

    ``frozen`` mode runs a fixed-seed reference network over the stacked
    absolute differences of consecutive frames; ``file`` mode returns
    precomputed per-clip feature tensors keyed by clip id.
    """

    def __init__(self, mode: str, feature_fn: Callable, feature_len: int):
        self.mode = mode
        self._feature_fn = feature_fn
        self.feature_len = feature_len

    @classmethod
    def frozen(cls, config: IMFEConfig, seed: int = 7919,
               output_scale: float = 1.0) -> "TeacherOracle":
        rng = np.random.default_rng(seed)
        in_ch = 3 * (config.clip_len - 1)
        mid = max(4, config.feature_len // 2)
        dt = config.dtype
        c1 = ConvLayer.create(in_ch, mid, 3, rng, stride=2, padding=1, dtype=dt, name="t.c1")
        n1 = GroupNorm.create(mid, dtype=dt, name="t.n1")
        c2 = ConvLayer.create(mid, config.feature_len, 3, rng, stride=2, padding=1,
                              dtype=dt, name="t.c2")
        n2 = GroupNorm.create(config.feature_len, dtype=dt, name="t.n2")

        def feature_fn(clip: Tensor, key=None) -> np.ndarray:
            data = clip.data
            if data.shape != (config.clip_len, 3, config.height, config.width):
                raise DimensionError(
                    f"teacher: clip shape {clip.shape} does not match config"
                )
            diffs = np.abs(np.diff(data, axis=0))         # [K-1, 3, H, W]
            stacked = Tensor(diffs.reshape(in_ch, config.height, config.width))
            h = relu(norm_forward(conv2d(stacked, c1), n1))
            h = relu(norm_forward(conv2d(h, c2), n2))
            return global_avg_pool(h).data * output_scale

        return cls("frozen_network", feature_fn, config.feature_len)

    @classmethod
    def from_files(cls, targets: Dict[str, str], feature_len: int) -> "TeacherOracle":
        cache: Dict[str, np.ndarray] = {}

        def feature_fn(clip: Tensor, key=None) -> np.ndarray:
            if key is None or key not in targets:
                raise ConfigError(f"file teacher has no target for clip {key!r}")
            if key not in cache:
                t = load_tensor(targets[key])
                if t.shape != (feature_len,):
                    raise DimensionError(
                        f"target feature {key!r} has shape {t.shape}, expected ({feature_len},)"
                    )
                cache[key] = t.data
            return cache[key]

        return cls("file", feature_fn, feature_len)

    def features(self, clip: Tensor, key=None) -> np.ndarray:
        return self._feature_fn(clip, key)


class AdamW:
    """AdamW with decoupled weight decay over a fixed parameter list."""

    def __init__(self, params: Sequence[Parameter], hyper: AdamWParams):
        self.params = list(params)
        self.hyper = hyper
        self._m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self._v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self._t = 0

    def step(self, grads: Dict[Parameter, np.ndarray], lr: float) -> None:
        h = self.hyper
        self._t += 1
        bc1 = 1.0 - h.beta1 ** self._t
        bc2 = 1.0 - h.beta2 ** self._t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(np.float64, copy=False)
            self._m[i] = h.beta1 * self._m[i] + (1.0 - h.beta1) * g
            self._v[i] = h.beta2 * self._v[i] + (1.0 - h.beta2) * (g * g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            update = m_hat / (np.sqrt(v_hat) + h.eps) + h.weight_decay * p.data
            p.assign(p.data - lr * update.astype(p.data.dtype))


def _batch_loss(batch: Sequence[Tuple[Tensor, Optional[str]]], student: IMFENetwork,
                teacher: TeacherOracle) -> Tensor:
    if not batch:
        raise ConfigError("empty batch")
    total = None
    for clip, key in batch:
        feat = extract_motion_feature(clip, student)
        target = Tensor(teacher.features(clip, key).astype(feat.data.dtype))
        loss = mse_loss(feat, target)
        total = loss if total is None else add(total, loss)
    return scale(total, 1.0 / len(batch))


def train_step(batch: Sequence[Tuple[Tensor, Optional[str]]], student: IMFENetwork,
               teacher: TeacherOracle, optimizer: AdamW, lr: float) -> float:
    """One AdamW update on the mean batch MSE; returns the batch loss.

    A non-finite intermediate aborts with a diagnostic naming the first
    offending stage (raised by the tensor layer, stage name attached).
    """
    with GradientTape() as tape:
        loss = _batch_loss(batch, student, teacher)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericsError("non-finite training loss")
    grads = backward(tape, loss)
    optimizer.step(grads, lr)
    return value


def validate(clips: Sequence[Tuple[Tensor, Optional[str]]], student: IMFENetwork,
             teacher: TeacherOracle) -> float:
    """Mean MSE over a clip set; no weight updates, deterministic."""
    if not clips:
        raise ConfigError("validate: empty clip set")
    total = 0.0
    for clip, key in clips:
        feat = extract_motion_feature(clip, student)
        target = teacher.features(clip, key).astype(feat.data.dtype)
        diff = feat.data - target
        total += float((diff * diff).mean())
    return total / len(clips)


# ---------------------------------------------------------------------------
# Manifest-driven training


def load_manifest(path) -> Tuple[List[Tuple[Tensor, str]], List[Tuple[Tensor, str]], Optional[Dict[str, str]]]:
    """Load a training manifest.

    JSON schema: ``{"train": [...], "val": [...]}`` where each entry is a
    clip tensor path or ``{"clip": path, "target": path}``. Targets, when
    present on every entry, select the file-mode teacher.
    """
    with open(path) as fp:
        spec = json.load(fp)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    targets: Dict[str, str] = {}
    have_targets = True

    def load_split(name):
        nonlocal have_targets
        clips = []
        for entry in spec.get(name, []):
            if isinstance(entry, str):
                clip_path, target_path = entry, None
            else:
                clip_path, target_path = entry["clip"], entry.get("target")
            clip_path = resolve(clip_path)
            clips.append((load_tensor(clip_path), clip_path))
            if target_path is None:
                have_targets = False
            else:
                targets[clip_path] = resolve(target_path)
        return clips

    train_clips = load_split("train")
    val_clips = load_split("val")
    if not train_clips:
        raise ConfigError(f"manifest {path} lists no training clips")
    return train_clips, val_clips, (targets if have_targets and targets else None)


@dataclass
class TrainResult:
    history: List[dict]
    best_val: float
    final_val: float
    iterations: int


def train(student: IMFENetwork, teacher: TeacherOracle,
          train_clips: Sequence[Tuple[Tensor, str]],
          val_clips: Sequence[Tuple[Tensor, str]],
          cfg: TrainConfig, out_dir=None, log_path=None,
          max_iters: Optional[int] = None,
          val_every: int = 20) -> TrainResult:
    """Distill the student against the teacher over the manifest clips.

    Writes a CSV log (iter, lr, train_loss, val_loss) and, when out_dir is
    given, ``checkpoint_best`` (lowest validation MSE) plus
    ``checkpoint_final``.
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = AdamW(student.parameters(), cfg.adamw)
    iters_per_epoch = max((len(train_clips) + cfg.batch_size - 1) // cfg.batch_size,
                          cfg.decay_points_per_epoch)
    total_iters = cfg.epochs * iters_per_epoch
    if max_iters is not None:
        total_iters = min(total_iters, max_iters)

    history: List[dict] = []
    best_val = float("inf")

    def run_validation(iteration):
        nonlocal best_val
        if not val_clips:
            return None
        v = validate(val_clips, student, teacher)
        if v < best_val:
            best_val = v
            if out_dir is not None:
                save_checkpoint(student, os.path.join(out_dir, "checkpoint_best"))
        return v

    iteration = 0
    val0 = run_validation(0)
    done = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_clips))
        for start in range(0, len(order), cfg.batch_size):
            if iteration >= total_iters:
                done = True
                break
            batch = [train_clips[i] for i in order[start:start + cfg.batch_size]]
            lr = lr_at(iteration, iters_per_epoch, cfg)
            loss = train_step(batch, student, teacher, optimizer, lr)
            iteration += 1
            val = run_validation(iteration) if iteration % val_every == 0 else None
            history.append({"iter": iteration, "lr": lr, "train_loss": loss,
                            "val_loss": val})
        if done:
            break

    final_val = run_validation(iteration)
    history.insert(0, {"iter": 0, "lr": lr_at(0, iters_per_epoch, cfg),
                       "train_loss": None, "val_loss": val0})
    if history and history[-1]["iter"] == iteration:
        history[-1]["val_loss"] = final_val

    if out_dir is not None:
        save_checkpoint(student, os.path.join(out_dir, "checkpoint_final"))
    if log_path is not None:
        write_training_log(log_path, history)
    return TrainResult(history=history, best_val=best_val,
                       final_val=final_val if final_val is not None else float("nan"),
                       iterations=iteration)


def write_training_log(path, history: List[dict]) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["iter", "lr", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([
                row["iter"],
                f"{row['lr']:.10g}",
                "" if row["train_loss"] is None else f"{row['train_loss']:.10g}",
                "" if row["val_loss"] is None else f"{row['val_loss']:.10g}",
            ])
