"""Integrated motion feature extractor.

One network maps a clip of K consecutive frames directly to a motion
feature vector, with no optical flow anywhere in the pass:

1. a batched feature encoder (stem + 6 residual blocks) downsamples every
   frame x8 into [K, D, H/8, W/8] content maps in a single shared-weight
   pass;
2. each consecutive map pair is correlated into an all-pairs dot-product
   volume at the single 1/8 scale (no multi-resolution pyramid);
3. the K-1 volumes are channel-concatenated;
4. five conv layers compress the stacked volumes and encode them down;
5. nine residual blocks plus global average pooling produce the final
   feature vector.

Weights are immutable after load; extraction is a pure function, so
concurrent extraction over different clips is safe.
"""

from __future__ import annotations

import json
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .layers import ConvLayer, GroupNorm, ResidualBlock, conv2d, norm_forward, residual_forward
from .tensor import (
    ConfigError,
    DimensionError,
    Parameter,
    Tensor,
    TensorError,
    concat_channels,
    correlate_maps,
    global_avg_pool,
    load_tensor,
    relu,
    save_tensor,
    take_frame,
)

__all__ = [
    "IMFEConfig",
    "IMFENetwork",
    "PROFILES",
    "batched_feature_encode",
    "correlate",
    "concat_volumes",
    "extract_motion_feature",
    "normalize_pixels",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class IMFEConfig:
    """Extractor dimensions.

    clip_len: frames per clip (K); height/width: input pixels, multiples
    of 8; width_base: channel width D of the encoded per-frame maps;
    feature_len: output vector length (8*D in the full profile).
    """

    clip_len: int
    height: int
    width: int
    width_base: int
    feature_len: int
    dtype: str = "f32"

    def __post_init__(self):
        if self.clip_len < 2:
            raise ConfigError(f"clip_len must be >= 2, got {self.clip_len}")
        if self.height % 8 or self.width % 8:
            raise ConfigError(
                f"input dims must be multiples of 8, got {self.height}x{self.width}"
            )
        if self.width_base % 4 or self.width_base < 4:
            raise ConfigError(f"width_base must be a positive multiple of 4, got {self.width_base}")
        if self.feature_len < 1:
            raise ConfigError(f"feature_len must be positive, got {self.feature_len}")

    @property
    def map_height(self) -> int:
        return self.height // 8

    @property
    def map_width(self) -> int:
        return self.width // 8

    @property
    def volume_channels(self) -> int:
        return self.map_height * self.map_width

    @property
    def corr_scale(self) -> float:
        return 1.0 / math.sqrt(self.width_base)

    @classmethod
    def profile(cls, name: str, dtype: str = "f32") -> "IMFEConfig":
        if name not in PROFILES:
            raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
        base = PROFILES[name]
        return cls(base.clip_len, base.height, base.width, base.width_base,
                   base.feature_len, dtype=dtype)


PROFILES = {
    "full": IMFEConfig(clip_len=6, height=256, width=344, width_base=256, feature_len=2048),
    "tiny": IMFEConfig(clip_len=3, height=32, width=40, width_base=8, feature_len=32),
}


@dataclass
class _ConvNorm:
    conv: ConvLayer
    norm: GroupNorm

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield from self.conv.named_parameters(f"{prefix}.conv")
        yield from self.norm.named_parameters(f"{prefix}.norm")


def _conv_norm(in_ch, out_ch, kernel, rng, stride, padding, dtype, name) -> _ConvNorm:
    return _ConvNorm(
        conv=ConvLayer.create(in_ch, out_ch, kernel, rng, stride=stride, padding=padding,
                              dtype=dtype, name=f"{name}.conv"),
        norm=GroupNorm.create(out_ch, dtype=dtype, name=f"{name}.norm"),
    )


@dataclass
class IMFENetwork:
    """All weights of the extractor, grouped by stage."""

    config: IMFEConfig
    stem: _ConvNorm
    encoder_stages: List[List[ResidualBlock]]
    comp_enc: List[_ConvNorm]
    feature_stages: List[List[ResidualBlock]]

    # single correlation resolution, as a downsample factor (no pyramid)
    correlation_scales: Tuple[int, ...] = (8,)

    @classmethod
    def create(cls, config: IMFEConfig, seed: int = 0) -> "IMFENetwork":
        rng = np.random.default_rng(seed)
        d = config.width_base
        f = config.feature_len
        dt = config.dtype

        stem = _conv_norm(3, d // 4, 7, rng, stride=2, padding=3, dtype=dt, name="stem")

        # three stages of two residual blocks; stage 1 keeps the stem's
        # resolution, stages 2-3 downsample, for an overall x8 factor
        enc_widths = [d // 4, d // 2, d]
        enc_strides = [1, 2, 2]
        encoder_stages = []
        in_ch = d // 4
        for si, (width, stride) in enumerate(zip(enc_widths, enc_strides), start=1):
            blocks = []
            for bi in range(2):
                blocks.append(ResidualBlock.create(
                    in_ch, width, rng, stride=stride if bi == 0 else 1,
                    dtype=dt, name=f"encoder.s{si}.b{bi + 1}"))
                in_ch = width
            encoder_stages.append(blocks)

        # five conv layers: two compress the stacked volumes, three encode
        vol_ch = (config.clip_len - 1) * config.volume_channels
        comp_enc = [
            _conv_norm(vol_ch, 4 * d, 1, rng, stride=1, padding=0, dtype=dt, name="comp_enc.c1"),
            _conv_norm(4 * d, 2 * d, 3, rng, stride=1, padding=1, dtype=dt, name="comp_enc.c2"),
            _conv_norm(2 * d, 2 * d, 3, rng, stride=2, padding=1, dtype=dt, name="comp_enc.c3"),
            _conv_norm(2 * d, 4 * d, 3, rng, stride=2, padding=1, dtype=dt, name="comp_enc.c4"),
            _conv_norm(4 * d, 4 * d, 3, rng, stride=1, padding=1, dtype=dt, name="comp_enc.c5"),
        ]

        # nine residual blocks in three stages of three
        feat_widths = [4 * d, f, f]
        feat_strides = [1, 2, 1]
        feature_stages = []
        in_ch = 4 * d
        for si, (width, stride) in enumerate(zip(feat_widths, feat_strides), start=1):
            blocks = []
            for bi in range(3):
                blocks.append(ResidualBlock.create(
                    in_ch, width, rng, stride=stride if bi == 0 else 1,
                    dtype=dt, name=f"features.s{si}.b{bi + 1}"))
                in_ch = width
            feature_stages.append(blocks)

        return cls(config=config, stem=stem, encoder_stages=encoder_stages,
                   comp_enc=comp_enc, feature_stages=feature_stages)

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        yield from self.stem.named_parameters("stem")
        for si, stage in enumerate(self.encoder_stages, start=1):
            for bi, block in enumerate(stage, start=1):
                yield from block.named_parameters(f"encoder.s{si}.b{bi}")
        for ci, layer in enumerate(self.comp_enc, start=1):
            yield from layer.named_parameters(f"comp_enc.c{ci}")
        for si, stage in enumerate(self.feature_stages, start=1):
            for bi, block in enumerate(stage, start=1):
                yield from block.named_parameters(f"features.s{si}.b{bi}")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]


@contextmanager
def _stage(name: str):
    """Attach the pipeline stage name to tensor-layer errors."""
    try:
        yield
    except TensorError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def normalize_pixels(frames: Tensor) -> Tensor:
    """Map raw [0, 255] pixel values to the network's [-1, 1] input range."""
    return Tensor(frames.data / np.asarray(127.5, dtype=frames.data.dtype) - 1.0)


def batched_feature_encode(frames: Tensor, net: IMFENetwork) -> Tensor:
    """Encode all K frames in one shared-weight pass: [K,3,H,W] -> [K,D,H/8,W/8].

    Per-frame results are bit-identical to encoding each frame alone;
    there is no cross-frame mixing before the correlation step.
    """
    cfg = net.config
    expected = (cfg.clip_len, 3, cfg.height, cfg.width)
    if frames.shape != expected:
        raise DimensionError(
            f"batched_feature_encode: clip shape {frames.shape} does not match config {expected}"
        )
    with _stage("batched_encoder"):
        h = relu(norm_forward(conv2d(frames, net.stem.conv), net.stem.norm))
        for stage in net.encoder_stages:
            for block in stage:
                h = residual_forward(h, block)
    return h


def correlate(fa: Tensor, fb: Tensor, scale: float) -> Tensor:
    """Correlation volume between two [D,h,w] maps.

    out[p, qy, qx] = scale * <fa[:, p], fb[:, qy, qx]>: the channel index
    enumerates positions of fa, the spatial axes positions of fb; shape
    [(h*w), h, w].
    """
    return correlate_maps(fa, fb, scale)


def concat_volumes(vols: Sequence[Tensor]) -> Tensor:
    """Channel-concatenate K-1 correlation volumes, pair order preserved."""
    vols = list(vols)
    if not vols:
        raise DimensionError("concat_volumes: need at least one volume")
    for v in vols:
        if v.ndim != 3 or v.shape[0] != v.shape[1] * v.shape[2]:
            raise DimensionError(
                f"concat_volumes: {v.shape} is not a correlation volume "
                f"(channels must equal h*w)"
            )
    return concat_channels(vols)


def extract_motion_feature(clip: Tensor, net: IMFENetwork,
                           trace: Optional[dict] = None) -> Tensor:
    """Full forward pass: clip [K,3,H,W] -> motion feature [feature_len].

    Deterministic for fixed weights and input. When ``trace`` is a dict it
    is filled with intermediate tensors/shapes for inspection (the
    correlation volumes and every motion-path shape).
    """
    cfg = net.config
    encoded = batched_feature_encode(clip, net)

    with _stage("correlation"):
        vols = []
        for i in range(cfg.clip_len - 1):
            fa = take_frame(encoded, i)
            fb = take_frame(encoded, i + 1)
            vols.append(correlate(fa, fb, cfg.corr_scale))

    with _stage("concatenation"):
        h = concat_volumes(vols)
    concat_shape = h.shape

    comp_shapes = []
    with _stage("compression_encoding"):
        for layer in net.comp_enc:
            h = relu(norm_forward(conv2d(h, layer.conv), layer.norm))
            comp_shapes.append(h.shape)

    feat_shapes = []
    with _stage("feature_encoder"):
        for stage_blocks in net.feature_stages:
            for block in stage_blocks:
                h = residual_forward(h, block)
                feat_shapes.append(h.shape)

    with _stage("pooling"):
        out = global_avg_pool(h)

    if trace is not None:
        trace["encoded_shape"] = encoded.shape
        trace["volumes"] = vols
        trace["volume_shapes"] = [v.shape for v in vols]
        trace["concat_shape"] = concat_shape
        trace["comp_enc_shapes"] = comp_shapes
        trace["feature_shapes"] = feat_shapes
        trace["output_shape"] = out.shape
        trace["motion_path_shapes"] = (
            [v.shape for v in vols] + [concat_shape] + comp_shapes + feat_shapes
        )
    return out


# ---------------------------------------------------------------------------
# Weight checkpoints: a directory of tensor files plus a JSON manifest


_MANIFEST = "manifest.json"


def save_checkpoint(net: IMFENetwork, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    tensors = {}
    for name, param in net.named_parameters():
        fname = name.replace(".", "_") + ".rtt1"
        save_tensor(os.path.join(directory, fname), param)
        tensors[name] = fname
    manifest = {
        "format": "rthare-checkpoint",
        "version": 1,
        "config": asdict(net.config),
        "tensors": tensors,
    }
    with open(os.path.join(directory, _MANIFEST), "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)


def load_checkpoint(directory) -> IMFENetwork:
    manifest_path = os.path.join(directory, _MANIFEST)
    if not os.path.isfile(manifest_path):
        raise ConfigError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fp:
        manifest = json.load(fp)
    if manifest.get("format") != "rthare-checkpoint":
        raise ConfigError(f"unrecognized checkpoint format in {manifest_path}")
    config = IMFEConfig(**manifest["config"])
    net = IMFENetwork.create(config, seed=0)
    tensors = manifest["tensors"]
    for name, param in net.named_parameters():
        if name not in tensors:
            raise ConfigError(f"checkpoint missing tensor {name!r}")
        loaded = load_tensor(os.path.join(directory, tensors[name]))
        if loaded.shape != param.shape:
            raise DimensionError(
                f"checkpoint tensor {name!r} has shape {loaded.shape}, expected {param.shape}"
            )
        param.assign(loaded.data.astype(param.data.dtype))
    return net
