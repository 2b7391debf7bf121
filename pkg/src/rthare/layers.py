"""Network building blocks: conv layers, group norm, residual blocks.

Conventions (fixed across the package): convolutions are cross-correlations
with no kernel flip, normalization is per-sample group normalization with
8 groups wherever the channel count allows, activations are ReLU, conv
weights use Kaiming-uniform fan-in init with zero biases, and norm layers
start at gamma=1 / beta=0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from .tensor import (
    ConfigError,
    Parameter,
    Tensor,
    add,
    conv2d_raw,
    group_norm_raw,
    relu,
)

__all__ = [
    "ConvLayer",
    "GroupNorm",
    "ResidualBlock",
    "conv2d",
    "group_norm",
    "residual_forward",
    "group_count",
    "kaiming_uniform",
]


def kaiming_uniform(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator,
                    dtype: str = "f32") -> np.ndarray:
    """Kaiming-uniform fan-in init (ReLU gain): U(-b, b) with b = sqrt(6/fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    np_dtype = np.float32 if dtype == "f32" else np.float64
    u = rng.random(size=shape, dtype=np_dtype)
    return (u * 2.0 - 1.0) * np_dtype(bound)


def group_count(channels: int, preferred: int = 8) -> int:
    """Largest group count <= preferred that divides the channel count."""
    for g in range(min(preferred, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


@dataclass
class ConvLayer:
    """2D convolution parameters: weights [out_ch, in_ch, kh, kw] plus bias."""

    weight: Parameter
    bias: Optional[Parameter]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ConfigError(f"conv weight must be 4-d, got {self.weight.shape}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")

    @classmethod
    def create(cls, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
               stride: int = 1, padding: int = 0, use_bias: bool = True,
               dtype: str = "f32", name: str = "conv") -> "ConvLayer":
        fan_in = in_ch * kernel * kernel
        w = kaiming_uniform((out_ch, in_ch, kernel, kernel), fan_in, rng, dtype)
        weight = Parameter(w, name=f"{name}.weight")
        bias = None
        if use_bias:
            np_dtype = np.float32 if dtype == "f32" else np.float64
            bias = Parameter(np.zeros(out_ch, dtype=np_dtype), name=f"{name}.bias")
        return cls(weight=weight, bias=bias, stride=stride, padding=padding)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> Iterator[Parameter]:
        yield self.weight
        if self.bias is not None:
            yield self.bias

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Apply a convolution layer to a [C,H,W] or [N,C,H,W] tensor."""
    return conv2d_raw(x, layer.weight, layer.bias, layer.stride, layer.padding)


@dataclass
class GroupNorm:
    """Per-sample group normalization with learned per-channel affine."""

    gamma: Parameter
    beta: Parameter
    groups: int
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, groups: Optional[int] = None,
               dtype: str = "f32", name: str = "norm") -> "GroupNorm":
        g = group_count(channels) if groups is None else groups
        if channels % g != 0:
            raise ConfigError(f"{channels} channels not divisible by {g} groups")
        np_dtype = np.float32 if dtype == "f32" else np.float64
        return cls(
            gamma=Parameter(np.ones(channels, dtype=np_dtype), name=f"{name}.gamma"),
            beta=Parameter(np.zeros(channels, dtype=np_dtype), name=f"{name}.beta"),
            groups=g,
        )

    def parameters(self) -> Iterator[Parameter]:
        yield self.gamma
        yield self.beta

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize each channel group to zero mean / unit variance, then affine."""
    return group_norm_raw(x, gamma, beta, groups, eps)


def norm_forward(x: Tensor, norm: GroupNorm) -> Tensor:
    return group_norm_raw(x, norm.gamma, norm.beta, norm.groups, norm.eps)


@dataclass
class ResidualBlock:
    """Two 3x3 convs with group norm and an optional projection shortcut.

    out = relu(norm_b(conv_b(relu(norm_a(conv_a(x))))) + shortcut(x)) where
    the shortcut is identity, or a 1x1 strided projection (plus norm) when
    the block changes channel count or stride.
    """

    conv_a: ConvLayer
    norm_a: GroupNorm
    conv_b: ConvLayer
    norm_b: GroupNorm
    projection: Optional[ConvLayer] = None
    norm_p: Optional[GroupNorm] = None

    @classmethod
    def create(cls, in_ch: int, out_ch: int, rng: np.random.Generator,
               stride: int = 1, dtype: str = "f32", name: str = "block") -> "ResidualBlock":
        conv_a = ConvLayer.create(in_ch, out_ch, 3, rng, stride=stride, padding=1,
                                  dtype=dtype, name=f"{name}.conv_a")
        norm_a = GroupNorm.create(out_ch, dtype=dtype, name=f"{name}.norm_a")
        conv_b = ConvLayer.create(out_ch, out_ch, 3, rng, stride=1, padding=1,
                                  dtype=dtype, name=f"{name}.conv_b")
        norm_b = GroupNorm.create(out_ch, dtype=dtype, name=f"{name}.norm_b")
        projection = None
        norm_p = None
        if stride != 1 or in_ch != out_ch:
            projection = ConvLayer.create(in_ch, out_ch, 1, rng, stride=stride, padding=0,
                                          dtype=dtype, name=f"{name}.proj")
            norm_p = GroupNorm.create(out_ch, dtype=dtype, name=f"{name}.norm_p")
        return cls(conv_a, norm_a, conv_b, norm_b, projection, norm_p)

    @property
    def in_channels(self) -> int:
        return self.conv_a.in_channels

    def parameters(self) -> Iterator[Parameter]:
        for layer in (self.conv_a, self.norm_a, self.conv_b, self.norm_b,
                      self.projection, self.norm_p):
            if layer is not None:
                yield from layer.parameters()

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        parts = (("conv_a", self.conv_a), ("norm_a", self.norm_a),
                 ("conv_b", self.conv_b), ("norm_b", self.norm_b),
                 ("proj", self.projection), ("norm_p", self.norm_p))
        for sub, layer in parts:
            if layer is not None:
                yield from layer.named_parameters(f"{prefix}.{sub}")


def residual_forward(x: Tensor, block: ResidualBlock) -> Tensor:
    """Residual path plus shortcut, ReLU on the sum."""
    h = relu(norm_forward(conv2d(x, block.conv_a), block.norm_a))
    h = norm_forward(conv2d(h, block.conv_b), block.norm_b)
    if block.projection is not None:
        s = norm_forward(conv2d(x, block.projection), block.norm_p)
    else:
        s = x
    return relu(add(h, s))
