"""Dense tensors with reverse-mode automatic differentiation.

The tensor type is a thin immutable wrapper around a numpy array (f32 or
f64) plus the operations a small convolutional network needs: conv2d,
group normalization, ReLU, residual addition, global average pooling,
pairwise feature correlation, channel concatenation and the reductions
used for losses. Every operation validates shapes, refuses non-finite
outputs and, when a :class:`GradientTape` is active, records a node with
a hand-written backward rule.

Operations are pure functions and safe to call concurrently; a tape is
single-threaded state and must not be shared between threads.
"""

from __future__ import annotations

import struct
import threading
from typing import BinaryIO, Callable, Iterable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "GradientTape",
    "backward",
    "TensorError",
    "DimensionError",
    "ConfigError",
    "NumericsError",
    "TapeError",
    "conv2d_raw",
    "group_norm_raw",
    "relu",
    "relu_pattern_capture",
    "add",
    "multiply",
    "scale",
    "tensor_sum",
    "tensor_mean",
    "mse",
    "global_avg_pool",
    "correlate_maps",
    "concat_channels",
    "take_frame",
    "save_tensor",
    "load_tensor",
    "write_tensor",
    "read_tensor",
]


class TensorError(Exception):
    """Base class for tensor-layer failures."""


class DimensionError(TensorError):
    """Shapes of the operands do not fit the operation."""


class ConfigError(TensorError):
    """Invalid layer or operation configuration."""


class NumericsError(TensorError):
    """An operation produced (or was given) non-finite values."""


class TapeError(TensorError):
    """Gradient tape misuse (non-scalar loss, repeated backward, ...)."""


_DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def _np_dtype(dtype: Union[str, np.dtype, type]) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ConfigError(f"unsupported dtype {dtype!r}; expected 'f32' or 'f64'")
        return np.dtype(_DTYPES[dtype])
    d = np.dtype(dtype)
    if d not in _DTYPE_NAMES:
        raise ConfigError(f"unsupported dtype {d}; expected float32 or float64")
    return d


class Tensor:
    """Immutable dense N-d array of f32 or f64 scalars, row-major.

    The constructor copies array inputs, so the caller's buffer is never
    frozen or aliased. Internal code passes ``_own=True`` with freshly
    allocated arrays to skip the copy.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype: Union[str, np.dtype, None] = None,
                 _validate: bool = True, _own: bool = False):
        if isinstance(data, Tensor):
            data = data.data
            _own = False
        if dtype is not None:
            target = _np_dtype(dtype)
        elif isinstance(data, np.ndarray) and data.dtype in _DTYPE_NAMES:
            target = data.dtype
        else:
            # f32 is the production default for lists/scalars/other dtypes
            target = np.dtype(np.float32)
        arr = np.asarray(data, dtype=target)
        if arr is data and not _own:
            arr = arr.copy()
        if _validate and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = self._writeable()
        object.__setattr__(self, "data", arr)

    @staticmethod
    def _writeable() -> bool:
        return False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    def astype(self, dtype: Union[str, np.dtype]) -> "Tensor":
        return Tensor(self.data.astype(_np_dtype(dtype)), _validate=False, _own=True)

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """Trainable tensor; the optimizer may replace its contents in place.

    Mutation via :meth:`assign` is a training-loop-only operation and is
    not part of the concurrent-read contract of plain tensors.
    """

    __slots__ = ("name",)

    def __init__(self, data, dtype=None, name: str = ""):
        super().__init__(data, dtype=dtype)
        object.__setattr__(self, "name", name)

    @staticmethod
    def _writeable() -> bool:
        return True

    def assign(self, new_data: np.ndarray) -> None:
        arr = np.asarray(new_data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise DimensionError(
                f"assign shape {arr.shape} does not match parameter shape {self.data.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values assigned to parameter {self.name!r}")
        self.data[...] = arr


# ---------------------------------------------------------------------------
# Gradient tape


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> Optional["GradientTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradientTape:
    """Records the forward operation graph for one reverse pass.

    Usage::

        with GradientTape() as tape:
            out = forward(...)
            loss = mse(out, target)
        grads = backward(tape, loss)   # {Parameter: ndarray}

    A tape may be consumed by :func:`backward` exactly once; a second
    call raises :class:`TapeError`.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("gradient tapes must be exited in LIFO order")
        stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        self._nodes.append(_Node(out, inputs, backward_fn))

    def grad_of(self, t: Tensor) -> Optional[np.ndarray]:
        """Gradient of the last backward's loss w.r.t. any recorded tensor."""
        return self._grads.get(id(t))

    def _run_backward(self, loss: Tensor) -> dict:
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new forward pass")
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._consumed = True
        grads = self._grads
        grads[id(loss)] = np.ones((), dtype=loss.data.dtype).reshape(loss.shape)
        params: dict[int, Parameter] = {}
        for node in reversed(self._nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for t, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                if ig.shape != t.data.shape:
                    raise TapeError(
                        f"backward produced gradient of shape {ig.shape} for input of shape {t.shape}"
                    )
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if isinstance(t, Parameter):
                    params[key] = t
        return {p: grads[key] for key, p in params.items()}


def backward(tape: GradientTape, loss: Tensor) -> dict:
    """Reverse pass: gradients of a scalar loss for every parameter used.

    Returns a mapping ``{Parameter: ndarray}`` covering each parameter
    that participated in the recorded forward pass; every gradient has
    the parameter's shape.
    """
    return tape._run_backward(loss)


# ---------------------------------------------------------------------------
# Operation plumbing


def _finish(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericsError(f"non-finite values in output of {op}")
    t = Tensor(out, _validate=False, _own=True)
    tape = _active_tape()
    if tape is not None:
        tape.record(t, inputs, backward_fn)
    return t


def _check_same_dtype(op: str, *tensors: Tensor) -> np.dtype:
    d = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != d:
            raise ConfigError(f"{op}: mixed dtypes {[t.dtype for t in tensors]}")
    return d


# ---------------------------------------------------------------------------
# Convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols.reshape(c * kh * kw, ho * wo)


def _col2im(grad_cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    gp = np.zeros((c, hp, wp), dtype=grad_cols.dtype)
    gc = grad_cols.reshape(c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gp[:, i : i + ho * stride : stride, j : j + wo * stride : stride] += gc[:, i, j]
    return gp


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, padding : padding + h, padding : padding + w] = x
    return xp


def conv2d_raw(x: Tensor, weight: Tensor, bias: Optional[Tensor],
               stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation convolution (no kernel flip) over [C,H,W] or [N,C,H,W].

    Batched inputs run the single-image path per sample, so batching is
    bit-identical to per-sample calls.
    """
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv2d: padding must be >= 0, got {padding}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be [out,in,kh,kw], got {weight.shape}")
    if bias is None:
        _check_same_dtype("conv2d", x, weight)
    else:
        _check_same_dtype("conv2d", x, weight, bias)
    out_ch, in_ch, kh, kw = weight.shape
    if kh < 1 or kw < 1:
        raise ConfigError(f"conv2d: kernel dims must be >= 1, got {kh}x{kw}")
    if bias is not None and bias.shape != (out_ch,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match out_ch={out_ch}")

    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise DimensionError(f"conv2d: input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    xs = x.data if batched else x.data[None]
    n, c, h, w = xs.shape
    if c != in_ch:
        raise DimensionError(
            f"conv2d: input channels {tuple(xs.shape[1:])} do not match layer in_ch "
            f"(weight {tuple(weight.shape)})"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1 or h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} stride {stride} pad {padding} leaves no output "
            f"for input {x.shape}"
        )

    w2 = weight.data.reshape(out_ch, in_ch * kh * kw)
    tape_on = _active_tape() is not None
    out = np.empty((n, out_ch, ho, wo), dtype=xs.dtype)
    saved_cols = [] if tape_on else None
    for s in range(n):
        cols = _im2col(_pad_hw(xs[s], padding), kh, kw, stride, ho, wo)
        y = w2 @ cols
        if bias is not None:
            y = y + bias.data[:, None]
        out[s] = y.reshape(out_ch, ho, wo)
        if tape_on:
            saved_cols.append(cols)
    out_arr = out if batched else out[0]

    def bwd(g: np.ndarray):
        gs = g if batched else g[None]
        grad_w2 = np.zeros_like(w2)
        grad_x = np.empty_like(xs)
        hp, wp = h + 2 * padding, w + 2 * padding
        for s2 in range(n):
            gflat = gs[s2].reshape(out_ch, ho * wo)
            grad_w2 += gflat @ saved_cols[s2].T
            gcols = w2.T @ gflat
            gpad = _col2im(gcols, in_ch, hp, wp, kh, kw, stride, ho, wo)
            grad_x[s2] = gpad[:, padding : padding + h, padding : padding + w]
        grad_w = grad_w2.reshape(weight.shape)
        grad_b = None
        if bias is not None:
            grad_b = gs.sum(axis=(0, 2, 3))
        return (grad_x if batched else grad_x[0], grad_w, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd_wrap(g):
        gx, gw, gb = bwd(g)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _finish("conv2d", out_arr, inputs, bwd_wrap)


# ---------------------------------------------------------------------------
# Normalization and activation


def group_norm_raw(x: Tensor, gamma: Tensor, beta: Tensor,
                   groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization over [C,H,W] or [N,C,H,W] (per-sample statistics)."""
    _check_same_dtype("group_norm", x, gamma, beta)
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise DimensionError(f"group_norm: input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    xs = x.data if batched else x.data[None]
    n, c, h, w = xs.shape
    if groups < 1 or c % groups != 0:
        raise ConfigError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"group_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match C={c}"
        )
    gsize = (c // groups) * h * w
    xg = xs.reshape(n, groups, gsize)
    mean = xg.mean(axis=2, keepdims=True)
    xc = xg - mean
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xs.dtype))
    xhat = (xc * inv).reshape(n, c, h, w)
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out_arr = out if batched else out[0]

    def bwd(g: np.ndarray):
        gs = g if batched else g[None]
        grad_gamma = (gs * xhat).sum(axis=(0, 2, 3))
        grad_beta = gs.sum(axis=(0, 2, 3))
        dxhat = (gs * gamma.data[None, :, None, None]).reshape(n, groups, gsize)
        xhat_g = xhat.reshape(n, groups, gsize)
        # d/dx of (x - mean) * inv, with mean and var functions of x
        dvar_term = (dxhat * xhat_g).mean(axis=2, keepdims=True)
        dmean_term = dxhat.mean(axis=2, keepdims=True)
        dx = inv * (dxhat - dmean_term - xhat_g * dvar_term)
        dx = dx.reshape(n, c, h, w)
        return (dx if batched else dx[0], grad_gamma, grad_beta)

    return _finish("group_norm", out_arr, (x, gamma, beta), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    sinks = getattr(_tls, "relu_sinks", None)
    if sinks:
        h = hash(mask.tobytes())
        for sink in sinks:
            sink.append(h)
    out = np.where(mask, x.data, x.data.dtype.type(0))

    def bwd(g: np.ndarray):
        return (np.where(mask, g, g.dtype.type(0)),)

    return _finish("relu", out, (x,), bwd)


class relu_pattern_capture:
    """Collect a signature of every ReLU activation pattern in scope.

    Central finite differences only measure a derivative where the network
    is differentiable; comparing the signatures of two perturbed forward
    passes detects activation-pattern flips so gradient checks can skip
    those coordinates.
    """

    def __init__(self):
        self.hashes: list = []

    def __enter__(self) -> "relu_pattern_capture":
        sinks = getattr(_tls, "relu_sinks", None)
        if sinks is None:
            sinks = []
            _tls.relu_sinks = sinks
        sinks.append(self.hashes)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tls.relu_sinks.remove(self.hashes)

    @property
    def signature(self) -> tuple:
        return tuple(self.hashes)


# ---------------------------------------------------------------------------
# Elementwise / reductions


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g: np.ndarray):
        return (g, g)

    return _finish("add", out, (a, b), bwd)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("multiply", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"multiply: shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def bwd(g: np.ndarray):
        return (g * b.data, g * a.data)

    return _finish("multiply", out, (a, b), bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.data.dtype.type(factor)
    out = x.data * f

    def bwd(g: np.ndarray):
        return (g * f,)

    return _finish("scale", out, (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g: np.ndarray):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True),)

    return _finish("sum", out, (x,), bwd)


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.dtype.type(x.size)
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def bwd(g: np.ndarray):
        return ((np.broadcast_to(g, x.shape) / n).astype(x.data.dtype, copy=True),)

    return _finish("mean", out, (x,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared element difference, as a scalar tensor."""
    _check_same_dtype("mse", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = a.data.dtype.type(a.size)
    out = np.asarray((diff * diff).mean(), dtype=a.data.dtype)

    def bwd(g: np.ndarray):
        base = (2.0 / n) * diff * g
        return (base, -base)

    return _finish("mse", out, (a, b), bwd)


# ---------------------------------------------------------------------------
# Pooling, correlation, concatenation


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial plane of each channel: [C,H,W] -> [C]."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool: input must be [C,H,W], got {x.shape}")
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2))
    inv = x.data.dtype.type(1.0 / (h * w))

    def bwd(g: np.ndarray):
        return (np.broadcast_to(g[:, None, None] * inv, (c, h, w)).astype(x.data.dtype, copy=True),)

    return _finish("global_avg_pool", out, (x,), bwd)


def correlate_maps(fa: Tensor, fb: Tensor, corr_scale: float) -> Tensor:
    """All-pairs scaled dot products of the position vectors of two feature maps.

    out[p, qy, qx] = corr_scale * <fa[:, p], fb[:, qy, qx]> with the channel
    index p unraveled over fa's positions.
    """
    _check_same_dtype("correlate", fa, fb)
    if fa.shape != fb.shape or fa.ndim != 3:
        raise DimensionError(f"correlate: need matching [D,h,w] maps, got {fa.shape} vs {fb.shape}")
    if not corr_scale > 0:
        raise ConfigError(f"correlate: scale must be > 0, got {corr_scale}")
    d, h, w = fa.shape
    s = fa.data.dtype.type(corr_scale)
    a = fa.data.reshape(d, h * w)
    b = fb.data.reshape(d, h * w)
    out = (s * (a.T @ b)).reshape(h * w, h, w)

    def bwd(g: np.ndarray):
        gm = g.reshape(h * w, h * w)
        ga = s * (b @ gm.T)
        gb = s * (a @ gm)
        return (ga.reshape(d, h, w), gb.reshape(d, h, w))

    return _finish("correlate", out, (fa, fb), bwd)


def take_frame(x: Tensor, index: int) -> Tensor:
    """Select one leading-axis slice: [N, ...] -> [...]."""
    if x.ndim < 2:
        raise DimensionError(f"take_frame: need a batched tensor, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise DimensionError(f"take_frame: index {index} out of range for shape {x.shape}")
    out = x.data[index].copy()

    def bwd(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _finish("take_frame", out, (x,), bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate [C,H,W] tensors along the channel axis, order preserved."""
    ts = list(tensors)
    if not ts:
        raise DimensionError("concat_channels: empty input list")
    _check_same_dtype("concat_channels", *ts)
    spatial = ts[0].shape[1:]
    for t in ts:
        if t.ndim != 3 or t.shape[1:] != spatial:
            raise DimensionError(
                f"concat_channels: mismatched shapes {[t.shape for t in ts]}"
            )
    sizes = [t.shape[0] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=0)
    offsets = np.cumsum([0] + sizes)

    def bwd(g: np.ndarray):
        return tuple(g[offsets[i] : offsets[i + 1]].copy() for i in range(len(ts)))

    return _finish("concat_channels", out, ts, bwd)


# ---------------------------------------------------------------------------
# RTT1 tensor file format
#
# magic 'RTT1' | u32 LE version=1 | u8 dtype (0=f32, 1=f64) | u32 LE ndim
# | u32 LE dims[ndim] | raw little-endian scalars, row-major.

_MAGIC = b"RTT1"
_VERSION = 1
_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(fp: BinaryIO, t: Tensor) -> None:
    fp.write(_MAGIC)
    fp.write(struct.pack("<I", _VERSION))
    fp.write(struct.pack("<B", _DTYPE_CODES[t.dtype]))
    fp.write(struct.pack("<I", t.ndim))
    for dim in t.shape:
        fp.write(struct.pack("<I", dim))
    le = t.data.astype("<f4" if t.dtype == "f32" else "<f8", copy=False)
    fp.write(le.tobytes())


def read_tensor(fp: BinaryIO) -> Tensor:
    magic = fp.read(4)
    if magic != _MAGIC:
        raise ConfigError(f"bad tensor file magic {magic!r}; expected {_MAGIC!r}")
    (version,) = struct.unpack("<I", fp.read(4))
    if version != _VERSION:
        raise ConfigError(f"unsupported tensor file version {version}")
    (code,) = struct.unpack("<B", fp.read(1))
    if code not in _CODE_DTYPES:
        raise ConfigError(f"unknown dtype code {code}")
    (ndim,) = struct.unpack("<I", fp.read(4))
    dims = struct.unpack(f"<{ndim}I", fp.read(4 * ndim)) if ndim else ()
    count = int(np.prod(dims)) if dims else 1
    dt = _CODE_DTYPES[code]
    raw = fp.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ConfigError("truncated tensor file")
    arr = np.frombuffer(raw, dtype=dt).reshape(dims)
    return Tensor(arr.astype(np.float32 if code == 0 else np.float64))


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, t)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fp:
        return read_tensor(fp)
