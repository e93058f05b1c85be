"""Layers of the base network: convolution, ReLU, max-pooling, dense, dropout.

Each layer comes as a ``*_forward`` returning ``(output, cache)`` and a
``*_backward`` consuming the cache, plus :func:`cnn_forward` /
:func:`cnn_backward` composing the full stack:

    input -> conv(5x5) -> relu -> pool -> conv(5x5) -> relu -> pool
          -> flatten -> dense -> relu -> dropout -> dense -> scores

Shape conventions: activations are ``[n, h, w, c]``, convolution kernels
``[kh, kw, in_ch, out_ch]``, dense weights ``[in_features, out_features]``.
Flattening between pool and dense is row-major over ``(h, w, channel)``.
The ReLU subgradient at exactly zero is taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels, tensor
from .errors import ShapeError, StateError
from .tensor import Rng

Padding = Literal["same", "valid"]
Mode = Literal["train", "eval"]


@dataclass
class Conv2dParams:
    kernels: np.ndarray  # [kh, kw, in_ch, out_ch]
    bias: np.ndarray  # [out_ch]
    stride: int = 1
    padding: Padding = "same"


@dataclass
class DenseParams:
    weight: np.ndarray  # [in_features, out_features]
    bias: np.ndarray  # [out_features]


@dataclass
class DropoutSpec:
    drop_prob: float
    mode: Mode

    def __post_init__(self):
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError(f"drop_prob must be in [0, 1), got {self.drop_prob}")


@dataclass
class ConvCache:
    padded: np.ndarray  # zero-padded forward input
    pad_top: int
    pad_left: int
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel_shape: tuple[int, ...]
    stride: int


@dataclass
class ReluCache:
    positive: np.ndarray  # bool mask of inputs > 0


@dataclass
class PoolCache:
    argy: np.ndarray
    argx: np.ndarray
    in_shape: tuple[int, ...]


@dataclass
class DenseCache:
    x: np.ndarray


@dataclass
class DropoutCache:
    mode: Mode
    keep_prob: float
    mask: np.ndarray | None  # None in eval mode


def _same_pad(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output extent and (before, after) zero padding for same-padding."""
    out = -(-extent // stride)  # ceil
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(x: np.ndarray, params: Conv2dParams) -> tuple[np.ndarray, ConvCache]:
    """2-D convolution (cross-correlation) with bias.

    Each output element is ``bias[o] + sum over (di, dj, ci)`` of
    ``padded[b, i*s + di, j*s + dj, ci] * kernels[di, dj, ci, o]``,
    accumulated with the channel index innermost.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4 [n,h,w,c], got shape {x.shape}")
    kh, kw, in_ch, out_ch = params.kernels.shape
    n, h, w, c = x.shape
    if c != in_ch:
        raise ShapeError(f"input has {c} channels but kernels expect {in_ch}")
    s = params.stride
    if params.padding == "same":
        oh, pt, pb = _same_pad(h, kh, s)
        ow, pl, pr = _same_pad(w, kw, s)
    elif params.padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(f"valid padding needs input >= kernel, got {(h, w)} vs {(kh, kw)}")
        oh, pt, pb = (h - kh) // s + 1, 0, 0
        ow, pl, pr = (w - kw) // s + 1, 0, 0
    else:
        raise ValueError(f"unknown padding mode {params.padding!r}")

    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    out = np.empty((n, oh, ow, out_ch), dtype=np.float64)
    kernels.conv2d_fwd(
        xp,
        np.ascontiguousarray(params.kernels, dtype=np.float64),
        np.ascontiguousarray(params.bias, dtype=np.float64),
        out,
        s,
    )
    cache = ConvCache(
        padded=xp,
        pad_top=pt,
        pad_left=pl,
        in_shape=x.shape,
        out_shape=out.shape,
        kernel_shape=params.kernels.shape,
        stride=s,
    )
    return out, cache


def conv2d_backward(
    grad_out: np.ndarray, cache: ConvCache, params: Conv2dParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels, and bias."""
    if params.kernels.shape != cache.kernel_shape or params.stride != cache.stride:
        raise StateError("cache does not belong to these convolution parameters")
    if grad_out.shape != cache.out_shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {cache.out_shape}")
    gout = np.ascontiguousarray(grad_out, dtype=np.float64)

    grad_bias = gout.sum(axis=(0, 1, 2))

    grad_k = np.zeros(cache.kernel_shape, dtype=np.float64)
    kernels.conv2d_bwd_kernels(cache.padded, gout, grad_k, cache.stride)

    dxp = np.zeros_like(cache.padded)
    kt = np.ascontiguousarray(params.kernels.transpose(0, 1, 3, 2), dtype=np.float64)
    kernels.conv2d_bwd_input(gout, kt, dxp, cache.stride)
    _, h, w, _ = cache.in_shape
    grad_x = np.ascontiguousarray(dxp[:, cache.pad_top : cache.pad_top + h, cache.pad_left : cache.pad_left + w, :])
    return grad_x, grad_k, grad_bias


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, ReluCache]:
    """Elementwise ``max(0, x)``."""
    return np.maximum(x, 0.0), ReluCache(positive=x > 0)


def relu_backward(grad_out: np.ndarray, cache: ReluCache) -> np.ndarray:
    if grad_out.shape != cache.positive.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != forward shape {cache.positive.shape}")
    return np.where(cache.positive, grad_out, 0.0)


def maxpool2d_forward(
    x: np.ndarray, pool: int = 2, stride: int = 2
) -> tuple[np.ndarray, PoolCache]:
    """Max over ``pool x pool`` windows; ties keep the first position in
    row-major window scan."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be rank 4 [n,h,w,c], got shape {x.shape}")
    n, h, w, c = x.shape
    if pool > h or pool > w:
        raise ShapeError(f"pool window {pool} larger than input {(h, w)}")
    oh = (h - pool) // stride + 1
    ow = (w - pool) // stride + 1
    out = np.empty((n, oh, ow, c), dtype=np.float64)
    argy = np.empty((n, oh, ow, c), dtype=np.int64)
    argx = np.empty((n, oh, ow, c), dtype=np.int64)
    kernels.maxpool_fwd(np.ascontiguousarray(x, dtype=np.float64), pool, stride, out, argy, argx)
    return out, PoolCache(argy=argy, argx=argx, in_shape=x.shape)


def maxpool2d_backward(grad_out: np.ndarray, cache: PoolCache) -> np.ndarray:
    """Route each output gradient to its recorded argmax position; overlapping
    windows accumulate additively."""
    if grad_out.shape != cache.argy.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != pooled shape {cache.argy.shape}")
    dx = np.zeros(cache.in_shape, dtype=np.float64)
    kernels.maxpool_bwd(np.ascontiguousarray(grad_out, dtype=np.float64), cache.argy, cache.argx, dx)
    return dx


def dense_forward(x: np.ndarray, params: DenseParams) -> tuple[np.ndarray, DenseCache]:
    """Affine map ``x @ W + b`` with the bias broadcast over rows."""
    if x.ndim != 2:
        raise ShapeError(f"dense input must be rank 2 [n,f], got shape {x.shape}")
    if x.shape[1] != params.weight.shape[0]:
        raise ShapeError(
            f"input width {x.shape[1]} != weight in_features {params.weight.shape[0]}"
        )
    return tensor.matmul(x, params.weight) + params.bias, DenseCache(x=x)


def dense_backward(
    grad_out: np.ndarray, cache: DenseCache, params: DenseParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_x = tensor.matmul(grad_out, params.weight.T)
    grad_w = tensor.matmul(cache.x.T, grad_out)
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def dropout_forward(
    x: np.ndarray, spec: DropoutSpec, rng: Rng | None = None
) -> tuple[np.ndarray, DropoutCache]:
    """Inverted dropout: in train mode keep each element with probability
    ``1 - drop_prob`` and scale by ``1/(1 - drop_prob)``; eval mode is the
    identity."""
    if spec.mode == "eval":
        return x, DropoutCache(mode="eval", keep_prob=1.0, mask=None)
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = 1.0 - spec.drop_prob
    mask = (rng.uniform(x.shape) < keep).astype(np.float64)
    return x * mask / keep, DropoutCache(mode="train", keep_prob=keep, mask=mask)


def dropout_backward(grad_out: np.ndarray, cache: DropoutCache) -> np.ndarray:
    if cache.mode != "train" or cache.mask is None:
        raise StateError("dropout backward needs a train-mode cache")
    return grad_out * cache.mask / cache.keep_prob


def pooled_extent(extent: int, pool: int, stride: int) -> int:
    out = (extent - pool) // stride + 1
    if out < 1:
        raise ShapeError(f"pool window {pool} does not fit extent {extent}")
    return out


@dataclass
class ModelParams:
    """All learnable tensors of the network plus its fixed pooling geometry."""

    conv1: Conv2dParams
    conv2: Conv2dParams
    fc1: DenseParams
    fc2: DenseParams
    pool_size: int = 2
    pool_stride: int = 2

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Learnable tensors in a fixed, documented order."""
        return {
            "conv1.kernels": self.conv1.kernels,
            "conv1.bias": self.conv1.bias,
            "conv2.kernels": self.conv2.kernels,
            "conv2.bias": self.conv2.bias,
            "fc1.weight": self.fc1.weight,
            "fc1.bias": self.fc1.bias,
            "fc2.weight": self.fc2.weight,
            "fc2.bias": self.fc2.bias,
        }

    @property
    def input_extent(self) -> int:
        """Spatial input extent implied by the fc1 width and pool geometry."""
        c2 = self.conv2.kernels.shape[3]
        flat = self.fc1.weight.shape[0]
        e2 = int(round((flat // c2) ** 0.5))
        # invert two pooling stages
        e1 = (e2 - 1) * self.pool_stride + self.pool_size
        return (e1 - 1) * self.pool_stride + self.pool_size


def init_model(
    rng: Rng,
    input_extent: int = 28,
    conv1_filters: int = 32,
    conv2_filters: int = 64,
    fc_units: int = 1024,
    pool_stride: int = 2,
    in_channels: int = 1,
    num_classes: int = 10,
    kernel_size: int = 5,
    init_stddev: float = 0.1,
    init_bias: float = 0.1,
) -> ModelParams:
    """Fresh parameters: truncated-normal weights (2 sigma), constant biases."""
    pool = 2
    e1 = pooled_extent(input_extent, pool, pool_stride)
    e2 = pooled_extent(e1, pool, pool_stride)
    flat = e2 * e2 * conv2_filters

    def weights(shape):
        return tensor.random_normal(shape, 0.0, init_stddev, truncate_at=2.0, rng=rng)

    def biases(n):
        return np.full(n, init_bias, dtype=np.float64)

    return ModelParams(
        conv1=Conv2dParams(
            kernels=weights((kernel_size, kernel_size, in_channels, conv1_filters)),
            bias=biases(conv1_filters),
        ),
        conv2=Conv2dParams(
            kernels=weights((kernel_size, kernel_size, conv1_filters, conv2_filters)),
            bias=biases(conv2_filters),
        ),
        fc1=DenseParams(weight=weights((flat, fc_units)), bias=biases(fc_units)),
        fc2=DenseParams(weight=weights((fc_units, num_classes)), bias=biases(num_classes)),
        pool_size=pool,
        pool_stride=pool_stride,
    )


@dataclass
class CnnCaches:
    mode: Mode
    conv1: ConvCache
    relu1: ReluCache
    pool1: PoolCache
    conv2: ConvCache
    relu2: ReluCache
    pool2: PoolCache
    flat_shape: tuple[int, ...] = field(default=())
    fc1: DenseCache | None = None
    relu3: ReluCache | None = None
    dropout: DropoutCache | None = None
    fc2: DenseCache | None = None


def cnn_forward(
    batch: np.ndarray,
    model: ModelParams,
    mode: Mode,
    rng: Rng | None = None,
    dropout_p: float = 0.5,
) -> tuple[np.ndarray, CnnCaches]:
    """Raw class scores for a batch (no softmax).

    Composition: conv1 -> relu -> pool -> conv2 -> relu -> pool -> flatten
    -> fc1 -> relu -> dropout -> fc2.  Dropout draws from ``rng`` in train
    mode only; eval mode is deterministic.
    """
    a, c_conv1 = conv2d_forward(batch, model.conv1)
    a, c_relu1 = relu_forward(a)
    a, c_pool1 = maxpool2d_forward(a, model.pool_size, model.pool_stride)
    a, c_conv2 = conv2d_forward(a, model.conv2)
    a, c_relu2 = relu_forward(a)
    a, c_pool2 = maxpool2d_forward(a, model.pool_size, model.pool_stride)
    flat_shape = a.shape
    a = a.reshape(a.shape[0], -1)
    if a.shape[1] != model.fc1.weight.shape[0]:
        raise ShapeError(
            f"flattened width {a.shape[1]} does not match fc1 input "
            f"{model.fc1.weight.shape[0]}; input extent should be {model.input_extent}"
        )
    a, c_fc1 = dense_forward(a, model.fc1)
    a, c_relu3 = relu_forward(a)
    a, c_drop = dropout_forward(a, DropoutSpec(drop_prob=dropout_p, mode=mode), rng)
    scores, c_fc2 = dense_forward(a, model.fc2)
    caches = CnnCaches(
        mode=mode,
        conv1=c_conv1,
        relu1=c_relu1,
        pool1=c_pool1,
        conv2=c_conv2,
        relu2=c_relu2,
        pool2=c_pool2,
        flat_shape=flat_shape,
        fc1=c_fc1,
        relu3=c_relu3,
        dropout=c_drop,
        fc2=c_fc2,
    )
    return scores, caches


def cnn_backward(
    grad_scores: np.ndarray, caches: CnnCaches, model: ModelParams
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every learnable tensor, given the
    loss gradient at the score output."""
    g, gw2, gb2 = dense_backward(grad_scores, caches.fc2, model.fc2)
    if caches.mode == "train":
        g = dropout_backward(g, caches.dropout)
    g = relu_backward(g, caches.relu3)
    g, gw1, gb1 = dense_backward(g, caches.fc1, model.fc1)
    g = g.reshape(caches.flat_shape)
    g = maxpool2d_backward(g, caches.pool2)
    g = relu_backward(g, caches.relu2)
    g, gk2, gcb2 = conv2d_backward(g, caches.conv2, model.conv2)
    g = maxpool2d_backward(g, caches.pool1)
    g = relu_backward(g, caches.relu1)
    _, gk1, gcb1 = conv2d_backward(g, caches.conv1, model.conv1)
    return {
        "conv1.kernels": gk1,
        "conv1.bias": gcb1,
        "conv2.kernels": gk2,
        "conv2.bias": gcb2,
        "fc1.weight": gw1,
        "fc1.bias": gb1,
        "fc2.weight": gw2,
        "fc2.bias": gb2,
    }
