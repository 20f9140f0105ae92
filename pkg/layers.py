"""
Forward and backward passes for the layers of the digit network:
Conv2D (same padding, stride 1), 2x2 max pooling, inverted dropout, flatten,
dense, ReLU and softmax.

All functions are pure. Image tensors are channel-last; every function takes
either a single sample (H, W, C) / (n,) or a batch with a leading axis and
returns results with the caller's rank.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core_tensor import Tensor, matmul, reshape
from errors import InvalidRate, OddDimension, ShapeMismatch


# ============================================================================
# Parameter / bookkeeping types
# ============================================================================

@dataclass
class ConvParams:
    """kernels (K, K, C_in, C_out), bias (C_out); same padding, stride 1"""
    kernels: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.kernels.shape[0] != self.kernels.shape[1]:
            raise ShapeMismatch(f"Kernels must be (K, K, C_in, C_out), got {self.kernels.shape}")
        if self.kernel_size % 2 == 0:
            raise ShapeMismatch(f"Kernel size must be odd for symmetric same padding, got {self.kernel_size}")
        if self.bias.shape != (self.kernels.shape[3],):
            raise ShapeMismatch(f"Bias {self.bias.shape} does not match {self.kernels.shape[3]} filters")

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[3]


@dataclass
class DenseParams:
    """weights (n_in, n_out), bias (n_out)"""
    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(f"Dense weights {self.weights.shape} and bias {self.bias.shape} disagree")


@dataclass
class DropoutMask:
    mask: Tensor
    rate: float


@dataclass
class PoolArgmax:
    """Flat (per-sample, row-major) input index of each selected maximum."""
    indices: np.ndarray
    input_shape: Tuple[int, ...] = field(default_factory=tuple)


def _batched(x: Tensor, sample_rank: int) -> Tuple[Tensor, bool]:
    if x.ndim == sample_rank:
        return x[np.newaxis], True
    if x.ndim == sample_rank + 1:
        return x, False
    raise ShapeMismatch(f"Expected rank {sample_rank} or {sample_rank + 1}, got shape {x.shape}")


def _unbatched(x: Tensor, single: bool) -> Tensor:
    return x[0] if single else x


# ============================================================================
# Convolution
# ============================================================================

def _kernel_matrix(p: ConvParams) -> Tensor:
    """(K, K, C, F) -> (K*K*C, F), rows in the same (dh, dw, c) order as the patches."""
    return reshape(p.kernels, (p.kernels.shape[0] * p.kernels.shape[1] * p.in_channels, p.out_channels))


def _im2col(x: Tensor, k: int) -> Tensor:
    """(N, H, W, C) -> (N*H*W, K*K*C) patch rows, columns ordered (dh, dw, c)."""
    n, h, w, c = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H, W, C, K, K)
    return reshape(windows.transpose(0, 1, 2, 4, 5, 3), (n * h * w, k * k * c))


def conv2d_forward(x: Tensor, p: ConvParams) -> Tensor:
    xb, single = _batched(x, 3)
    if xb.shape[-1] != p.in_channels:
        raise ShapeMismatch(f"Input has {xb.shape[-1]} channels, kernels expect {p.in_channels}")
    n, h, w, _ = xb.shape
    cols = _im2col(xb, p.kernel_size)
    out = matmul(cols, _kernel_matrix(p)) + p.bias
    return _unbatched(reshape(out, (n, h, w, p.out_channels)), single)


def conv2d_backward(x: Tensor, p: ConvParams, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_kernels, grad_bias)."""
    xb, single = _batched(x, 3)
    gb, _ = _batched(grad_out, 3)
    n, h, w, c = xb.shape
    k, f = p.kernel_size, p.out_channels
    if c != p.in_channels or gb.shape != (n, h, w, f):
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match forward output of input {x.shape}")

    g2 = reshape(gb, (n * h * w, f))
    cols = _im2col(xb, k)
    grad_bias = g2.sum(axis=0)
    grad_kernels = reshape(matmul(cols.T, g2), (k, k, c, f))

    dcols = reshape(matmul(g2, _kernel_matrix(p).T), (n, h, w, k, k, c))
    pad = k // 2
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    for dh in range(k):
        for dw in range(k):
            dxp[:, dh:dh + h, dw:dw + w, :] += dcols[:, :, :, dh, dw, :]
    grad_input = dxp[:, pad:pad + h, pad:pad + w, :]
    return _unbatched(grad_input, single), grad_kernels, grad_bias


# ============================================================================
# Max pooling (2x2, stride 2)
# ============================================================================

def maxpool_forward(x: Tensor) -> Tuple[Tensor, PoolArgmax]:
    xb, single = _batched(x, 3)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise OddDimension(f"2x2 pooling needs even height and width, got {h}x{w}")
    h2, w2 = h // 2, w // 2

    # window slots ordered (0,0), (0,1), (1,0), (1,1): increasing flat input index
    windows = xb.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    slot = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, slot[..., np.newaxis], axis=-1)[..., 0]

    rows = 2 * np.arange(h2)[:, None, None] + slot // 2
    cols = 2 * np.arange(w2)[None, :, None] + slot % 2
    flat = (rows * w + cols) * c + np.arange(c)
    argmax = PoolArgmax(indices=_unbatched(flat, single), input_shape=tuple(x.shape))
    return _unbatched(out, single), argmax


def maxpool_backward(argmax: PoolArgmax, grad_out: Tensor) -> Tensor:
    if grad_out.shape != argmax.indices.shape:
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match pooled shape {argmax.indices.shape}")
    idx, single = _batched(argmax.indices, 3)
    gb, _ = _batched(grad_out, 3)
    n = gb.shape[0]
    per_sample = int(np.prod(argmax.input_shape[-3:]))
    grad_input = np.zeros((n, per_sample), dtype=gb.dtype)
    np.put_along_axis(grad_input, idx.reshape(n, -1), gb.reshape(n, -1), axis=1)
    return grad_input.reshape(argmax.input_shape)


# ============================================================================
# Activations
# ============================================================================

def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    if x.shape != grad_out.shape:
        raise ShapeMismatch(f"relu input {x.shape} and grad {grad_out.shape} differ")
    return grad_out * (x > 0)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ============================================================================
# Dropout (inverted)
# ============================================================================

def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"Dropout rate must lie in [0, 1), got {rate}")


def draw_dropout_mask(shape: Tuple[int, ...], rate: float, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """Keep-mask with P(0) = rate, entries exactly 0 or 1."""
    _check_rate(rate)
    return (rng.random(shape) >= rate).astype(dtype)


def dropout_forward(
    x: Tensor,
    rate: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[Tensor] = None,
) -> Tuple[Tensor, DropoutMask]:
    """
    Inverted dropout. Inference (or rate 0) is the identity with an all-ones mask.
    A precomputed `mask` replaces the draw from `rng`.
    """
    _check_rate(rate)
    if not training or rate == 0.0:
        return x, DropoutMask(mask=np.ones_like(x), rate=rate)
    if mask is None:
        if rng is None:
            raise InvalidRate("Training-mode dropout needs a generator or a mask")
        mask = draw_dropout_mask(x.shape, rate, rng, x.dtype)
    elif mask.shape != x.shape:
        raise ShapeMismatch(f"Dropout mask {mask.shape} does not match input {x.shape}")
    scale = x.dtype.type(1.0 / (1.0 - rate))
    return x * mask * scale, DropoutMask(mask=mask, rate=rate)


def dropout_backward(mask: DropoutMask, rate: float, grad_out: Tensor) -> Tensor:
    _check_rate(rate)
    if mask.mask.shape != grad_out.shape:
        raise ShapeMismatch(f"Dropout mask {mask.mask.shape} and grad {grad_out.shape} differ")
    if rate == 0.0:
        return grad_out * mask.mask
    scale = grad_out.dtype.type(1.0 / (1.0 - rate))
    return grad_out * mask.mask * scale


# ============================================================================
# Flatten / Dense
# ============================================================================

def flatten_forward(x: Tensor) -> Tensor:
    """(H, W, C) -> (H*W*C); out[(h*W + w)*C + c] = x[h, w, c]."""
    xb, single = _batched(x, 3)
    return _unbatched(reshape(xb, (xb.shape[0], int(np.prod(xb.shape[1:])))), single)


def flatten_backward(grad_out: Tensor, input_shape: Tuple[int, ...]) -> Tensor:
    return reshape(grad_out, input_shape)


def dense_forward(x: Tensor, p: DenseParams) -> Tensor:
    if x.shape[-1] != p.weights.shape[0]:
        raise ShapeMismatch(f"Dense expects {p.weights.shape[0]} inputs, got {x.shape}")
    xb, single = _batched(x, 1)
    return _unbatched(matmul(xb, p.weights) + p.bias, single)


def dense_backward(x: Tensor, p: DenseParams, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias); batch gradients are summed."""
    xb, single = _batched(x, 1)
    gb, _ = _batched(grad_out, 1)
    if xb.shape[-1] != p.weights.shape[0] or gb.shape != (xb.shape[0], p.weights.shape[1]):
        raise ShapeMismatch(f"Dense backward shapes disagree: x {x.shape}, grad {grad_out.shape}")
    grad_weights = matmul(xb.T, gb)
    grad_bias = gb.sum(axis=0)
    grad_input = matmul(gb, p.weights.T)
    return _unbatched(grad_input, single), grad_weights, grad_bias
