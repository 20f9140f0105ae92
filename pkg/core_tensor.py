"""
Dense tensor primitives.

Tensors are numpy arrays in row-major (C) order, channel-last for images.
Training runs in float32; the gradient checker uses the same functions in float64.
"""
from math import prod
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from errors import NonFinite, ShapeMismatch

Tensor = NDArray[np.floating]

DEFAULT_DTYPE = np.float32


def _check_shape(shape: Sequence[int], allow_empty: bool = False) -> tuple:
    shape = tuple(int(d) for d in shape)
    smallest = 0 if allow_empty else 1
    if any(d < smallest for d in shape):
        raise ShapeMismatch(f"Dimensions must be positive, got {shape}")
    return shape


def ensure_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NonFinite(f"{what} contains NaN or Inf")
    return t


def create_tensor(shape: Sequence[int], values: Iterable[float], dtype=DEFAULT_DTYPE) -> Tensor:
    """
    Build a read-only tensor from values listed in row-major order,
    e.g. shape (2, 2) with [1, 2, 3, 4] puts 4 at (1, 1).
    """
    shape = _check_shape(shape)
    flat = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=dtype).ravel()
    if flat.size != prod(shape):
        raise ShapeMismatch(f"{flat.size} values cannot fill shape {shape} ({prod(shape)} elements)")
    ensure_finite(flat, "values")
    out = flat.reshape(shape).copy()
    out.setflags(write=False)
    return out


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    """Same elements in the same row-major order. An empty batch (leading 0) is allowed."""
    new_shape = _check_shape(new_shape, allow_empty=True)
    if prod(new_shape) != t.size:
        raise ShapeMismatch(f"Cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.reshape(t, new_shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(M, K) x (K, N) -> (M, N); raises NonFinite if the product overflows or carries NaN."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"Inner dimensions differ: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul result")
