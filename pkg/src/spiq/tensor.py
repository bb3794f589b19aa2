"""Dense tensor primitives: matmul, 2-D convolution, elementwise ops.

Value carriers are plain numpy arrays: float64 for the real-valued reference
path, int32 storage with int64 accumulation for the integer path. Layout is
NCHW, row-major, and supported ranks are 1 (vector), 2 (matrix) and 4
(activation or kernel). Convolution is cross-correlation (no kernel flip).

All operations are pure functions; arrays returned by :func:`as_tensor` are
marked read-only so they can be shared across threads.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

SUPPORTED_RANKS = (1, 2, 4)


def as_tensor(values, dtype=np.float64) -> np.ndarray:
    """Validate ``values`` as a rank-1/2/4 tensor and freeze it."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim not in SUPPORTED_RANKS:
        raise ShapeError(
            f"unsupported tensor rank {arr.ndim} for shape {arr.shape}; "
            f"expected rank in {SUPPORTED_RANKS}"
        )
    if arr.size == 0:
        raise ShapeError(f"tensor extents must be positive, got shape {tuple(arr.shape)}")
    arr.setflags(write=False)
    return arr


def _is_integer(arr: np.ndarray) -> bool:
    return np.issubdtype(arr.dtype, np.integer)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with float64 or exact int64 accumulation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    if _is_integer(a) and _is_integer(b):
        return a.astype(np.int64, copy=False) @ b.astype(np.int64, copy=False)
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate an NCHW batch with an OIHW kernel.

    Output spatial extents are ``floor((H + 2*padding - k) / stride) + 1``.
    Padding is zero-fill. Integer inputs accumulate exactly in int64.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 tensors, got ranks {x.ndim} and {kernel.ndim}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = kernel.shape
    if c != c_in:
        raise ShapeError(f"channel mismatch: input has {c} channels, kernel expects {c_in}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    integer = _is_integer(x) and _is_integer(kernel)
    if integer:
        x = x.astype(np.int64, copy=False)
        kernel = kernel.astype(np.int64, copy=False)
    else:
        x = np.asarray(x, dtype=np.float64)
        kernel = np.asarray(kernel, dtype=np.float64)

    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    # (N, C, Ho, Wo, kh, kw) x (Cout, Cin, kh, kw) -> (N, Ho, Wo, Cout)
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(np.moveaxis(out, 3, 1))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a * b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def channel_axis(ndim: int) -> int:
    """Channel axis of an activation: axis 0 for vectors, axis 1 otherwise."""
    return 0 if ndim == 1 else 1


def channel_scale(x: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Multiply each channel slice of ``x`` by the matching entry of ``scales``.

    The only broadcasting supported anywhere in the package: a vector applied
    along the channel axis.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim != 1:
        raise ShapeError(f"channel scales must be a vector, got rank {scales.ndim}")
    axis = channel_axis(x.ndim)
    if scales.shape[0] != x.shape[axis]:
        raise ShapeError(
            f"channel scale length {scales.shape[0]} does not match "
            f"extent {x.shape[axis]} of axis {axis} in shape {tuple(x.shape)}"
        )
    shape = [1] * x.ndim
    shape[axis] = -1
    return x * scales.reshape(shape)
