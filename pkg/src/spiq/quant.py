"""Symmetric quantization: integer levels, scale computation, (de)quantization.

The quantizer maps reals to integers in [-beta, +beta] with
beta = 2**(bits-1) - 1 via division by a positive scale, round-half-to-even,
and saturation. Storage is int32 regardless of the bit-width; the bit-width
only constrains the value range (simulated quantization). There is no
zero-point: the scheme is symmetric signed only.

Scales can be a scalar (per tensor) or a vector tagged with the channel axis
it runs along:

* ``input-channel`` scales apply to activations (axis 0 for vectors, axis 1
  for matrices and NCHW batches);
* ``output-channel`` scales apply to weights (columns of an FC matrix, the
  leading axis of an OIHW kernel).

Degenerate all-zero tensors or channels get a 1e-12 scale floor instead of a
division by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

SCALE_FLOOR = 1e-12

INPUT_CHANNEL = "input-channel"
OUTPUT_CHANNEL = "output-channel"


def levels(bits: int) -> int:
    """Largest representable magnitude at a given bit-width."""
    if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 8:
        raise ConfigError(f"bit-width must be an integer in [2, 8], got {bits!r}")
    return (1 << (int(bits) - 1)) - 1


def _scale_axis(tag: str, ndim: int) -> int:
    if tag == INPUT_CHANNEL:
        return 0 if ndim == 1 else 1
    if tag == OUTPUT_CHANNEL:
        return 1 if ndim == 2 else 0
    raise ConfigError(f"unknown channel axis tag {tag!r}")


@dataclass(frozen=True)
class QuantParams:
    """Bit-width plus scale defining a symmetric quantizer.

    ``scale`` is a positive float or a positive vector; vector scales carry
    the channel ``axis`` tag they broadcast along.
    """

    bits: int
    scale: float | np.ndarray
    axis: str | None = None

    def __post_init__(self):
        levels(self.bits)
        if isinstance(self.scale, np.ndarray):
            if self.scale.ndim != 1:
                raise ConfigError(f"vector scale must be rank 1, got rank {self.scale.ndim}")
            if self.axis not in (INPUT_CHANNEL, OUTPUT_CHANNEL):
                raise ConfigError(f"vector scale needs a channel axis tag, got {self.axis!r}")
            if not np.all(self.scale > 0):
                raise ConfigError("every scale entry must be positive")
            self.scale.setflags(write=False)
        else:
            object.__setattr__(self, "scale", float(self.scale))
            if not self.scale > 0:
                raise ConfigError(f"scale must be positive, got {self.scale}")

    @property
    def beta(self) -> int:
        return levels(self.bits)

    def broadcast_scale(self, ndim: int):
        """Scale reshaped so it divides/multiplies a rank-``ndim`` tensor."""
        if not isinstance(self.scale, np.ndarray):
            return self.scale
        shape = [1] * ndim
        shape[_scale_axis(self.axis, ndim)] = -1
        return self.scale.reshape(shape)

    def check_extent(self, x: np.ndarray):
        if not isinstance(self.scale, np.ndarray):
            return
        axis = _scale_axis(self.axis, x.ndim)
        if self.scale.shape[0] != x.shape[axis]:
            raise ShapeError(
                f"per-channel scale length {self.scale.shape[0]} does not match "
                f"extent {x.shape[axis]} of {self.axis} axis in shape {tuple(x.shape)}"
            )


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer tensor plus the parameters that produced it."""

    q: np.ndarray
    params: QuantParams

    def __post_init__(self):
        beta = self.params.beta
        if self.q.dtype != np.int32:
            object.__setattr__(self, "q", self.q.astype(np.int32))
        if self.q.size and int(np.abs(self.q).max()) > beta:
            raise ConfigError(f"quantized values exceed saturation bound {beta}")
        self.q.setflags(write=False)


def quantize(x: np.ndarray, params: QuantParams) -> QuantizedTensor:
    """clamp(round-half-even(x / scale), -beta, +beta)."""
    params.check_extent(x)
    beta = params.beta
    q = np.rint(x / params.broadcast_scale(x.ndim))
    np.clip(q, -beta, beta, out=q)
    return QuantizedTensor(q.astype(np.int32), params)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """scale * q, with vector scales broadcast along their tagged axis."""
    return qt.q.astype(np.float64) * qt.params.broadcast_scale(qt.q.ndim)


def max_abs(w: np.ndarray) -> float:
    return float(np.abs(w).max())


def channel_max_abs(w: np.ndarray) -> np.ndarray:
    """Max magnitude per output channel (FC columns, conv leading axis)."""
    if w.ndim == 2:
        return np.abs(w).max(axis=0)
    if w.ndim == 4:
        return np.abs(w).max(axis=(1, 2, 3))
    if w.ndim == 1:
        return np.abs(w).max(keepdims=True)
    raise ShapeError(f"no output-channel axis for rank {w.ndim}")


def weight_scale_per_layer(w: np.ndarray, bits: int) -> float:
    """One scale for the whole tensor: max|w| / beta, floored for zero tensors."""
    return max(max_abs(w) / levels(bits), SCALE_FLOOR)


def weight_scale_per_channel(w: np.ndarray, bits: int) -> np.ndarray:
    """Independent scale per output channel: max|w_n| / beta per channel."""
    return np.maximum(channel_max_abs(w) / levels(bits), SCALE_FLOOR)
