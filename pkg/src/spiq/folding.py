"""Per-channel input scales folded into the weight tensor.

Quantizing each input channel by its own scale breaks the usual
dequantization step: a vector over input channels cannot be applied to an
output that runs over output channels. Folding solves this by replacing W
with diag(s) @ W (each input-channel slice multiplied by its scale), so that
dividing the input by s is exactly compensated inside the weights. The folded
tensor is then quantized per output channel and the integer pipeline needs a
single per-output-channel factor on the way out, with no per-input-channel
correction surviving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .quant import (
    OUTPUT_CHANNEL,
    QuantParams,
    QuantizedTensor,
    levels,
    quantize,
    weight_scale_per_channel,
)
from .ranges import BatchNormStats, RangeConfig, per_channel_input_scales


def fold_input_scales(w: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Multiply input-channel slice m of ``w`` by ``scales[m]``.

    For an FC matrix this is diag(scales) @ w; for an OIHW kernel the Cin
    axis is scaled.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim != 1:
        raise ShapeError(f"input scales must be a vector, got rank {scales.ndim}")
    if w.ndim == 2:
        if scales.shape[0] != w.shape[0]:
            raise ShapeError(
                f"input scale length {scales.shape[0]} does not match "
                f"{w.shape[0]} input rows of FC weights {tuple(w.shape)}"
            )
        return w * scales[:, None]
    if w.ndim == 4:
        if scales.shape[0] != w.shape[1]:
            raise ShapeError(
                f"input scale length {scales.shape[0]} does not match "
                f"{w.shape[1]} input channels of kernel {tuple(w.shape)}"
            )
        return w * scales[None, :, None, None]
    raise ShapeError(f"cannot fold scales into rank-{w.ndim} weights")


@dataclass(frozen=True)
class FoldedLayer:
    """A layer transformed for per-channel input quantization.

    ``q_weights`` holds the folded weights quantized per output channel;
    ``input_scales`` divide the incoming activation channel by channel;
    ``output_scale`` is the only dequantization factor the integer output
    needs. The bias stays in full precision and is added after
    dequantization.
    """

    q_weights: QuantizedTensor
    input_scales: np.ndarray
    output_scale: np.ndarray
    a_bits: int
    bias: np.ndarray | None = None

    def __post_init__(self):
        levels(self.a_bits)
        self.input_scales.setflags(write=False)
        self.output_scale.setflags(write=False)
        n_out = self.q_weights.q.shape[1 if self.q_weights.q.ndim == 2 else 0]
        if self.output_scale.shape[0] != n_out:
            raise ShapeError(
                f"output scale length {self.output_scale.shape[0]} does not match "
                f"{n_out} output channels"
            )


def build_spiq_layer(
    w: np.ndarray,
    bias: np.ndarray | None,
    bn: BatchNormStats | None,
    cfg: RangeConfig,
    w_bits: int,
) -> FoldedLayer:
    """Fold per-channel input scales into ``w`` and quantize the result."""
    if bn is None:
        raise ConfigError("per-channel input quantization needs batch-norm statistics")
    input_scales = per_channel_input_scales(bn, cfg)
    folded = fold_input_scales(w, input_scales)
    output_scale = weight_scale_per_channel(folded, w_bits)
    q_weights = quantize(folded, QuantParams(w_bits, output_scale, OUTPUT_CHANNEL))
    return FoldedLayer(q_weights, input_scales, output_scale, cfg.a_bits, bias)


def spiq_neuron_contract(x: np.ndarray, layer: FoldedLayer, n: int) -> float:
    """Scalar-loop reference for output channel ``n`` of an FC folded layer.

    Quantizes each input entry by its channel scale, accumulates the integer
    products exactly, and applies the single output factor once; matches the
    engine's integer path bit for bit. Bias, when present, is added after
    dequantization like the engine does.
    """
    q = layer.q_weights.q
    if q.ndim != 2:
        raise ShapeError("neuron contract is defined for FC layers only")
    if x.ndim != 1 or x.shape[0] != q.shape[0]:
        raise ShapeError(f"expected a {q.shape[0]}-vector input, got shape {tuple(x.shape)}")
    beta = levels(layer.a_bits)
    acc = 0
    for m in range(q.shape[0]):
        qi = int(np.rint(x[m] / layer.input_scales[m]))
        qi = min(max(qi, -beta), beta)
        acc += qi * int(q[m, n])
    out = float(layer.output_scale[n]) * acc
    if layer.bias is not None:
        out += float(layer.bias[n])
    return out
