"""Forward passes: full-precision reference and simulated-integer quantized.

All three quantization modes share one integer pipeline per layer: quantize
the layer input, multiply integer tensors with 64-bit accumulation,
dequantize to reals, add the full-precision bias, apply the activation, and
hand the real-valued result to the next layer (simulated quantization). The
modes differ only in where the input scale comes from and in the
dequantization factor:

* static: one precomputed scalar input scale per layer, estimated from the
  stored batch-norm moments; dequantization multiplies by
  ``input_scale * weight_scale``.
* dynamic: a scalar input scale recomputed from each sample's max magnitude
  at inference time; same dequantization structure.
* spiq: one precomputed scale per input channel, folded into the weights, so
  dequantization needs only the folded weights' per-output-channel scale.

The batch-norm vectors stored with a layer describe the distribution of the
tensor that layer consumes, i.e. the normalization they parameterize has
already shaped the data. Re-applying normalize-then-rescale with the same
moments is the identity affine, so the forward pass carries the statistics
as range metadata and applies no extra transform.

For static and dynamic modes the dequantization factor is evaluated as
``(input_scale * weight_range) / beta`` rather than
``input_scale * (weight_range / beta)``; the two are equal to within
rounding, and the former makes the per-channel pipeline collapse
bit-exactly onto the static one when every channel shares the same
statistics.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ConfigError, ShapeError
from .folding import FoldedLayer, build_spiq_layer
from .modelio import KIND_FC, KIND_FLATTEN, ModelGraph, QuantConfig
from .quant import (
    OUTPUT_CHANNEL,
    SCALE_FLOOR,
    QuantParams,
    QuantizedTensor,
    channel_max_abs,
    levels,
    max_abs,
    quantize,
    weight_scale_per_channel,
    weight_scale_per_layer,
)
from .ranges import RangeConfig, dynamic_input_scales_per_sample, static_input_scale


@dataclass(frozen=True)
class ScalarQuantLayer:
    """Static/dynamic payload: quantized weights plus scalar input scale.

    ``weight_range`` keeps the max-magnitude numerators the weight scales
    came from; the dequantization step divides by beta only after
    multiplying by the input scale (see module docstring).
    """

    q_weights: QuantizedTensor
    weight_range: float | np.ndarray
    input_scale: float | None

    def __post_init__(self):
        if isinstance(self.weight_range, np.ndarray):
            self.weight_range.setflags(write=False)


@dataclass(frozen=True)
class QuantizedModel:
    """A model prepared for one quantization mode.

    ``layers`` aligns with ``graph.layers``; flatten layers carry ``None``,
    static/dynamic layers a :class:`ScalarQuantLayer`, and spiq layers a
    :class:`~spiq.folding.FoldedLayer`.
    """

    graph: ModelGraph
    mode: str
    config: QuantConfig
    layers: tuple

    def __post_init__(self):
        if self.mode != self.config.mode:
            raise ConfigError(f"mode {self.mode!r} disagrees with config {self.config.mode!r}")
        if len(self.layers) != len(self.graph.layers):
            raise ConfigError("quantized payloads do not align with the graph")
        for spec, payload in zip(self.graph.layers, self.layers):
            if spec.kind == KIND_FLATTEN:
                if payload is not None:
                    raise ConfigError("flatten layers carry no quantized payload")
                continue
            if self.mode == "spiq" and not isinstance(payload, FoldedLayer):
                raise ConfigError("spiq models need folded layers")
            if self.mode == "static" and (
                not isinstance(payload, ScalarQuantLayer) or payload.input_scale is None
            ):
                raise ConfigError("static models need precomputed scalar input scales")
            if self.mode == "dynamic" and (
                not isinstance(payload, ScalarQuantLayer) or payload.input_scale is not None
            ):
                raise ConfigError("dynamic models store no input scales")

    @property
    def resolved_lambda(self) -> float:
        return self.config.resolved_lambda()


@dataclass(frozen=True)
class InferenceTiming:
    """Median-friendly record of per-sample wall-clock durations."""

    mode: str
    batch_size: int
    per_sample_seconds: tuple[float, ...]

    def __post_init__(self):
        if self.batch_size < 1 or not self.per_sample_seconds:
            raise ConfigError("timing needs a non-empty batch and at least one repetition")
        if any(d <= 0 for d in self.per_sample_seconds):
            raise ConfigError("durations must be positive")

    @property
    def median_per_sample(self) -> float:
        ordered = sorted(self.per_sample_seconds)
        n = len(ordered)
        mid = n // 2
        return ordered[mid] if n % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])


def quantize_model(graph: ModelGraph, config: QuantConfig) -> QuantizedModel:
    """Build the per-layer quantized payloads for one mode."""
    rc = RangeConfig(config.lam, config.a_bits)
    payloads = []
    for i, layer in enumerate(graph.layers):
        if layer.kind == KIND_FLATTEN:
            payloads.append(None)
            continue
        if config.mode in ("static", "spiq") and layer.pre_bn is None:
            raise ConfigError(
                f"layer {i}: {config.mode} mode needs batch-norm statistics, "
                "and this layer has none (dynamic mode works without them)"
            )
        if config.mode == "spiq":
            payloads.append(build_spiq_layer(layer.weights, layer.bias, layer.pre_bn, rc, config.w_bits))
            continue
        if config.weight_granularity == "per-channel":
            w_range = channel_max_abs(layer.weights)
            params = QuantParams(config.w_bits, weight_scale_per_channel(layer.weights, config.w_bits), OUTPUT_CHANNEL)
        else:
            w_range = max_abs(layer.weights)
            params = QuantParams(config.w_bits, weight_scale_per_layer(layer.weights, config.w_bits))
        payloads.append(
            ScalarQuantLayer(
                q_weights=quantize(layer.weights, params),
                weight_range=w_range,
                input_scale=static_input_scale(layer.pre_bn, rc) if config.mode == "static" else None,
            )
        )
    return QuantizedModel(graph=graph, mode=config.mode, config=config, layers=tuple(payloads))


def _check_batch(graph: ModelGraph, batch: np.ndarray):
    if batch.ndim != 4:
        raise ShapeError(f"batches are NCHW, got shape {tuple(batch.shape)}")
    if tuple(batch.shape[1:]) != graph.input_shape:
        raise ShapeError(
            f"batch shape {tuple(batch.shape[1:])} does not match model input {graph.input_shape}"
        )


def _apply_layer_real(layer, x: np.ndarray) -> np.ndarray:
    if layer.kind == KIND_FC:
        y = tensor.matmul(x, layer.weights)
        if layer.bias is not None:
            y = y + layer.bias[None, :]
    else:
        y = tensor.conv2d(x, layer.weights, layer.stride, layer.padding)
        if layer.bias is not None:
            y = y + layer.bias[None, :, None, None]
    return tensor.relu(y) if layer.activation == "relu" else y


def forward_reference(graph: ModelGraph, batch: np.ndarray, capture: str | None = None):
    """Full-precision float64 forward pass.

    ``capture`` can be ``"inputs"`` or ``"outputs"`` to also return, per
    weighted layer, the tensor it consumed or produced (after activation).
    """
    _check_batch(graph, batch)
    x = np.asarray(batch, dtype=np.float64)
    captured = []
    for layer in graph.layers:
        if layer.kind == KIND_FLATTEN:
            x = x.reshape(x.shape[0], -1)
            continue
        if capture == "inputs":
            captured.append(x)
        x = _apply_layer_real(layer, x)
        if capture == "outputs":
            captured.append(x)
    return (x, captured) if capture else x


def _integer_product(layer, q_in: np.ndarray, q_w: np.ndarray) -> np.ndarray:
    if layer.kind == KIND_FC:
        return tensor.matmul(q_in, q_w)
    return tensor.conv2d(q_in, q_w, layer.stride, layer.padding)


def _scalar_dequant_factor(input_scale, weight_range, w_bits: int):
    """(input_scale * weight_range) / beta with the degenerate-scale floor."""
    return np.maximum((input_scale * weight_range) / levels(w_bits), SCALE_FLOOR)


def _broadcast_out(factor, layer, batched_scale: bool):
    """Reshape a dequantization factor onto the integer output."""
    if np.isscalar(factor) or np.ndim(factor) == 0:
        return factor
    if layer.kind == KIND_FC:
        return factor if batched_scale else np.asarray(factor)[None, :]
    if batched_scale:  # (N, Cout) onto (N, Cout, H, W)
        return np.asarray(factor)[:, :, None, None]
    return np.asarray(factor)[None, :, None, None]


def _quantize_activation(x: np.ndarray, scale, beta: int) -> np.ndarray:
    """Shared integer conversion for all modes; only the scale shape differs."""
    q = x / scale
    np.rint(q, out=q)
    np.clip(q, -beta, beta, out=q)
    return q.astype(np.int64)


def forward_quantized(qmodel: QuantizedModel, batch: np.ndarray, capture: str | None = None):
    """Simulated-integer forward pass in the model's quantization mode."""
    graph = qmodel.graph
    _check_batch(graph, batch)
    a_bits = qmodel.config.a_bits
    w_bits = qmodel.config.w_bits
    beta_a = levels(a_bits)
    x = np.asarray(batch, dtype=np.float64)
    captured = []
    for layer, payload in zip(graph.layers, qmodel.layers):
        if layer.kind == KIND_FLATTEN:
            x = x.reshape(x.shape[0], -1)
            continue
        if capture == "inputs":
            captured.append(x)

        if qmodel.mode == "spiq":
            shape = [1] * x.ndim
            shape[0 if x.ndim == 1 else 1] = -1
            # materialize the divisor once: same values, contiguous inner loop
            divisor = np.ascontiguousarray(
                np.broadcast_to(payload.input_scales.reshape(shape), (1,) + x.shape[1:])
            )
            q_in = _quantize_activation(x, divisor, beta_a)
            factor = _broadcast_out(payload.output_scale, layer, batched_scale=False)
        elif qmodel.mode == "static":
            q_in = _quantize_activation(x, payload.input_scale, beta_a)
            factor = _broadcast_out(
                _scalar_dequant_factor(payload.input_scale, payload.weight_range, w_bits),
                layer,
                batched_scale=False,
            )
        else:  # dynamic: one scale per sample, over the whole input tensor
            s = dynamic_input_scales_per_sample(x, a_bits)
            q_in = _quantize_activation(x, s.reshape((-1,) + (1,) * (x.ndim - 1)), beta_a)
            per_sample = _scalar_dequant_factor(
                s[:, None], np.atleast_1d(payload.weight_range)[None, :], w_bits
            )
            if np.ndim(payload.weight_range) == 0:  # per-layer weight scale
                factor = per_sample.reshape((-1,) + (1,) * (x.ndim - 1))
            else:
                factor = _broadcast_out(per_sample, layer, batched_scale=True)

        z = _integer_product(layer, q_in, payload.q_weights.q)
        y = z.astype(np.float64)
        np.multiply(y, factor, out=y)
        if layer.bias is not None:
            bias = layer.bias[None, :] if layer.kind == KIND_FC else layer.bias[None, :, None, None]
            np.add(y, bias, out=y)
        if layer.activation == "relu":
            np.maximum(y, 0, out=y)
        x = y
        if capture == "outputs":
            captured.append(x)
    return (x, captured) if capture else x


def time_modes(
    graph: ModelGraph,
    configs: list[QuantConfig],
    batch: np.ndarray,
    repetitions: int,
) -> list[InferenceTiming]:
    """Median per-sample wall-clock per config, warm-up iteration discarded.

    The batch loop runs single-threaded on a monotonic clock; quantization
    happens outside the timed region, so dynamic mode pays exactly its
    inference-time overhead (the per-sample max reduction) and nothing else.
    """
    if repetitions < 3:
        raise ConfigError(f"timing needs at least 3 repetitions, got {repetitions}")
    _check_batch(graph, batch)
    n = batch.shape[0]
    qmodels = [quantize_model(graph, config) for config in configs]
    for qmodel in qmodels:
        forward_quantized(qmodel, batch)  # warm-up, discarded
    # interleave the modes with a rotating order so drift and scheduling
    # noise hit every mode and position alike, and keep the collector out
    # of the timed windows
    durations = [[] for _ in qmodels]
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for rep in range(repetitions):
            for offset in range(len(qmodels)):
                idx = (rep + offset) % len(qmodels)
                start = time.perf_counter()
                forward_quantized(qmodels[idx], batch)
                durations[idx].append((time.perf_counter() - start) / n)
    finally:
        if gc_was_enabled:
            gc.enable()
    return [
        InferenceTiming(config.mode, n, tuple(times))
        for config, times in zip(configs, durations)
    ]
