"""Quantization-error metrics, accuracy, range histograms, sweeps, reports.

The error comparisons between modes are claims about distributions, not
elementwise guarantees: they are evaluated as Monte-Carlo dominance counts
over inputs drawn from the batch-norm-declared Gaussian per channel, with
per-trial seeds derived deterministically from a master seed. Norms default
to L2 over the flattened tensor; L-infinity is available behind a flag.

Reports serialize to JSON with sorted keys, and histograms and sweep curves
to CSV, so identical inputs and seeds produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .engine import forward_quantized, forward_reference, quantize_model, time_modes
from .errors import ConfigError, ShapeError
from .folding import build_spiq_layer
from .modelio import KIND_FLATTEN, ModelGraph, QuantConfig
from .quant import (
    INPUT_CHANNEL,
    OUTPUT_CHANNEL,
    SCALE_FLOOR,
    QuantParams,
    channel_max_abs,
    dequantize,
    levels,
    max_abs,
    quantize,
    weight_scale_per_channel,
    weight_scale_per_layer,
)
from .ranges import (
    BatchNormStats,
    RangeConfig,
    dynamic_input_scales_per_sample,
    range_numerators,
    static_input_scale,
)

NORMS = ("l2", "linf")


@dataclass(frozen=True)
class ErrorStats:
    """Mean and max of a per-sample error norm."""

    mean: float
    max: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("error stats need at least one sample")
        if self.mean > self.max * (1 + 1e-12) + 1e-300:
            raise ConfigError(f"mean {self.mean} exceeds max {self.max}")


def _norm(err: np.ndarray, norm: str) -> float:
    if norm == "l2":
        return float(np.sqrt(np.sum(err.astype(np.float64) ** 2)))
    if norm == "linf":
        return float(np.max(np.abs(err)))
    raise ConfigError(f"unknown norm {norm!r}; expected one of {NORMS}")


def _row_norms(err: np.ndarray, norm: str) -> np.ndarray:
    flat = err.reshape(err.shape[0], -1).astype(np.float64)
    if norm == "l2":
        return np.sqrt(np.sum(flat**2, axis=1))
    if norm == "linf":
        return np.max(np.abs(flat), axis=1)
    raise ConfigError(f"unknown norm {norm!r}; expected one of {NORMS}")


def input_quant_error(x: np.ndarray, scale, bits: int, norm: str = "l2") -> float:
    """Norm of x minus its quantize/dequantize round trip."""
    axis = INPUT_CHANNEL if isinstance(scale, np.ndarray) else None
    qt = quantize(x, QuantParams(bits, scale, axis))
    return _norm(x - dequantize(qt), norm)


def _mode_layer_outputs(i: np.ndarray, w: np.ndarray, bn: BatchNormStats, cfg: QuantConfig) -> dict:
    """Quantized FC outputs of one layer in every mode, rows = samples."""
    rc = RangeConfig(cfg.lam, cfg.a_bits)
    beta_w = levels(cfg.w_bits)
    if cfg.weight_granularity == "per-channel":
        w_range = channel_max_abs(w)
        w_params = QuantParams(cfg.w_bits, weight_scale_per_channel(w, cfg.w_bits), OUTPUT_CHANNEL)
    else:
        w_range = max_abs(w)
        w_params = QuantParams(cfg.w_bits, weight_scale_per_layer(w, cfg.w_bits))
    q_w = quantize(w, w_params).q.astype(np.int64)

    s_static = static_input_scale(bn, rc)
    q_static = quantize(i, QuantParams(cfg.a_bits, s_static)).q.astype(np.int64)
    out_static = (q_static @ q_w) * np.maximum((s_static * np.atleast_1d(w_range)) / beta_w, SCALE_FLOOR)

    s_dyn = dynamic_input_scales_per_sample(i, cfg.a_bits)
    beta_a = levels(cfg.a_bits)
    q_dyn = np.clip(np.rint(i / s_dyn[:, None]), -beta_a, beta_a).astype(np.int64)
    out_dyn = (q_dyn @ q_w) * np.maximum((s_dyn[:, None] * np.atleast_1d(w_range)[None, :]) / beta_w, SCALE_FLOOR)

    folded = build_spiq_layer(w, None, bn, rc, cfg.w_bits)
    q_spiq = quantize(i, QuantParams(cfg.a_bits, folded.input_scales, INPUT_CHANNEL)).q.astype(np.int64)
    out_spiq = (q_spiq @ folded.q_weights.q.astype(np.int64)) * folded.output_scale[None, :]

    return {"static": out_static, "dynamic": out_dyn, "spiq": out_spiq}


def layer_output_error(
    w: np.ndarray,
    bn: BatchNormStats,
    cfg: QuantConfig,
    sample_count: int,
    seed: int,
    norm: str = "l2",
) -> dict[str, ErrorStats]:
    """Per-mode output error of one FC layer on BN-matched Gaussian inputs."""
    if sample_count < 100:
        raise ConfigError(f"need at least 100 samples for stable stats, got {sample_count}")
    if w.ndim != 2:
        raise ShapeError("layer output error is defined for FC weight matrices")
    rng = np.random.default_rng(seed)
    i = bn.mean + np.sqrt(bn.variance) * rng.standard_normal((sample_count, bn.channels))
    reference = i @ w
    stats = {}
    for mode, out in _mode_layer_outputs(i, w, bn, cfg).items():
        norms = _row_norms(reference - out, norm)
        stats[mode] = ErrorStats(float(norms.mean()), float(norms.max()), sample_count)
    return stats


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax matches; ties break toward the lower index."""
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} do not align"
        )
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def range_histogram(
    graph: ModelGraph,
    batch: np.ndarray,
    layer_index: int,
    modes: list[str],
    cfg: RangeConfig,
) -> dict[str, np.ndarray]:
    """Quantization ranges seen at one layer's input, per mode.

    Static yields a single value (the layer-wide estimated max magnitude),
    spiq one value per input channel, and dynamic one value per sample
    (the max magnitude of the full-precision activation reaching the layer).
    """
    weighted = [idx for idx, layer in enumerate(graph.layers) if layer.kind != KIND_FLATTEN]
    if layer_index not in weighted:
        raise ConfigError(f"layer {layer_index} is not a weighted layer (choose from {weighted})")
    layer = graph.layers[layer_index]
    out = {}
    for mode in modes:
        if mode in ("static", "spiq"):
            if layer.pre_bn is None:
                raise ConfigError(f"{mode} ranges need batch-norm statistics on layer {layer_index}")
            numerators = range_numerators(layer.pre_bn, cfg.resolved_lambda())
            out[mode] = np.array([numerators.max()]) if mode == "static" else numerators
        elif mode == "dynamic":
            _, inputs = forward_reference(graph, batch, capture="inputs")
            x = inputs[weighted.index(layer_index)]
            out[mode] = np.abs(x.reshape(x.shape[0], -1)).max(axis=1)
        else:
            raise ConfigError(f"unknown mode {mode!r}")
    return out


def write_ranges_csv(ranges_by_mode: dict[str, np.ndarray], layer_index: int, fh):
    fh.write("layer,mode,index,range\n")
    for mode in ranges_by_mode:
        for idx, value in enumerate(ranges_by_mode[mode]):
            fh.write(f"{layer_index},{mode},{idx},{float(value)!r}\n")


def lambda_sweep(
    graph: ModelGraph,
    batch: np.ndarray,
    labels: np.ndarray,
    lambda_grid: list[float],
    cfg: QuantConfig,
) -> list[tuple[float, float]]:
    """Top-1 accuracy as a function of the sensitivity parameter."""
    if not lambda_grid:
        raise ConfigError("lambda grid is empty")
    points = []
    for lam in lambda_grid:
        qmodel = quantize_model(graph, replace(cfg, lam=float(lam)))
        points.append((float(lam), top1(forward_quantized(qmodel, batch), labels)))
    return points


def write_sweep_csv(points: list[tuple[float, float]], fh):
    fh.write("lambda,top1\n")
    for lam, acc in points:
        fh.write(f"{lam!r},{acc!r}\n")


def evaluate(model, batch: np.ndarray, labels: np.ndarray | None, norm: str = "l2") -> dict:
    """Top-1 and output-error summary for a model or quantized model.

    Full-precision graphs evaluate against themselves (zero error); quantized
    models evaluate against the reference forward pass of their embedded
    full-precision weights.
    """
    if isinstance(model, ModelGraph):
        logits = forward_reference(model, batch)
        reference = logits
        mode, config = "reference", None
    else:
        logits = forward_quantized(model, batch)
        reference = forward_reference(model.graph, batch)
        mode = model.mode
        config = {
            "w_bits": model.config.w_bits,
            "a_bits": model.config.a_bits,
            "lambda": model.resolved_lambda,
            "lambda_auto": model.config.lam is None,
            "weight_granularity": model.config.weight_granularity,
        }
    norms = _row_norms(reference - logits, norm)
    return {
        "mode": mode,
        "config": config,
        "samples": int(batch.shape[0]),
        "top1": top1(logits, labels) if labels is not None else None,
        "mean_output_error": float(norms.mean()),
        "max_output_error": float(norms.max()),
        "error_norm": norm,
    }


def compare_grid(
    graph: ModelGraph,
    batch: np.ndarray,
    labels: np.ndarray | None,
    modes: list[str],
    a_bits_list: list[int],
    w_bits: int,
    lam: float | None,
    weight_granularity: str = "per-channel",
    seed: int = 0,
    with_timing: bool = False,
    timing_repetitions: int = 5,
    metadata: dict | None = None,
) -> dict:
    """Evaluate every (mode, a_bits) cell of the comparison grid.

    Per-sample times are measured only when requested: wall-clock values are
    not reproducible, and reports must be byte-identical across reruns by
    default.
    """
    if not modes or not a_bits_list:
        raise ConfigError("comparison grid is empty")
    reference = forward_reference(graph, batch)
    cells = []
    for mode in modes:
        for a_bits in a_bits_list:
            cfg = QuantConfig(
                w_bits=w_bits,
                a_bits=int(a_bits),
                lam=lam,
                mode=mode,
                weight_granularity=weight_granularity,
            )
            qmodel = quantize_model(graph, cfg)
            logits = forward_quantized(qmodel, batch)
            norms = _row_norms(reference - logits, "l2")
            per_sample_time = None
            if with_timing:
                timing = time_modes(graph, [cfg], batch, timing_repetitions)[0]
                per_sample_time = timing.median_per_sample
            cells.append(
                {
                    "mode": mode,
                    "w_bits": w_bits,
                    "a_bits": int(a_bits),
                    "lambda": cfg.resolved_lambda(),
                    "top1": top1(logits, labels) if labels is not None else None,
                    "mean_output_error": float(norms.mean()),
                    "per_sample_time": per_sample_time,
                }
            )
    meta = {
        "w_bits": w_bits,
        "a_bits": [int(a) for a in a_bits_list],
        "modes": list(modes),
        "lambda": "auto" if lam is None else float(lam),
        "weight_granularity": weight_granularity,
        "seed": seed,
        "reference_top1": top1(reference, labels) if labels is not None else None,
    }
    meta.update(metadata or {})
    return {"metadata": meta, "cells": cells}


def report_json(report: dict) -> str:
    """Deterministic JSON encoding: sorted keys, fixed layout, newline-terminated."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
