"""Data-free input-range estimation from batch-norm statistics.

Static scales cover ``|mean| + lambda * std`` of the declared per-channel
input distribution, either collapsed to one scalar per layer (max over
channels) or kept per channel. Dynamic scales are computed from the actual
sample at inference time. ``lambda`` counts the standard deviations included
in the range; the default ties it to the activation bit-width (8 for int8,
4 for int4), with a fixed 6.0 available as the conservative legacy heuristic.

The estimators use |mean| rather than the signed mean: the quantizer is
symmetric, so a negative channel mean must widen the range on the negative
side rather than shrink it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .quant import SCALE_FLOOR, levels


@dataclass(frozen=True)
class BatchNormStats:
    """Per-channel mean and variance of a layer's input distribution."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        variance = np.ascontiguousarray(self.variance, dtype=np.float64)
        if mean.ndim != 1 or variance.ndim != 1:
            raise ConfigError("batch-norm stats must be vectors")
        if mean.shape != variance.shape:
            raise ConfigError(
                f"mean and variance lengths differ: {mean.shape[0]} vs {variance.shape[0]}"
            )
        if mean.size < 1:
            raise ConfigError("batch-norm stats need at least one channel")
        if not np.all(variance >= 0):
            raise ConfigError("variance entries must be non-negative")
        mean.setflags(write=False)
        variance.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class RangeConfig:
    """Sensitivity parameter (None = auto) plus activation bit-width."""

    lam: float | None
    a_bits: int

    def __post_init__(self):
        levels(self.a_bits)
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")

    def resolved_lambda(self) -> float:
        return lambda_default(self.a_bits) if self.lam is None else float(self.lam)


def lambda_default(bits: int, heuristic: str = "bitwidth") -> float:
    """Default sensitivity: the bit-width itself, or the fixed legacy 6.0."""
    levels(bits)
    if heuristic == "bitwidth":
        return float(bits)
    if heuristic == "dfq":
        return 6.0
    raise ConfigError(f"unknown lambda heuristic {heuristic!r}")


def range_numerators(bn: BatchNormStats, lam: float) -> np.ndarray:
    """Per-channel estimated max magnitude: |mean| + lambda * sqrt(variance)."""
    return np.abs(bn.mean) + lam * np.sqrt(bn.variance)


def static_input_scale(bn: BatchNormStats, cfg: RangeConfig) -> float:
    """One scalar input scale per layer: the widest channel range over beta."""
    lam = cfg.resolved_lambda()
    beta = levels(cfg.a_bits)
    return max(float(range_numerators(bn, lam).max()) / beta, SCALE_FLOOR)


def per_channel_input_scales(bn: BatchNormStats, cfg: RangeConfig) -> np.ndarray:
    """One input scale per channel; elementwise <= the static scale."""
    lam = cfg.resolved_lambda()
    beta = levels(cfg.a_bits)
    return np.maximum(range_numerators(bn, lam) / beta, SCALE_FLOOR)


def dynamic_input_scale(x: np.ndarray, bits: int) -> float:
    """Scale from the sample itself: max|x| over the whole tensor, over beta."""
    if x.size == 0:
        raise ConfigError("dynamic scale of an empty tensor")
    return max(float(np.abs(x).max()) / levels(bits), SCALE_FLOOR)


def dynamic_input_scales_per_sample(batch: np.ndarray, bits: int) -> np.ndarray:
    """Vector of dynamic scales, one per sample of a batched tensor."""
    if batch.ndim < 2:
        raise ConfigError("per-sample scales need a batched tensor")
    reduce_axes = tuple(range(1, batch.ndim))
    return np.maximum(np.abs(batch).max(axis=reduce_axes) / levels(bits), SCALE_FLOOR)
