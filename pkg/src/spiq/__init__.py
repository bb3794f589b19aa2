"""Data-free post-training quantization for small feed-forward networks.

Quantizes weights and layer inputs to simulated int2..int8 using only the
model's own parameters and stored batch-norm statistics, in three modes:

* ``static``: one input scale per layer, precomputed from the statistics;
* ``dynamic``: one input scale per sample, computed at inference time;
* ``spiq``: one static input scale per channel, folded into the weights.

See the ``spiq`` command-line tool for the packaged pipeline: fixture
generation, quantization, evaluation, grid comparison, range histograms,
sensitivity sweeps, and timing benchmarks.
"""

from .engine import (
    InferenceTiming,
    QuantizedModel,
    ScalarQuantLayer,
    forward_quantized,
    forward_reference,
    quantize_model,
    time_modes,
)
from .errors import ConfigError, FormatError, ShapeError, SpiqError
from .folding import FoldedLayer, build_spiq_layer, fold_input_scales, spiq_neuron_contract
from .modelio import (
    LayerSpec,
    ModelGraph,
    QuantConfig,
    fixture_templates,
    generate_fixture,
    load_batch,
    load_model,
    load_quantized_model,
    save_batch,
    save_model,
    save_quantized_model,
)
from .quant import (
    QuantParams,
    QuantizedTensor,
    dequantize,
    levels,
    quantize,
    weight_scale_per_channel,
    weight_scale_per_layer,
)
from .ranges import (
    BatchNormStats,
    RangeConfig,
    dynamic_input_scale,
    lambda_default,
    per_channel_input_scales,
    static_input_scale,
)

__version__ = "0.1.0"

__all__ = [
    "BatchNormStats",
    "ConfigError",
    "FoldedLayer",
    "FormatError",
    "InferenceTiming",
    "LayerSpec",
    "ModelGraph",
    "QuantConfig",
    "QuantParams",
    "QuantizedModel",
    "QuantizedTensor",
    "RangeConfig",
    "ScalarQuantLayer",
    "ShapeError",
    "SpiqError",
    "build_spiq_layer",
    "dequantize",
    "dynamic_input_scale",
    "fixture_templates",
    "fold_input_scales",
    "forward_quantized",
    "forward_reference",
    "generate_fixture",
    "lambda_default",
    "levels",
    "load_batch",
    "load_model",
    "load_quantized_model",
    "per_channel_input_scales",
    "quantize",
    "quantize_model",
    "save_batch",
    "save_model",
    "save_quantized_model",
    "spiq_neuron_contract",
    "static_input_scale",
    "time_modes",
    "weight_scale_per_channel",
    "weight_scale_per_layer",
    "__version__",
]
