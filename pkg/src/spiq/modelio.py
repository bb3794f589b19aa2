"""Bit-exact serialization of models, quantized models, and tensor batches.

Container layout (all integers little-endian):

* bytes 0-7: magic ``SPIQMDL`` plus a one-byte format version (``1``)
* bytes 8-11: uint32 byte length of the manifest
* UTF-8 JSON manifest
* concatenated raw blobs

The manifest describes layer kinds, shapes, activation flags and, for
quantized models, the quantization mode and scales. Blobs hold tensor data:
float32 for weights, biases, batch-norm vectors and batches; int32 for
quantized weights and labels. Scales are stored in the manifest as float64
decimal strings so they survive the JSON round trip exactly. Serialization
is deterministic: identical inputs produce identical bytes.

The loader validates everything it reads and raises a distinct
:class:`~spiq.errors.FormatError` subclass per failure mode; it never lets a
malformed file escalate into an unrelated exception.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    LengthMismatchError,
    ManifestError,
    TruncatedFileError,
    UnknownLayerKindError,
    UnsupportedVersionError,
)
from .ranges import BatchNormStats

MAGIC = b"SPIQMDL"
VERSION = b"1"
HEADER_LEN = 12

KIND_FC = "fc"
KIND_CONV = "conv"
KIND_FLATTEN = "flatten"
LAYER_KINDS = (KIND_FC, KIND_CONV, KIND_FLATTEN)

ACTIVATIONS = ("none", "relu")
MODES = ("static", "dynamic", "spiq")
GRANULARITIES = ("per-layer", "per-channel")

# int64 accumulators stay exact as long as beta^2 * fan_in stays far below 2^63
MAX_FAN_IN = 1 << 20

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward graph.

    FC weights are ``[n_in, n_out]``; conv kernels are ``[Cout, Cin, k, k]``
    with square kernels, zero padding, and cross-correlation semantics.
    ``pre_bn`` carries the per-channel moments of the tensor this layer
    consumes; it is required for static and per-channel input quantization.
    """

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    pre_bn: BatchNormStats | None = None
    activation: str = "none"
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kind == KIND_FLATTEN:
            if self.weights is not None or self.bias is not None or self.pre_bn is not None:
                raise ConfigError("flatten layers carry no weights, bias, or statistics")
            return
        if self.weights is None:
            raise ConfigError(f"{self.kind} layer needs weights")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.kind == KIND_FC and w.ndim != 2:
            raise ConfigError(f"FC weights must be a matrix, got shape {tuple(w.shape)}")
        if self.kind == KIND_CONV:
            if w.ndim != 4 or w.shape[2] != w.shape[3]:
                raise ConfigError(f"conv kernel must be [Cout, Cin, k, k], got {tuple(w.shape)}")
            if self.stride < 1 or self.padding < 0:
                raise ConfigError(f"bad conv stride/padding: {self.stride}/{self.padding}")
        if self.bias is not None:
            b = np.ascontiguousarray(self.bias, dtype=np.float64)
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)
            if b.ndim != 1 or b.shape[0] != self.out_channels:
                raise ConfigError(
                    f"bias length {b.shape} does not match {self.out_channels} output channels"
                )

    @property
    def in_channels(self) -> int:
        return self.weights.shape[0] if self.kind == KIND_FC else self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1] if self.kind == KIND_FC else self.weights.shape[0]

    @property
    def fan_in(self) -> int:
        if self.kind == KIND_FC:
            return self.weights.shape[0]
        return self.weights.shape[1] * self.weights.shape[2] * self.weights.shape[3]


@dataclass(frozen=True)
class ModelGraph:
    """Ordered layers plus the CHW extents of the inputs they expect."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise ConfigError(f"input shape must be positive CHW, got {self.input_shape}")
        self._validate_composition()

    def _validate_composition(self):
        c, h, w = self.input_shape
        flat = None  # feature count once the graph has flattened
        for i, layer in enumerate(self.layers):
            if layer.kind == KIND_FLATTEN:
                if flat is not None:
                    raise ConfigError(f"layer {i}: graph is already flat")
                flat = c * h * w
                continue
            expected = flat if flat is not None else c
            if layer.pre_bn is not None and layer.pre_bn.channels != expected:
                raise ConfigError(
                    f"layer {i}: batch-norm stats cover {layer.pre_bn.channels} channels, "
                    f"input has {expected}"
                )
            if layer.fan_in > MAX_FAN_IN:
                raise ConfigError(
                    f"layer {i}: fan-in {layer.fan_in} exceeds the overflow-safe cap {MAX_FAN_IN}"
                )
            if layer.kind == KIND_FC:
                if flat is None:
                    raise ConfigError(f"layer {i}: FC layer needs a flattened input")
                if layer.weights.shape[0] != flat:
                    raise ConfigError(
                        f"layer {i}: FC expects {layer.weights.shape[0]} features, "
                        f"previous layer provides {flat}"
                    )
                flat = layer.weights.shape[1]
            else:  # conv
                if flat is not None:
                    raise ConfigError(f"layer {i}: conv layer after flatten")
                c_out, c_in, k, _ = layer.weights.shape
                if c_in != c:
                    raise ConfigError(
                        f"layer {i}: conv expects {c_in} channels, input has {c}"
                    )
                h_out = (h + 2 * layer.padding - k) // layer.stride + 1
                w_out = (w + 2 * layer.padding - k) // layer.stride + 1
                if k > h + 2 * layer.padding or k > w + 2 * layer.padding or h_out < 1:
                    raise ConfigError(f"layer {i}: kernel {k} too large for input {h}x{w}")
                c, h, w = c_out, h_out, w_out

    def activation_shapes(self) -> list[tuple]:
        """Shape (without batch axis) of every layer's input tensor."""
        shapes = []
        c, h, w = self.input_shape
        flat = None
        for layer in self.layers:
            shapes.append((flat,) if flat is not None else (c, h, w))
            if layer.kind == KIND_FLATTEN:
                flat = c * h * w
            elif layer.kind == KIND_FC:
                flat = layer.weights.shape[1]
            else:
                c_out, _, k, _ = layer.weights.shape
                h = (h + 2 * layer.padding - k) // layer.stride + 1
                w = (w + 2 * layer.padding - k) // layer.stride + 1
                c = c_out
        return shapes


@dataclass(frozen=True)
class QuantConfig:
    """Bit-widths, sensitivity, mode, and weight granularity for one run."""

    w_bits: int = 8
    a_bits: int = 8
    lam: float | None = None  # None = auto (lambda defaults to a_bits)
    mode: str = "spiq"
    weight_granularity: str = "per-channel"

    def __post_init__(self):
        for bits in (self.w_bits, self.a_bits):
            if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 8:
                raise ConfigError(f"bit-width must be an integer in [2, 8], got {bits!r}")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown quantization mode {self.mode!r}")
        if self.weight_granularity not in GRANULARITIES:
            raise ConfigError(f"unknown weight granularity {self.weight_granularity!r}")

    def resolved_lambda(self) -> float:
        return float(self.a_bits) if self.lam is None else float(self.lam)


# ---------------------------------------------------------------------------
# container primitives


def _format_float(x: float) -> str:
    return repr(float(x))


def _format_scale(scale) -> str | list[str]:
    if isinstance(scale, np.ndarray):
        return [_format_float(v) for v in scale]
    return _format_float(scale)


def _parse_scale(value) -> float | np.ndarray:
    try:
        if isinstance(value, list):
            return np.array([float(v) for v in value], dtype=np.float64)
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"bad scale entry: {exc}") from exc


class _BlobWriter:
    def __init__(self):
        self.entries = []
        self.chunks = []
        self.offset = 0

    def add(self, arr: np.ndarray, dtype: str) -> int:
        data = np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes()
        self.entries.append(
            {
                "dtype": dtype,
                "length": len(data),
                "offset": self.offset,
                "shape": [int(v) for v in arr.shape],
            }
        )
        self.chunks.append(data)
        self.offset += len(data)
        return len(self.entries) - 1


def _write_container(path, manifest: dict, blobs: _BlobWriter):
    manifest = dict(manifest)
    manifest["blobs"] = blobs.entries
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + VERSION)
        fh.write(len(encoded).to_bytes(4, "little"))
        fh.write(encoded)
        for chunk in blobs.chunks:
            fh.write(chunk)


class _BlobReader:
    def __init__(self, manifest: dict, data: bytes, base: int):
        self.data = data
        self.base = base
        entries = manifest.get("blobs")
        if not isinstance(entries, list):
            raise ManifestError("manifest has no blob table")
        self.entries = entries
        end = 0
        for i, entry in enumerate(entries):
            try:
                offset = int(entry["offset"])
                length = int(entry["length"])
                dtype = entry["dtype"]
                shape = tuple(int(v) for v in entry["shape"])
            except (TypeError, KeyError, ValueError, AttributeError) as exc:
                raise ManifestError(f"blob {i}: malformed table entry") from exc
            if dtype not in _DTYPES:
                raise ManifestError(f"blob {i}: unknown dtype {dtype!r}")
            if offset != end or length < 0:
                raise ManifestError(f"blob {i}: non-contiguous blob table")
            count = 1
            for extent in shape:  # exact python arithmetic, no int64 overflow
                count *= extent
            expected = count * _DTYPES[dtype].itemsize
            if expected != length:
                raise LengthMismatchError(
                    f"blob {i}: shape {shape} needs {expected} bytes, table declares {length}"
                )
            end = offset + length
        if base + end > len(data):
            raise TruncatedFileError(
                f"blob section needs {end} bytes, file provides {len(data) - base}"
            )
        if base + end < len(data):
            raise LengthMismatchError(
                f"{len(data) - base - end} trailing bytes beyond the declared blobs"
            )

    def read(self, index) -> np.ndarray:
        if not isinstance(index, int) or not 0 <= index < len(self.entries):
            raise ManifestError(f"blob reference {index!r} out of range")
        entry = self.entries[index]
        start = self.base + int(entry["offset"])
        try:
            arr = np.frombuffer(
                self.data[start : start + int(entry["length"])], dtype=_DTYPES[entry["dtype"]]
            )
            arr = arr.reshape(tuple(int(v) for v in entry["shape"]))
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"blob {index}: {exc}") from exc
        if entry["dtype"] == "f32":
            return arr.astype(np.float64)
        return arr.astype(np.int32)


def _read_container(path) -> tuple[dict, _BlobReader]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < HEADER_LEN:
        raise TruncatedFileError(f"file is {len(data)} bytes, header needs {HEADER_LEN}")
    if data[:7] != MAGIC:
        raise BadMagicError(f"bad magic {data[:8]!r}")
    if data[7:8] != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {data[7:8]!r}")
    manifest_len = int.from_bytes(data[8:12], "little")
    if HEADER_LEN + manifest_len > len(data):
        raise TruncatedFileError(
            f"manifest declares {manifest_len} bytes, file holds {len(data) - HEADER_LEN}"
        )
    try:
        manifest = json.loads(data[HEADER_LEN : HEADER_LEN + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestError("manifest must be a JSON object")
    return manifest, _BlobReader(manifest, data, HEADER_LEN + manifest_len)


def container_kind(path) -> str:
    """Peek at a container: 'model', 'quantized-model', or 'batch'."""
    manifest, _ = _read_container(path)
    kind = manifest.get("container")
    if kind == "model":
        return "quantized-model" if "quantized" in manifest else "model"
    if kind == "batch":
        return "batch"
    raise ManifestError(f"unknown container kind {kind!r}")


# ---------------------------------------------------------------------------
# models


def _model_sections(model: ModelGraph, blobs: _BlobWriter) -> dict:
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind, "activation": layer.activation}
        if layer.kind == KIND_CONV:
            entry["conv"] = {"stride": layer.stride, "padding": layer.padding}
        if layer.weights is not None:
            entry["weights"] = blobs.add(layer.weights, "f32")
        if layer.bias is not None:
            entry["bias"] = blobs.add(layer.bias, "f32")
        if layer.pre_bn is not None:
            entry["bn_mean"] = blobs.add(layer.pre_bn.mean, "f32")
            entry["bn_variance"] = blobs.add(layer.pre_bn.variance, "f32")
        layers.append(entry)
    return {
        "container": "model",
        "input_shape": list(model.input_shape),
        "layers": layers,
    }


def save_model(model: ModelGraph, path):
    """Write a full-precision model; float data is stored as float32."""
    blobs = _BlobWriter()
    manifest = _model_sections(model, blobs)
    _write_container(path, manifest, blobs)


def _graph_from_manifest(manifest: dict, blobs: _BlobReader) -> ModelGraph:
    raw_layers = manifest.get("layers")
    input_shape = manifest.get("input_shape")
    if not isinstance(raw_layers, list) or not isinstance(input_shape, list):
        raise ManifestError("model manifest needs 'layers' and 'input_shape'")
    layers = []
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict):
            raise ManifestError(f"layer {i}: entry must be an object")
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise UnknownLayerKindError(f"layer {i}: unknown kind {kind!r}")
        activation = entry.get("activation", "none")
        if activation not in ACTIVATIONS:
            raise ManifestError(f"layer {i}: unknown activation {activation!r}")
        weights = blobs.read(entry["weights"]) if "weights" in entry else None
        bias = blobs.read(entry["bias"]) if "bias" in entry else None
        pre_bn = None
        if "bn_mean" in entry or "bn_variance" in entry:
            if "bn_mean" not in entry or "bn_variance" not in entry:
                raise ManifestError(f"layer {i}: batch-norm needs both mean and variance")
            try:
                pre_bn = BatchNormStats(blobs.read(entry["bn_mean"]), blobs.read(entry["bn_variance"]))
            except ConfigError as exc:
                raise ManifestError(f"layer {i}: {exc}") from exc
        conv = entry.get("conv", {})
        try:
            layers.append(
                LayerSpec(
                    kind=kind,
                    weights=weights,
                    bias=bias,
                    pre_bn=pre_bn,
                    activation=activation,
                    stride=int(conv.get("stride", 1)),
                    padding=int(conv.get("padding", 0)),
                )
            )
        except (ConfigError, TypeError, ValueError, AttributeError) as exc:
            raise ManifestError(f"layer {i}: {exc}") from exc
    try:
        return ModelGraph(tuple(input_shape), tuple(layers))
    except (ConfigError, TypeError, ValueError) as exc:
        raise ManifestError(f"inconsistent model description: {exc}") from exc


def load_model(path) -> ModelGraph:
    """Load the full-precision sections of a model container."""
    manifest, blobs = _read_container(path)
    if manifest.get("container") != "model":
        raise ManifestError(f"expected a model container, got {manifest.get('container')!r}")
    return _graph_from_manifest(manifest, blobs)


# ---------------------------------------------------------------------------
# quantized models


def save_quantized_model(qmodel, path):
    """Write a quantized model: the original sections plus a quantized block.

    Keeping the full-precision sections makes a quantized file self-contained
    for evaluation against its own reference output.
    """
    from .engine import QuantizedModel, ScalarQuantLayer  # deferred: engine imports this module

    assert isinstance(qmodel, QuantizedModel)
    blobs = _BlobWriter()
    manifest = _model_sections(qmodel.graph, blobs)
    cfg = qmodel.config
    qlayers = []
    for payload in qmodel.layers:
        if payload is None:
            qlayers.append(None)
            continue
        if isinstance(payload, ScalarQuantLayer):
            entry = {
                "q_weights": blobs.add(payload.q_weights.q, "i32"),
                "weight_scale": _format_scale(payload.q_weights.params.scale),
                "weight_range": _format_scale(payload.weight_range),
            }
            if payload.input_scale is not None:
                entry["input_scale"] = _format_float(payload.input_scale)
        else:  # FoldedLayer
            entry = {
                "q_weights": blobs.add(payload.q_weights.q, "i32"),
                "weight_scale": _format_scale(payload.output_scale),
                "input_scales": [_format_float(v) for v in payload.input_scales],
            }
        qlayers.append(entry)
    manifest["quantized"] = {
        "mode": qmodel.mode,
        "w_bits": cfg.w_bits,
        "a_bits": cfg.a_bits,
        "lambda": _format_float(qmodel.resolved_lambda),
        "lambda_auto": cfg.lam is None,
        "weight_granularity": cfg.weight_granularity,
        "layers": qlayers,
    }
    _write_container(path, manifest, blobs)


def load_quantized_model(path):
    """Reload a quantized model exactly as stored (nothing is recomputed)."""
    from .engine import QuantizedModel, ScalarQuantLayer
    from .folding import FoldedLayer
    from .quant import OUTPUT_CHANNEL, QuantParams, QuantizedTensor

    manifest, blobs = _read_container(path)
    if manifest.get("container") != "model" or "quantized" not in manifest:
        raise ManifestError("not a quantized model container")
    graph = _graph_from_manifest(manifest, blobs)
    q = manifest["quantized"]
    try:
        mode = q["mode"]
        config = QuantConfig(
            w_bits=int(q["w_bits"]),
            a_bits=int(q["a_bits"]),
            lam=None if q["lambda_auto"] else float(q["lambda"]),
            mode=mode,
            weight_granularity=q["weight_granularity"],
        )
        entries = q["layers"]
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise ManifestError(f"bad quantized section: {exc}") from exc
    if len(entries) != len(graph.layers):
        raise ManifestError(
            f"quantized section covers {len(entries)} layers, model has {len(graph.layers)}"
        )
    payloads = []
    for i, (entry, layer) in enumerate(zip(entries, graph.layers)):
        if entry is None:
            if layer.kind != KIND_FLATTEN:
                raise ManifestError(f"layer {i}: missing quantized payload")
            payloads.append(None)
            continue
        try:
            q_ints = blobs.read(entry["q_weights"])
            if mode == "spiq":
                output_scale = _parse_scale(entry["weight_scale"])
                input_scales = _parse_scale(entry["input_scales"])
                payloads.append(
                    FoldedLayer(
                        q_weights=QuantizedTensor(
                            q_ints, QuantParams(config.w_bits, output_scale, OUTPUT_CHANNEL)
                        ),
                        input_scales=input_scales,
                        output_scale=output_scale,
                        a_bits=config.a_bits,
                        bias=layer.bias,
                    )
                )
            else:
                scale = _parse_scale(entry["weight_scale"])
                axis = OUTPUT_CHANNEL if isinstance(scale, np.ndarray) else None
                payloads.append(
                    ScalarQuantLayer(
                        q_weights=QuantizedTensor(q_ints, QuantParams(config.w_bits, scale, axis)),
                        weight_range=_parse_scale(entry["weight_range"]),
                        input_scale=float(entry["input_scale"]) if "input_scale" in entry else None,
                    )
                )
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise ManifestError(f"layer {i}: bad quantized payload: {exc}") from exc
    try:
        return QuantizedModel(graph=graph, mode=mode, config=config, layers=tuple(payloads))
    except (ConfigError, ValueError) as exc:
        raise ManifestError(f"inconsistent quantized model: {exc}") from exc


# ---------------------------------------------------------------------------
# batches


def save_batch(inputs: np.ndarray, labels: np.ndarray | None, path):
    """Write an NCHW batch (float32) with optional int32 labels."""
    if inputs.ndim != 4:
        raise ConfigError(f"batch inputs must be NCHW, got shape {tuple(inputs.shape)}")
    if labels is not None and (labels.ndim != 1 or labels.shape[0] != inputs.shape[0]):
        raise ConfigError(
            f"labels shape {tuple(np.shape(labels))} does not match batch size {inputs.shape[0]}"
        )
    blobs = _BlobWriter()
    manifest = {"container": "batch", "inputs": blobs.add(inputs, "f32")}
    if labels is not None:
        manifest["labels"] = blobs.add(np.asarray(labels, dtype=np.int32), "i32")
    _write_container(path, manifest, blobs)


def load_batch(path) -> tuple[np.ndarray, np.ndarray | None]:
    manifest, blobs = _read_container(path)
    if manifest.get("container") != "batch":
        raise ManifestError(f"expected a batch container, got {manifest.get('container')!r}")
    if "inputs" not in manifest:
        raise ManifestError("batch manifest has no inputs")
    inputs = blobs.read(manifest["inputs"])
    if inputs.ndim != 4:
        raise ManifestError(f"batch inputs must be NCHW, got shape {tuple(inputs.shape)}")
    labels = None
    if "labels" in manifest:
        labels = blobs.read(manifest["labels"])
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ManifestError(
                f"labels length {labels.shape} does not match batch size {inputs.shape[0]}"
            )
    inputs.setflags(write=False)
    return inputs, labels


# ---------------------------------------------------------------------------
# fixture generation


def _f32(arr) -> np.ndarray:
    """Narrow to float32 so in-memory values equal their on-disk encoding."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def _relu_moments(mu: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of max(Z, 0) for Z ~ N(mu, sigma^2), elementwise."""
    alpha = mu / sigma
    pdf = np.exp(-0.5 * alpha**2) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * (1.0 + np.array([math.erf(a / math.sqrt(2.0)) for a in alpha]))
    e1 = mu * cdf + sigma * pdf
    e2 = (mu**2 + sigma**2) * cdf + mu * sigma * pdf
    return e1, np.maximum(e2 - e1**2, 1e-6)


_TEMPLATES = {
    # kind, out_channels, kernel, stride, padding, activation
    "mlp-3x64": {
        "input_shape": (16, 1, 1),
        "layers": [
            (KIND_FLATTEN,),
            (KIND_FC, 64, "relu"),
            (KIND_FC, 64, "relu"),
            (KIND_FC, 10, "none"),
        ],
    },
    "cnn-2conv1fc": {
        "input_shape": (3, 24, 24),
        "layers": [
            (KIND_CONV, 16, 3, 2, 0, "relu"),
            (KIND_CONV, 16, 1, 1, 0, "relu"),
            (KIND_FLATTEN,),
            (KIND_FC, 10, "none"),
        ],
    },
}


def fixture_templates() -> tuple[str, ...]:
    return tuple(sorted(_TEMPLATES))


def generate_fixture(
    template: str, seed: int, batch_size: int = 256
) -> tuple[ModelGraph, np.ndarray, np.ndarray]:
    """Build a seeded test network, a matching input batch, and labels.

    Weights are drawn and then rescaled so each layer's pre-activation
    distribution has controlled per-channel moments; the declared batch-norm
    statistics are the analytically propagated moments of what actually flows
    through the network, which keeps the data-free range estimates faithful.
    The batch is Gaussian with the first layer's declared per-channel
    moments, and labels are the reference model's own top-1 decisions.
    """
    if template not in _TEMPLATES:
        raise ConfigError(f"unknown fixture template {template!r}")
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    spec = _TEMPLATES[template]
    rng = np.random.default_rng(seed)
    c0, h0, w0 = spec["input_shape"]

    # heterogeneous per-channel input distribution for the first layer
    mean = _f32(rng.normal(0.0, 0.7, c0))
    variance = _f32(np.exp(rng.uniform(math.log(0.12), math.log(1.2), c0)))
    inputs = _f32(
        rng.standard_normal((batch_size, c0, h0, w0)) * np.sqrt(variance)[None, :, None, None]
        + mean[None, :, None, None]
    )

    layers = []
    cur_mean, cur_var = mean, variance  # per-channel moments of the next layer's input
    c, h, w = c0, h0, w0
    flat = None
    for entry in spec["layers"]:
        kind = entry[0]
        if kind == KIND_FLATTEN:
            layers.append(LayerSpec(kind=KIND_FLATTEN))
            flat = c * h * w
            cur_mean = np.repeat(cur_mean, h * w)
            cur_var = np.repeat(cur_var, h * w)
            continue

        if kind == KIND_FC:
            _, n_out, activation = entry
            raw = rng.standard_normal((flat, n_out))
            e = cur_mean @ raw
            var = cur_var @ raw**2
        else:
            _, n_out, k, stride, padding, activation = entry
            raw = rng.standard_normal((n_out, c, k, k))
            e = (raw * cur_mean[None, :, None, None]).sum(axis=(1, 2, 3))
            var = (raw**2 * cur_var[None, :, None, None]).sum(axis=(1, 2, 3))

        # aim each output channel at its own pre-activation spread; the head
        # layer gets wider per-class offsets so top-1 margins stay crisp
        tau = np.exp(rng.uniform(math.log(0.3), math.log(1.5), n_out))
        mu_spread = 0.5 if activation == "relu" else 1.0
        mu = rng.normal(0.0, mu_spread, n_out) * tau
        gain = tau / np.sqrt(var)
        if kind == KIND_FC:
            weights = _f32(raw * gain[None, :])
        else:
            weights = _f32(raw * gain[:, None, None, None])
        bias = _f32(mu - e * gain)

        bn = BatchNormStats(_f32(cur_mean), _f32(cur_var))
        if kind == KIND_FC:
            layers.append(
                LayerSpec(kind=KIND_FC, weights=weights, bias=bias, pre_bn=bn, activation=activation)
            )
            flat = n_out
        else:
            layers.append(
                LayerSpec(
                    kind=KIND_CONV,
                    weights=weights,
                    bias=bias,
                    pre_bn=bn,
                    activation=activation,
                    stride=stride,
                    padding=padding,
                )
            )
            h = (h + 2 * padding - k) // stride + 1
            w = (w + 2 * padding - k) // stride + 1
            c = n_out

        if activation == "relu":
            cur_mean, cur_var = _relu_moments(mu, tau)
        else:
            cur_mean, cur_var = mu, tau**2

    graph = ModelGraph((c0, h0, w0), tuple(layers))

    from .engine import forward_reference  # deferred: engine imports this module

    logits = forward_reference(graph, inputs)
    labels = np.argmax(logits, axis=1).astype(np.int32)
    return graph, inputs, labels
