import numpy as np
import pytest

from conftest import random_bn, single_fc_graph
from spiq import engine
from spiq.engine import (
    InferenceTiming,
    forward_quantized,
    forward_reference,
    quantize_model,
    time_modes,
)
from spiq.errors import ConfigError, ShapeError
from spiq.folding import spiq_neuron_contract
from spiq.modelio import LayerSpec, ModelGraph, QuantConfig, generate_fixture
from spiq.ranges import BatchNormStats


def reference_oracle(graph, batch):
    """Naive per-sample reimplementation of the forward pass."""
    from test_tensor import conv2d_oracle, matmul_oracle

    outs = []
    for i in range(batch.shape[0]):
        x = batch[i : i + 1].astype(np.float64)
        flat = False
        for layer in graph.layers:
            if layer.kind == "flatten":
                x = x.reshape(1, -1)
                flat = True
                continue
            if layer.kind == "fc":
                x = matmul_oracle(x, layer.weights)
                if layer.bias is not None:
                    x = x + layer.bias[None, :]
            else:
                x = conv2d_oracle(x, layer.weights, layer.stride, layer.padding)
                if layer.bias is not None:
                    x = x + layer.bias[None, :, None, None]
            if layer.activation == "relu":
                x = np.maximum(x, 0)
        outs.append(x[0])
    return np.stack(outs)


class TestForwardReference:
    def test_zero_input_zero_bias_relu_gives_zero_logits(self):
        w = np.eye(3)
        graph = ModelGraph(
            (3, 1, 1),
            (
                LayerSpec(kind="flatten"),
                LayerSpec(kind="fc", weights=w, bias=np.zeros(3), activation="relu"),
                LayerSpec(kind="fc", weights=w, bias=np.zeros(3)),
            ),
        )
        out = forward_reference(graph, np.zeros((4, 3, 1, 1)))
        assert not out.any()

    def test_identity_chain_passthrough(self, rng):
        w = np.eye(4)
        graph = ModelGraph(
            (4, 1, 1),
            (
                LayerSpec(kind="flatten"),
                LayerSpec(kind="fc", weights=w),
                LayerSpec(kind="fc", weights=w),
            ),
        )
        x = rng.standard_normal((5, 4, 1, 1))
        np.testing.assert_array_equal(forward_reference(graph, x), x.reshape(5, 4))

    def test_matches_naive_oracle_on_fixture(self):
        graph, inputs, _ = generate_fixture("cnn-2conv1fc", seed=6, batch_size=4)
        got = forward_reference(graph, inputs)
        np.testing.assert_allclose(got, reference_oracle(graph, inputs), atol=1e-10)

    def test_matches_naive_oracle_on_mlp(self):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=6, batch_size=8)
        np.testing.assert_allclose(
            forward_reference(graph, inputs), reference_oracle(graph, inputs), atol=1e-10
        )

    def test_batch_shape_mismatch(self):
        graph, _, _ = generate_fixture("mlp-3x64", seed=0, batch_size=4)
        with pytest.raises(ShapeError):
            forward_reference(graph, np.zeros((2, 3, 1, 1)))

    def test_capture_inputs_and_outputs(self):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=0, batch_size=4)
        logits, ins = forward_reference(graph, inputs, capture="inputs")
        _, outs = forward_reference(graph, inputs, capture="outputs")
        weighted = [l for l in graph.layers if l.kind != "flatten"]
        assert len(ins) == len(outs) == len(weighted)
        np.testing.assert_array_equal(outs[-1], logits)


class TestQuantizeModel:
    def test_static_without_bn_is_config_error(self):
        graph = single_fc_graph(np.eye(3))
        with pytest.raises(ConfigError, match="batch-norm"):
            quantize_model(graph, QuantConfig(mode="static"))
        with pytest.raises(ConfigError):
            quantize_model(graph, QuantConfig(mode="spiq"))

    def test_dynamic_works_without_bn(self, rng):
        graph = single_fc_graph(rng.standard_normal((3, 2)))
        qm = quantize_model(graph, QuantConfig(mode="dynamic"))
        out = forward_quantized(qm, rng.standard_normal((4, 3, 1, 1)))
        assert out.shape == (4, 2)

    def test_mode_payload_invariants(self, rng):
        bn = random_bn(rng, 3)
        graph = single_fc_graph(rng.standard_normal((3, 2)), bn=bn)
        q_static = quantize_model(graph, QuantConfig(mode="static"))
        assert q_static.layers[1].input_scale is not None
        q_dyn = quantize_model(graph, QuantConfig(mode="dynamic"))
        assert q_dyn.layers[1].input_scale is None
        with pytest.raises(ConfigError):
            engine.QuantizedModel(
                graph=graph, mode="static", config=QuantConfig(mode="static"),
                layers=q_dyn.layers,
            )

    def test_auto_lambda_recorded(self, rng):
        graph = single_fc_graph(rng.standard_normal((3, 2)), bn=random_bn(rng, 3))
        qm = quantize_model(graph, QuantConfig(a_bits=4, mode="static"))
        assert qm.resolved_lambda == 4.0


class TestForwardQuantized:
    def test_high_precision_tracks_reference(self):
        graph, inputs, _ = generate_fixture("cnn-2conv1fc", seed=7, batch_size=64)
        reference = forward_reference(graph, inputs)
        for mode in ("static", "dynamic", "spiq"):
            qm = quantize_model(graph, QuantConfig(mode=mode))
            out = forward_quantized(qm, inputs)
            # int8 with bit-width-matched sensitivity stays close to reference
            rel = np.linalg.norm(out - reference) / np.linalg.norm(reference)
            assert rel < 0.05, f"{mode} diverged: {rel}"

    def test_top1_agreement_at_int8(self):
        graph, inputs, labels = generate_fixture("cnn-2conv1fc", seed=15, batch_size=256)
        for mode in ("static", "dynamic", "spiq"):
            qm = quantize_model(graph, QuantConfig(mode=mode))
            agreement = np.mean(np.argmax(forward_quantized(qm, inputs), 1) == labels)
            assert agreement >= 0.95

    def test_uniform_stats_spiq_is_bitwise_static(self, rng):
        w = rng.standard_normal((6, 4))
        bias = rng.standard_normal(4)
        bn = BatchNormStats(np.full(6, 0.4), np.full(6, 1.3))
        graph = single_fc_graph(w, bias=bias, bn=bn, activation="relu")
        x = rng.standard_normal((16, 6, 1, 1))
        out_static = forward_quantized(quantize_model(graph, QuantConfig(a_bits=4, mode="static")), x)
        out_spiq = forward_quantized(quantize_model(graph, QuantConfig(a_bits=4, mode="spiq")), x)
        assert np.array_equal(out_static, out_spiq)

    def test_spiq_channel_outputs_match_neuron_contract_exactly(self, rng):
        for _ in range(10):
            n_in, n_out = int(rng.integers(2, 24)), int(rng.integers(2, 12))
            w = rng.standard_normal((n_in, n_out))
            bias = rng.standard_normal(n_out) if rng.integers(2) else None
            bn = random_bn(rng, n_in)
            graph = single_fc_graph(w, bias=bias, bn=bn)
            qm = quantize_model(graph, QuantConfig(a_bits=6, mode="spiq"))
            x = rng.normal(0, 1.5, (3, n_in))
            out = forward_quantized(qm, x.reshape(3, n_in, 1, 1))
            layer = qm.layers[1]
            for i in range(3):
                for n in range(n_out):
                    assert out[i, n] == spiq_neuron_contract(x[i], layer, n)

    def test_dynamic_is_deterministic(self, rng):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=8, batch_size=32)
        qm = quantize_model(graph, QuantConfig(mode="dynamic"))
        assert np.array_equal(forward_quantized(qm, inputs), forward_quantized(qm, inputs))

    def test_per_layer_granularity_runs_all_modes(self, rng):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=8, batch_size=16)
        for mode in ("static", "dynamic", "spiq"):
            cfg = QuantConfig(mode=mode, weight_granularity="per-layer")
            out = forward_quantized(quantize_model(graph, cfg), inputs)
            assert out.shape == (16, 10)

    def test_capture_outputs_feature_maps(self):
        graph, inputs, _ = generate_fixture("cnn-2conv1fc", seed=0, batch_size=4)
        qm = quantize_model(graph, QuantConfig(mode="spiq"))
        logits, feats = forward_quantized(qm, inputs, capture="outputs")
        assert feats[0].shape[1] == 16  # first conv output channels
        np.testing.assert_array_equal(feats[-1], logits)


class TestTiming:
    def test_repetitions_below_three_rejected(self):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=0, batch_size=8)
        with pytest.raises(ConfigError):
            time_modes(graph, [QuantConfig(mode="static")], inputs, repetitions=1)

    def test_reports_all_modes_with_positive_medians(self):
        graph, inputs, _ = generate_fixture("mlp-3x64", seed=0, batch_size=32)
        configs = [QuantConfig(mode=m) for m in ("static", "dynamic", "spiq")]
        timings = time_modes(graph, configs, inputs, repetitions=3)
        assert [t.mode for t in timings] == ["static", "dynamic", "spiq"]
        for t in timings:
            assert t.median_per_sample > 0
            assert t.batch_size == 32
            assert len(t.per_sample_seconds) == 3

    def test_median_of_even_and_odd(self):
        t = InferenceTiming("static", 4, (3.0, 1.0, 2.0))
        assert t.median_per_sample == 2.0
        t = InferenceTiming("static", 4, (4.0, 1.0, 2.0, 3.0))
        assert t.median_per_sample == 2.5
