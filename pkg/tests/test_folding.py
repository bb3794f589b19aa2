import numpy as np
import pytest

from conftest import random_bn
from spiq.errors import ConfigError, ShapeError
from spiq.folding import FoldedLayer, build_spiq_layer, fold_input_scales, spiq_neuron_contract
from spiq.quant import SCALE_FLOOR, dequantize
from spiq.ranges import BatchNormStats, RangeConfig
from spiq.tensor import conv2d


class TestFoldInputScales:
    def test_row_scaling_example(self):
        w = np.array([[1.0, 1.0], [4.0, 4.0]])
        out = fold_input_scales(w, np.array([2.0, 0.5]))
        np.testing.assert_array_equal(out, [[2.0, 2.0], [2.0, 2.0]])

    def test_unit_scales_leave_weights_unchanged(self, rng):
        w = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(fold_input_scales(w, np.ones(5)), w)

    def test_full_precision_folding_identity_fc(self, rng):
        # dividing the input and folding the scales must cancel exactly
        for _ in range(50):
            n_in, n_out = rng.integers(2, 20, size=2)
            w = rng.standard_normal((n_in, n_out))
            s = np.exp(rng.uniform(-2, 2, n_in))
            x = rng.standard_normal((4, n_in))
            reference = x @ w
            folded = (x / s[None, :]) @ fold_input_scales(w, s)
            np.testing.assert_allclose(folded, reference, rtol=1e-10, atol=1e-12)

    def test_full_precision_folding_identity_conv(self, rng):
        for _ in range(20):
            c = int(rng.integers(1, 6))
            k = int(rng.choice([1, 3]))
            kernel = rng.standard_normal((int(rng.integers(1, 5)), c, k, k))
            s = np.exp(rng.uniform(-2, 2, c))
            x = rng.standard_normal((2, c, 6, 6))
            reference = conv2d(x, kernel)
            folded = conv2d(x / s[None, :, None, None], fold_input_scales(kernel, s))
            np.testing.assert_allclose(folded, reference, rtol=1e-10, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fold_input_scales(np.zeros((3, 2)), np.ones(2))

    def test_rank_1_rejected(self):
        with pytest.raises(ShapeError):
            fold_input_scales(np.zeros(3), np.ones(3))


class TestBuildSpiqLayer:
    def test_identity_weights_hand_computation(self):
        # unit-variance zero-mean stats at lambda=8, 8 bits:
        # each input scale is 8/127, the folded identity is (8/127) I,
        # its per-column scale is (8/127)/127, and the integers hit 127
        w = np.eye(2)
        bn = BatchNormStats(np.zeros(2), np.ones(2))
        layer = build_spiq_layer(w, None, bn, RangeConfig(8.0, 8), w_bits=8)
        np.testing.assert_allclose(layer.input_scales, [8.0 / 127, 8.0 / 127])
        np.testing.assert_allclose(layer.output_scale, [(8.0 / 127) / 127] * 2)
        np.testing.assert_array_equal(layer.q_weights.q, 127 * np.eye(2, dtype=np.int32))

    def test_all_zero_weights_degenerate(self):
        w = np.zeros((3, 2))
        bn = BatchNormStats(np.zeros(3), np.ones(3))
        layer = build_spiq_layer(w, None, bn, RangeConfig(8.0, 8), w_bits=8)
        assert not layer.q_weights.q.any()
        assert (layer.output_scale == SCALE_FLOOR).all()

    def test_missing_stats_rejected(self):
        with pytest.raises(ConfigError):
            build_spiq_layer(np.eye(2), None, None, RangeConfig(8.0, 8), w_bits=8)

    def test_output_scale_is_the_folded_per_channel_scale(self, rng):
        from spiq.quant import weight_scale_per_channel

        w = rng.standard_normal((6, 4))
        bn = random_bn(rng, 6)
        cfg = RangeConfig(None, 6)
        layer = build_spiq_layer(w, None, bn, cfg, w_bits=8)
        folded = fold_input_scales(w, layer.input_scales)
        np.testing.assert_array_equal(layer.output_scale, weight_scale_per_channel(folded, 8))

    def test_conv_kernel_folds_along_input_channels(self, rng):
        kernel = rng.standard_normal((4, 3, 3, 3))
        bn = random_bn(rng, 3)
        layer = build_spiq_layer(kernel, None, bn, RangeConfig(None, 8), w_bits=8)
        assert layer.input_scales.shape == (3,)
        assert layer.output_scale.shape == (4,)


class TestNeuronContract:
    def test_single_channel_case(self):
        w = np.array([[1.0]])
        bn = BatchNormStats(np.zeros(1), np.ones(1))
        layer = build_spiq_layer(w, None, bn, RangeConfig(8.0, 8), w_bits=8)
        x = np.array([0.5])
        expected = layer.output_scale[0] * round(0.5 / layer.input_scales[0]) * layer.q_weights.q[0, 0]
        assert abs(spiq_neuron_contract(x, layer, 0) - expected) < 1e-12

    def test_matches_direct_vector_computation(self, rng):
        from spiq.quant import INPUT_CHANNEL, QuantParams, quantize

        w = rng.standard_normal((16, 4))
        bn = random_bn(rng, 16)
        layer = build_spiq_layer(w, None, bn, RangeConfig(None, 6), w_bits=8)
        x = rng.normal(0, 1.5, 16)
        q_in = quantize(x, QuantParams(6, layer.input_scales, INPUT_CHANNEL)).q.astype(np.int64)
        direct = layer.output_scale * (q_in @ layer.q_weights.q.astype(np.int64))
        for n in range(4):
            assert spiq_neuron_contract(x, layer, n) == direct[n]

    def test_no_quantization_limit_recovers_folded_product(self, rng):
        # with real (dequantized) weights and unrounded inputs the per-neuron
        # sum is exactly the rescaled-input product
        w = rng.standard_normal((8, 3))
        bn = random_bn(rng, 8)
        layer = build_spiq_layer(w, None, bn, RangeConfig(None, 8), w_bits=8)
        x = rng.standard_normal(8)
        folded_real = dequantize(layer.q_weights)
        expected = (x / layer.input_scales) @ folded_real
        for n in range(3):
            acc = sum((x[m] / layer.input_scales[m]) * folded_real[m, n] for m in range(8))
            np.testing.assert_allclose(acc, expected[n], rtol=1e-12)

    def test_bias_added_after_dequantization(self, rng):
        w = rng.standard_normal((4, 2))
        bias = np.array([10.0, -3.0])
        bn = random_bn(rng, 4)
        layer = build_spiq_layer(w, bias, bn, RangeConfig(None, 8), w_bits=8)
        no_bias = FoldedLayer(layer.q_weights, layer.input_scales, layer.output_scale, layer.a_bits)
        x = rng.standard_normal(4)
        for n in range(2):
            assert spiq_neuron_contract(x, layer, n) == spiq_neuron_contract(x, no_bias, n) + bias[n]

    def test_conv_layer_rejected(self, rng):
        kernel = rng.standard_normal((2, 3, 3, 3))
        layer = build_spiq_layer(kernel, None, random_bn(rng, 3), RangeConfig(None, 8), w_bits=8)
        with pytest.raises(ShapeError):
            spiq_neuron_contract(np.zeros(3), layer, 0)
