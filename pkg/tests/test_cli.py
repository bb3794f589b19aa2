import json

import numpy as np
import pytest

from spiq.cli import main
from spiq.modelio import load_batch


@pytest.fixture
def workspace(tmp_path):
    """A generated model and labeled batch to drive the commands."""
    model = tmp_path / "model.spiqmdl"
    batch = tmp_path / "batch.spiqmdl"
    code = main(
        [
            "genfixture", "--template", "mlp-3x64", "--seed", "3",
            "--batch-size", "64", "--out-model", str(model), "--out-batch", str(batch),
        ]
    )
    assert code == 0
    return tmp_path, model, batch


def run(*args) -> int:
    return main([str(a) for a in args])


class TestGenfixture:
    def test_seed_determinism(self, tmp_path):
        files = []
        for tag in ("a", "b"):
            m, b = tmp_path / f"m{tag}", tmp_path / f"b{tag}"
            assert run("genfixture", "--template", "cnn-2conv1fc", "--seed", 7,
                       "--batch-size", 16, "--out-model", m, "--out-batch", b) == 0
            files.append((m.read_bytes(), b.read_bytes()))
        assert files[0] == files[1]

    def test_unknown_template_is_usage_error(self, tmp_path):
        code = run("genfixture", "--template", "resnet", "--seed", 0,
                   "--out-model", tmp_path / "m", "--out-batch", tmp_path / "b")
        assert code == 2


class TestQuantize:
    def test_writes_quantized_model_deterministically(self, workspace):
        tmp, model, _ = workspace
        outs = []
        for tag in ("a", "b"):
            out = tmp / f"q{tag}"
            assert run("quantize", "--model", model, "--wbits", 8, "--abits", 4,
                       "--mode", "spiq", "--lambda", "auto", "--out", out) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    @pytest.mark.parametrize("abits,expected", [(4, "4.0"), (8, "8.0")])
    def test_auto_lambda_recorded_in_manifest(self, workspace, abits, expected):
        tmp, model, _ = workspace
        out = tmp / "q.spiqmdl"
        assert run("quantize", "--model", model, "--wbits", 8, "--abits", abits,
                   "--mode", "spiq", "--lambda", "auto", "--out", out) == 0
        raw = out.read_bytes()
        mlen = int.from_bytes(raw[8:12], "little")
        manifest = json.loads(raw[12 : 12 + mlen].decode())
        assert manifest["quantized"]["lambda"] == expected
        assert manifest["quantized"]["lambda_auto"] is True

    def test_static_mode_without_bn_exits_3(self, tmp_path, workspace):
        # strip the statistics by rebuilding a bare model
        from spiq.modelio import LayerSpec, ModelGraph, save_model

        bare = tmp_path / "bare.spiqmdl"
        save_model(
            ModelGraph((4, 1, 1), (LayerSpec(kind="flatten"),
                                   LayerSpec(kind="fc", weights=np.eye(4)))),
            bare,
        )
        assert run("quantize", "--model", bare, "--wbits", 8, "--abits", 8,
                   "--mode", "static", "--out", tmp_path / "q") == 3

    def test_corrupt_model_exits_2(self, workspace):
        tmp, model, _ = workspace
        bad = tmp / "bad.spiqmdl"
        bad.write_bytes(b"JUNKJUNK" + model.read_bytes()[8:])
        assert run("quantize", "--model", bad, "--wbits", 8, "--abits", 8,
                   "--mode", "spiq", "--out", tmp / "q") == 2

    def test_missing_file_exits_2(self, workspace):
        tmp, _, _ = workspace
        assert run("quantize", "--model", tmp / "nope", "--wbits", 8, "--abits", 8,
                   "--mode", "spiq", "--out", tmp / "q") == 2

    def test_unknown_flag_is_error(self, workspace):
        tmp, model, _ = workspace
        assert run("quantize", "--model", model, "--wbits", 8, "--abits", 8,
                   "--mode", "spiq", "--out", tmp / "q", "--frobnicate") == 2


class TestEval:
    def test_fp32_model_matches_reference(self, workspace, capsys):
        tmp, model, batch = workspace
        out = tmp / "report.json"
        assert run("eval", "--model", model, "--batch", batch, "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["mode"] == "reference"
        assert report["top1"] == 1.0
        assert report["mean_output_error"] == 0.0

    def test_quantized_eval_deterministic(self, workspace):
        tmp, model, batch = workspace
        q = tmp / "q.spiqmdl"
        run("quantize", "--model", model, "--wbits", 8, "--abits", 4, "--mode", "dynamic",
            "--out", q)
        reports = []
        for tag in ("a", "b"):
            out = tmp / f"r{tag}.json"
            assert run("eval", "--model", q, "--batch", batch, "--out", out) == 0
            reports.append(out.read_bytes())
        assert reports[0] == reports[1]

    def test_labelless_batch_needs_no_accuracy_flag(self, workspace):
        tmp, model, batch = workspace
        inputs, _ = load_batch(batch)
        from spiq.modelio import save_batch

        unlabeled = tmp / "unlabeled.spiqmdl"
        save_batch(inputs, None, unlabeled)
        assert run("eval", "--model", model, "--batch", unlabeled) == 3
        assert run("eval", "--model", model, "--batch", unlabeled, "--no-accuracy") == 0

    def test_feature_dump(self, workspace):
        tmp, model, batch = workspace
        q = tmp / "q.spiqmdl"
        run("quantize", "--model", model, "--wbits", 8, "--abits", 8, "--mode", "spiq",
            "--out", q)
        feats = tmp / "feats"
        assert run("eval", "--model", q, "--batch", batch, "--features-out", feats) == 0
        dumped = sorted(feats.glob("features_layer*.spiqmdl"))
        assert len(dumped) == 3  # three fc layers
        tensors, _ = load_batch(dumped[0])
        assert tensors.shape == (64, 64, 1, 1)


class TestCompare:
    def test_grid_and_determinism(self, workspace):
        tmp, model, batch = workspace
        outs = []
        for tag in ("a", "b"):
            out = tmp / f"cmp{tag}.json"
            assert run("compare", "--model", model, "--batch", batch,
                       "--modes", "static,spiq", "--abits-range", "4..6",
                       "--wbits", 8, "--out", out) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        report = json.loads(outs[0])
        assert len(report["cells"]) == 6
        assert report["metadata"]["reference_top1"] == 1.0

    def test_empty_range_is_usage_error(self, workspace):
        tmp, model, batch = workspace
        assert run("compare", "--model", model, "--batch", batch,
                   "--abits-range", "6..4", "--out", tmp / "x.json") == 2

    def test_quantized_model_rejected(self, workspace):
        tmp, model, batch = workspace
        q = tmp / "q.spiqmdl"
        run("quantize", "--model", model, "--wbits", 8, "--abits", 8, "--mode", "spiq",
            "--out", q)
        assert run("compare", "--model", q, "--batch", batch, "--out", tmp / "x.json") == 3


class TestRanges:
    def test_csv_header_and_figures(self, workspace):
        tmp, model, batch = workspace
        out = tmp / "ranges.csv"
        figs = tmp / "figs"
        assert run("ranges", "--model", model, "--batch", batch, "--layer", 1,
                   "--out", out, "--figures", figs) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "layer,mode,index,range"
        png = figs / "ranges_layer001.png"
        assert png.exists() and png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_bad_layer_exits_3(self, workspace):
        tmp, model, batch = workspace
        assert run("ranges", "--model", model, "--batch", batch, "--layer", 0,
                   "--out", tmp / "r.csv") == 3  # layer 0 is the flatten


class TestSweepAndBench:
    def test_sweep_csv_and_figure(self, workspace):
        tmp, model, batch = workspace
        out = tmp / "sweep.csv"
        figs = tmp / "figs"
        assert run("sweep", "--model", model, "--batch", batch, "--lambdas", "2,4,8",
                   "--abits", 4, "--out", out, "--figures", figs) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "lambda,top1"
        assert len(lines) == 4
        assert (figs / "sweep.png").exists()

    def test_bench_reports_and_boost(self, workspace, capsys):
        tmp, model, batch = workspace
        out = tmp / "bench.json"
        assert run("bench", "--model", model, "--batch", batch, "--repetitions", 3,
                   "--out", out) == 0
        printed = capsys.readouterr().out
        assert "static" in printed and "dynamic" in printed and "spiq" in printed
        assert "boost" in printed
        report = json.loads(out.read_text())
        assert set(report["medians_per_sample"]) == {"static", "dynamic", "spiq"}
        assert report["repetitions"] == 3

    def test_bench_rejects_too_few_repetitions(self, workspace):
        tmp, model, batch = workspace
        assert run("bench", "--model", model, "--batch", batch, "--repetitions", 1) == 3
