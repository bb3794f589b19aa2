"""Command-line surface for the quantization pipeline.

Subcommands: genfixture, quantize, eval, compare, ranges, sweep, bench.
All flags are explicit long names; unknown flags are errors. Exit codes:
0 success, 2 file/format/usage problems, 3 configuration problems,
4 internal invariant violations. Commands that consume randomness take an
explicit ``--seed``; identical inputs and seeds produce byte-identical
output files (timing values are only included where explicitly requested,
because wall-clock measurements cannot be reproducible).
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import traceback
from pathlib import Path

import numpy as np

from . import figures, metrics
from .engine import forward_quantized, forward_reference, quantize_model, time_modes
from .errors import ConfigError, FormatError, ManifestError, SpiqError
from .modelio import (
    KIND_FLATTEN,
    ModelGraph,
    QuantConfig,
    container_kind,
    fixture_templates,
    generate_fixture,
    load_batch,
    load_model,
    load_quantized_model,
    save_batch,
    save_model,
    save_quantized_model,
)
from .ranges import RangeConfig


def _parse_lambda(text: str) -> float | None:
    if text.lower() == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"lambda must be a positive real or 'auto', got {text!r}")
    return value


def _parse_bits(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bit-width must be an integer, got {text!r}")


def _parse_modes(text: str) -> list[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def _parse_bit_range(text: str) -> list[int]:
    try:
        lo_s, hi_s = text.split("..")
        lo, hi = int(lo_s), int(hi_s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bit range must look like 'lo..hi', got {text!r}")
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty bit range {text!r}")
    return list(range(lo, hi + 1))


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of reals, got {text!r}")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _load_labeled_batch(path, need_labels: bool):
    inputs, labels = load_batch(path)
    if need_labels and labels is None:
        raise ConfigError(
            f"batch {path} carries no labels; pass --no-accuracy to evaluate without them"
        )
    return inputs, labels


def _figures_dir(args) -> Path | None:
    if getattr(args, "figures", None) is None:
        return None
    path = Path(args.figures)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_genfixture(args) -> int:
    graph, inputs, labels = generate_fixture(args.template, args.seed, args.batch_size)
    save_model(graph, args.out_model)
    save_batch(inputs, labels, args.out_batch)
    kinds = ",".join(layer.kind for layer in graph.layers)
    print(f"wrote model {args.out_model} ({kinds}) and batch {args.out_batch} "
          f"({inputs.shape[0]} samples, seed {args.seed})")
    return 0


def cmd_quantize(args) -> int:
    graph = load_model(args.model)
    config = QuantConfig(
        w_bits=args.wbits,
        a_bits=args.abits,
        lam=getattr(args, "lambda"),
        mode=args.mode,
        weight_granularity=args.weight_granularity,
    )
    qmodel = quantize_model(graph, config)
    save_quantized_model(qmodel, args.out)
    print(f"mode={qmodel.mode} w_bits={config.w_bits} a_bits={config.a_bits} "
          f"lambda={qmodel.resolved_lambda:g} granularity={config.weight_granularity}")
    for i, (layer, payload) in enumerate(zip(graph.layers, qmodel.layers)):
        if payload is None:
            print(f"  layer {i} ({layer.kind}): passthrough")
            continue
        if qmodel.mode == "spiq":
            s = payload.input_scales
            print(f"  layer {i} ({layer.kind}): input_scales[{s.size}] "
                  f"min={s.min():.6g} max={s.max():.6g}, output_scale[{payload.output_scale.size}]")
        else:
            scale = payload.q_weights.params.scale
            w_desc = (f"weight_scale[{scale.size}]" if isinstance(scale, np.ndarray)
                      else f"weight_scale={scale:.6g}")
            s_desc = f"input_scale={payload.input_scale:.6g}" if payload.input_scale is not None \
                else "input_scale=per-sample"
            print(f"  layer {i} ({layer.kind}): {s_desc} {w_desc}")
    print(f"wrote {args.out}")
    return 0


def _load_any_model(path):
    kind = container_kind(path)
    if kind == "quantized-model":
        return load_quantized_model(path)
    if kind == "model":
        return load_model(path)
    raise ManifestError(f"{path} is a batch container, expected a model")


def cmd_eval(args) -> int:
    model = _load_any_model(args.model)
    inputs, labels = _load_labeled_batch(args.batch, need_labels=not args.no_accuracy)
    if args.no_accuracy:
        labels = None
    report = metrics.evaluate(model, inputs, labels)
    report["model_id"] = _file_digest(args.model)
    report["batch_id"] = _file_digest(args.batch)
    if args.features_out is not None:
        out_dir = Path(args.features_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if isinstance(model, ModelGraph):
            graph = model
            _, feats = forward_reference(model, inputs, capture="outputs")
        else:
            graph = model.graph
            _, feats = forward_quantized(model, inputs, capture="outputs")
        weighted = [i for i, l in enumerate(graph.layers) if l.kind != KIND_FLATTEN]
        for idx, feat in zip(weighted, feats):
            nchw = feat if feat.ndim == 4 else feat.reshape(feat.shape[0], -1, 1, 1)
            save_batch(nchw.astype(np.float64), None, out_dir / f"features_layer{idx:03d}.spiqmdl")
        report["features_out"] = sorted(p.name for p in out_dir.glob("features_layer*.spiqmdl"))
    text = metrics.report_json(report)
    if args.out is not None:
        Path(args.out).write_text(text)
    acc = "n/a" if report["top1"] is None else f"{report['top1']:.4f}"
    print(f"mode={report['mode']} top1={acc} mean_output_error={report['mean_output_error']:.6g}")
    return 0


def cmd_compare(args) -> int:
    if container_kind(args.model) != "model":
        raise ConfigError(
            f"{args.model} is already quantized; compare re-quantizes every grid cell "
            "and needs the original model"
        )
    graph = load_model(args.model)
    inputs, labels = _load_labeled_batch(args.batch, need_labels=False)
    report = metrics.compare_grid(
        graph,
        inputs,
        labels,
        modes=args.modes,
        a_bits_list=args.abits_range,
        w_bits=args.wbits,
        lam=getattr(args, "lambda"),
        weight_granularity=args.weight_granularity,
        seed=args.seed,
        with_timing=args.with_timing,
        timing_repetitions=args.timing_repetitions,
        metadata={"model_id": _file_digest(args.model), "batch_id": _file_digest(args.batch)},
    )
    Path(args.out).write_text(metrics.report_json(report))
    fig_dir = _figures_dir(args)
    if fig_dir is not None and labels is not None:
        figures.render_compare_grid(report, fig_dir / "compare.png")
    for cell in report["cells"]:
        acc = "n/a" if cell["top1"] is None else f"{cell['top1']:.4f}"
        print(f"{cell['mode']:8s} a{cell['a_bits']}: top1={acc} "
              f"err={cell['mean_output_error']:.6g}")
    print(f"wrote {args.out}")
    return 0


def cmd_ranges(args) -> int:
    graph = load_model(args.model)
    inputs, _ = load_batch(args.batch)
    cfg = RangeConfig(getattr(args, "lambda"), args.abits)
    ranges_by_mode = metrics.range_histogram(graph, inputs, args.layer, args.modes, cfg)
    with open(args.out, "w") as fh:
        metrics.write_ranges_csv(ranges_by_mode, args.layer, fh)
    fig_dir = _figures_dir(args)
    if fig_dir is not None:
        figures.render_range_histogram(
            ranges_by_mode, args.layer, fig_dir / f"ranges_layer{args.layer:03d}.png"
        )
    counts = " ".join(f"{mode}={len(vals)}" for mode, vals in ranges_by_mode.items())
    print(f"layer {args.layer}: {counts}")
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    graph = load_model(args.model)
    inputs, labels = _load_labeled_batch(args.batch, need_labels=True)
    cfg = QuantConfig(
        w_bits=args.wbits,
        a_bits=args.abits,
        lam=None,
        mode=args.mode,
        weight_granularity=args.weight_granularity,
    )
    points = metrics.lambda_sweep(graph, inputs, labels, args.lambdas, cfg)
    with open(args.out, "w") as fh:
        metrics.write_sweep_csv(points, fh)
    fig_dir = _figures_dir(args)
    if fig_dir is not None:
        figures.render_sweep_curve(points, fig_dir / "sweep.png", a_bits=args.abits)
    for lam, acc in points:
        print(f"lambda={lam:g}: top1={acc:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    graph = load_model(args.model)
    inputs, _ = load_batch(args.batch)
    configs = [
        QuantConfig(w_bits=args.wbits, a_bits=args.abits, lam=getattr(args, "lambda"),
                    mode=mode, weight_granularity=args.weight_granularity)
        for mode in ("static", "dynamic", "spiq")
    ]
    timings = time_modes(graph, configs, inputs, args.repetitions)
    medians = {t.mode: t.median_per_sample for t in timings}
    print(f"{'mode':10s} {'per-sample median':>20s}")
    for mode, median in medians.items():
        print(f"{mode:10s} {median:>17.3e} s")
    boost = 100.0 * (medians["dynamic"] - medians["spiq"]) / medians["dynamic"]
    print(f"boost (static per-channel vs dynamic): {boost:.1f}%")
    if args.out is not None:
        report = {
            "batch_size": int(inputs.shape[0]),
            "repetitions": args.repetitions,
            "w_bits": args.wbits,
            "a_bits": args.abits,
            "medians_per_sample": medians,
            "boost_percent": boost,
        }
        Path(args.out).write_text(metrics.report_json(report))
        print(f"wrote {args.out}")
    fig_dir = _figures_dir(args)
    if fig_dir is not None:
        figures.render_bench_bars(medians, fig_dir / "bench.png")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiq",
        description="Data-free post-training quantization: static, dynamic, and "
        "per-channel (spiq) input scales over simulated int2..int8 inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genfixture", help="generate a seeded test model and batch")
    p.add_argument("--template", required=True, choices=fixture_templates())
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-batch", required=True)
    p.set_defaults(func=cmd_genfixture)

    p = sub.add_parser("quantize", help="quantize a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--wbits", required=True, type=_parse_bits)
    p.add_argument("--abits", required=True, type=_parse_bits)
    p.add_argument("--mode", required=True, choices=("static", "dynamic", "spiq"))
    p.add_argument("--lambda", type=_parse_lambda, default=None,
                   help="std deviations covered by static ranges; 'auto' = bit-width")
    p.add_argument("--weight-granularity", choices=("per-layer", "per-channel"),
                   default="per-channel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="top-1 and output error of a (quantized) model")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--no-accuracy", action="store_true",
                   help="evaluate without labels (error metrics only)")
    p.add_argument("--features-out", default=None,
                   help="directory for per-layer feature-map dumps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="accuracy/error grid over modes and input bits")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--modes", type=_parse_modes, default=["static", "dynamic", "spiq"])
    p.add_argument("--abits-range", type=_parse_bit_range, default=list(range(2, 9)),
                   help="input bit-widths as 'lo..hi'")
    p.add_argument("--wbits", type=_parse_bits, default=8)
    p.add_argument("--lambda", type=_parse_lambda, default=None)
    p.add_argument("--weight-granularity", choices=("per-layer", "per-channel"),
                   default="per-channel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-timing", action="store_true",
                   help="also measure per-sample time (report is then not reproducible)")
    p.add_argument("--timing-repetitions", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", default=None, help="directory for rendered PNG figures")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ranges", help="quantization-range distribution at one layer")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--layer", required=True, type=int)
    p.add_argument("--modes", type=_parse_modes, default=["static", "dynamic", "spiq"])
    p.add_argument("--abits", type=_parse_bits, default=8)
    p.add_argument("--lambda", type=_parse_lambda, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_ranges)

    p = sub.add_parser("sweep", help="top-1 accuracy across sensitivity values")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--lambdas", required=True, type=_parse_float_list)
    p.add_argument("--mode", choices=("static", "dynamic", "spiq"), default="spiq")
    p.add_argument("--wbits", type=_parse_bits, default=8)
    p.add_argument("--abits", type=_parse_bits, default=8)
    p.add_argument("--weight-granularity", choices=("per-layer", "per-channel"),
                   default="per-channel")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-sample inference time of the three modes")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--wbits", type=_parse_bits, default=8)
    p.add_argument("--abits", type=_parse_bits, default=8)
    p.add_argument("--lambda", type=_parse_lambda, default=None)
    p.add_argument("--weight-granularity", choices=("per-layer", "per-channel"),
                   default="per-channel")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--out", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except SpiqError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
