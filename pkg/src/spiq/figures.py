"""Render report data as PNG figures next to the delimited output.

Uses the Agg backend so rendering works headless, and strips the encoder's
software tag from the PNG metadata so identical runs produce identical
bytes. Every function takes already-computed report data; nothing here
re-runs the pipeline.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_METADATA = {"Software": None}

_MODE_COLORS = {
    "static": "tab:orange",
    "dynamic": "tab:green",
    "spiq": "tab:blue",
    "reference": "tab:gray",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def render_range_histogram(ranges_by_mode: dict[str, np.ndarray], layer_index: int, path):
    """Overlaid distributions of the quantization ranges at one layer."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    values = [v for arr in ranges_by_mode.values() for v in np.atleast_1d(arr)]
    bins = np.linspace(0.0, max(values) * 1.05, 32) if values else 16
    for mode, arr in ranges_by_mode.items():
        arr = np.atleast_1d(arr)
        color = _MODE_COLORS.get(mode)
        if arr.size == 1:
            ax.axvline(arr[0], color=color, linestyle="--", label=f"{mode} (single)")
        else:
            ax.hist(arr, bins=bins, alpha=0.55, color=color, label=f"{mode} (n={arr.size})")
    ax.set_xlabel("estimated input range")
    ax.set_ylabel("count")
    ax.set_title(f"input quantization ranges, layer {layer_index}")
    ax.legend()
    _save(fig, path)


def render_sweep_curve(points: list[tuple[float, float]], path, a_bits: int | None = None):
    """Top-1 accuracy against the range-sensitivity parameter."""
    lams = [p[0] for p in points]
    accs = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(lams, accs, marker="o", color="tab:blue")
    ax.set_xlabel("lambda (std deviations covered)")
    ax.set_ylabel("top-1 accuracy")
    title = "sensitivity sweep"
    if a_bits is not None:
        title += f" (a_bits={a_bits})"
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def render_compare_grid(report: dict, path):
    """Accuracy per mode as the input bit-width varies."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    cells = report["cells"]
    modes = list(dict.fromkeys(cell["mode"] for cell in cells))
    for mode in modes:
        pts = sorted((c["a_bits"], c["top1"]) for c in cells if c["mode"] == mode)
        if any(p[1] is None for p in pts):
            continue
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                color=_MODE_COLORS.get(mode), label=mode)
    ref = report.get("metadata", {}).get("reference_top1")
    if ref is not None:
        ax.axhline(ref, color=_MODE_COLORS["reference"], linestyle=":", label="reference")
    ax.set_xlabel("input bit-width")
    ax.set_ylabel("top-1 accuracy")
    ax.set_title(f"mode comparison (w_bits={report['metadata'].get('w_bits')})")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def render_bench_bars(medians: dict[str, float], path):
    """Median per-sample inference time per mode."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    modes = list(medians)
    times = [medians[m] * 1e6 for m in modes]
    ax.bar(modes, times, color=[_MODE_COLORS.get(m) for m in modes])
    ax.set_ylabel("median per-sample time (us)")
    ax.set_title("inference timing")
    _save(fig, path)
