"""SVG plot emission for metric tables and sample scatters.

Output is byte-deterministic for fixed input: the Agg backend, a fixed SVG
hash salt, text kept as text, and no embedded creation date.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import ConfigError  # noqa: E402
from .toydata import read_labeled_csv  # noqa: E402

__all__ = ["plot_metrics"]

_METRIC_COLUMNS = ("ccds", "ccds_feat", "recall", "coverage", "fd", "sw",
                   "adherence", "wall_seconds_per_sample")

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}


def _deterministic_style():
    plt.rcParams["svg.fonttype"] = "none"
    plt.rcParams["svg.hashsalt"] = "arclab"


def _read_metrics_csv(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError:
        raise
    except Exception as exc:
        raise ConfigError(f"{path}: unreadable CSV: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: missing CSV header")
    header, body = rows[0], rows[1:]
    if "label" not in header:
        raise ConfigError(f"{path}: metrics CSV needs a 'label' column")
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {i + 2} has {len(row)} fields, header has {len(header)}")
    return header, body


def _bar_chart(out_dir, name, labels, values):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.bar(range(len(values)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(name)
    ax.set_title(f"{name} by configuration")
    fig.tight_layout()
    path = out_dir / f"metric_{name}.svg"
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def _scatter_class(out_dir, k, real, dumps):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    mask = real.prompts == k
    ax.scatter(real.samples[mask, 0], real.samples[mask, 1], s=6, alpha=0.35,
               color="#999999", label="real", rasterized=False)
    for name, batch in dumps:
        mask = batch.prompts == k
        if not mask.any():
            continue
        ax.scatter(batch.samples[mask, 0], batch.samples[mask, 1], s=6, alpha=0.6,
                   label=name)
    ax.set_title(f"class {k}: generated vs real")
    ax.set_aspect("equal")
    ax.legend(fontsize=6, loc="upper right")
    fig.tight_layout()
    path = out_dir / f"scatter_class{k}.svg"
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def plot_metrics(metrics_csv, out_dir, samples_dir=None):
    """Emit per-metric bar charts for every configuration row plus, when the
    sample dumps are available and two-dimensional, a per-class scatter of
    generated vs real samples.  Returns the list of written paths."""
    _deterministic_style()
    metrics_csv = Path(metrics_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, body = _read_metrics_csv(metrics_csv)
    if not body:
        warnings.warn(f"{metrics_csv}: no metric rows, nothing to plot")
        return []

    labels = [row[header.index("label")] for row in body]
    written = []
    for name in _METRIC_COLUMNS:
        if name not in header:
            continue
        col = header.index(name)
        try:
            values = [float(row[col]) for row in body]
        except ValueError as exc:
            raise ConfigError(f"{metrics_csv}: non-numeric value in column {name}: {exc}") from exc
        written.append(_bar_chart(out_dir, name, labels, values))

    samples_dir = Path(samples_dir) if samples_dir else metrics_csv.parent / "samples"
    real_path = samples_dir / "real_eval.csv"
    if real_path.exists():
        real = read_labeled_csv(real_path)
        dumps = []
        for path in sorted(samples_dir.glob("*.csv")):
            if path == real_path:
                continue
            dumps.append((path.stem, read_labeled_csv(path)))
        if real.samples.shape[1] == 2:
            for k in sorted(set(real.prompts.tolist())):
                written.append(_scatter_class(out_dir, k, real, dumps))
    else:
        warnings.warn(f"{samples_dir}: no real_eval.csv, skipping scatters")
    return written
