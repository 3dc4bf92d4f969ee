"""Figures for merged results, rendered off-screen to image files."""

from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_METRIC = re.compile(r"^([A-Z-]+)\(([0-9.eE+-]+)\)$")
_CHANNELS = ("DEPOLARIZING", "BITFLIP", "PHASEFLIP")


def _series(merged, keep):
    """Group ``name(x) -> value`` metrics into ``{(dataset, model, name): [(x, value)]}``."""
    groups = defaultdict(list)
    for (ds, model, metric), value in merged.items():
        m = _METRIC.match(metric)
        if m and keep(m.group(1)):
            groups[(ds, model, m.group(1))].append((float(m.group(2)), value))
    return {k: sorted(v) for k, v in groups.items()}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the bytes stable across runs
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_epsilon_sweep(merged, path) -> Path:
    """Robust accuracy against the attack budget, one line per model and method."""
    series = _series(merged, lambda name: name not in _CHANNELS)
    fig, ax = plt.subplots(figsize=(6, 4))
    for (ds, model, method), pts in sorted(series.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, [100 * v for v in ys], marker="o", label=f"{model} {method} ({ds})")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("robust accuracy (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    if series:
        ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_noise(merged, path) -> Path:
    """Accuracy against circuit-noise probability, one line per channel."""
    series = _series(merged, lambda name: name in _CHANNELS)
    fig, ax = plt.subplots(figsize=(6, 4))
    for (ds, model, channel), pts in sorted(series.items()):
        xs, ys = zip(*pts)
        ax.plot([100 * x for x in xs], [100 * v for v in ys], marker="s", label=f"{model} {channel} ({ds})")
    ax.set_xlabel("noise probability (%)")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    if series:
        ax.legend(fontsize=7)
    return _save(fig, path)
