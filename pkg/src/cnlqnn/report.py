"""Merge run directories into one long table and render summaries.

Every result becomes a row ``(dataset, model, metric, value)``; the triple
``(dataset, model, metric)`` must be unique across all inputs.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .experiment import atomic_write, read_csv, write_csv

SUMMARY_COLUMNS = ["dataset", "model", "metric", "value"]
TABLE_METRICS = ["clean", "FGSM(0.3)", "PGD(0.3)", "BIM(0.3)", "MIM(0.3)"]

Key = Tuple[str, str, str]


class DuplicateKeyError(ValueError):
    def __init__(self, keys: Sequence[Key]):
        self.keys = list(keys)
        listed = "; ".join("/".join(k) for k in self.keys)
        super().__init__(f"duplicate result keys: {listed}")


def _num(s: str) -> str:
    return f"{float(s):g}"


def rows_from_dir(run_dir) -> List[Tuple[Key, float, str]]:
    """Long-form rows ``(key, value, source)`` from the CSVs in one run directory."""
    run_dir = Path(run_dir)
    out = []
    src = str(run_dir)
    attack = run_dir / "attack.csv"
    if attack.exists():
        clean: Dict[Tuple[str, str], float] = {}
        for r in read_csv(attack):
            ds, model = r["dataset"], r["model"]
            clean.setdefault((ds, model), float(r["clean_acc"]))
            out.append(((ds, model, f"{r['method']}({_num(r['epsilon'])})"), float(r["robust_acc"]), src))
        out.extend(((ds, m, "clean"), v, src) for (ds, m), v in clean.items())
    noise = run_dir / "noise.csv"
    if noise.exists():
        for r in read_csv(noise):
            key = (r["dataset"], r["model"], f"{r['channel']}({_num(r['prob'])})")
            out.append((key, float(r["mean_acc"]), src))
    ablation = run_dir / "ablation.csv"
    if ablation.exists():
        for r in read_csv(ablation):
            for col in ("clean_acc", "robust_acc"):
                out.append(((r["dataset"], r["model"], f"ablation:{col}"), float(r[col]), src))
    return out


def merge(run_dirs: Sequence) -> "OrderedDict[Key, float]":
    if not run_dirs:
        raise ValueError("report needs at least one run directory")
    merged: "OrderedDict[Key, float]" = OrderedDict()
    seen: Dict[Key, str] = {}
    dups = []
    for d in run_dirs:
        if not Path(d).is_dir():
            raise FileNotFoundError(f"run directory not found: {d}")
        for key, value, src in rows_from_dir(d):
            if key in seen:
                dups.append(key)
                continue
            seen[key] = src
            merged[key] = value
    if dups:
        raise DuplicateKeyError(dups)
    return merged


def text_table(merged) -> str:
    """Accuracy (percent) per model under clean and the 0.3-budget attacks."""
    models = list(OrderedDict.fromkeys((ds, m) for ds, m, _ in merged))
    head = ["Dataset", "Model"] + TABLE_METRICS
    body = []
    for ds, m in models:
        cells = [ds, m]
        for metric in TABLE_METRICS:
            v = merged.get((ds, m, metric))
            cells.append("-" if v is None else f"{100 * v:.2f}")
        if any(c != "-" for c in cells[2:]):
            body.append(cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]

    def fmt(r):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))

    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule] + [fmt(r) for r in body]) + "\n"


def write_report(run_dirs: Sequence, out, figures: bool = True) -> "OrderedDict[Key, float]":
    merged = merge(run_dirs)
    out = Path(out)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS,
              ({"dataset": k[0], "model": k[1], "metric": k[2], "value": v} for k, v in merged.items()))
    atomic_write(out / "summary.txt", text_table(merged))
    if figures:
        from .plotting import plot_epsilon_sweep, plot_noise

        plot_epsilon_sweep(merged, out / "robustness.png")
        plot_noise(merged, out / "noise.png")
    return merged
