"""Sweep execution and result export.

Runs every cell of a parsed scenario sweep and writes the result tree:
`metrics.csv` with one row per cell per seed, a JSON-lines event log and
a full metrics JSON per cell, `summary.json` with per-cell distribution
statistics over seeds, and box-plot figures of the headline metrics.
Rows and files are emitted in sweep order so identical inputs produce
byte-identical outputs regardless of worker scheduling.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .netsim import RunMetrics, ScenarioConfig, run
from .scenario import Sweep

__all__ = ["run_sweep", "write_event_log", "summarise"]

log = logging.getLogger(__name__)

# metrics summarised per cell in summary.json and the figures
_SUMMARY_METRICS = (
    "pdr_mean",
    "pdr_min",
    "unique_per_node",
    "no_retx_mean",
    "overhead",
)


def write_event_log(path: Path, events: list[dict]) -> None:
    with open(path, "w") as handle:
        for entry in events:
            handle.write(json.dumps(entry, sort_keys=True))
            handle.write("\n")


def _group_label(label: str) -> str:
    return label.rsplit("_s", 1)[0]


def _stats(values: list[float]) -> dict:
    if not values:
        return {}
    if len(values) == 1:
        q1 = median = q3 = float(values[0])
    else:
        q1, median, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return {
        "mean": statistics.fmean(values),
        "min": min(values),
        "q1": q1,
        "median": median,
        "q3": q3,
        "max": max(values),
    }


def summarise(rows: list[tuple[str, RunMetrics]]) -> dict:
    """Per-cell distribution statistics over seeds, in sweep order."""
    groups: dict[str, list[RunMetrics]] = {}
    for label, metrics in rows:
        groups.setdefault(_group_label(label), []).append(metrics)
    summary = {}
    for label, cell_rows in groups.items():
        entry: dict = {"seeds": [m.seed for m in cell_rows]}
        for name in _SUMMARY_METRICS:
            values = [getattr(m, name) for m in cell_rows]
            values = [v for v in values if v is not None]
            entry[name] = _stats([float(v) for v in values])
        summary[label] = entry
    return summary


def _boxplot(summary: dict, metric: str, path: Path) -> None:
    labels = list(summary)
    stats = [
        {
            "label": label,
            "mean": cell[metric]["mean"],
            "med": cell[metric]["median"],
            "q1": cell[metric]["q1"],
            "q3": cell[metric]["q3"],
            "whislo": cell[metric]["min"],
            "whishi": cell[metric]["max"],
            "fliers": [],
        }
        for label, cell in summary.items()
        if cell.get(metric)
    ]
    if not stats:
        return
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.6))
    ax.bxp(stats, showmeans=True)
    ax.set_ylabel(metric)
    ax.tick_params(axis="x", labelrotation=45)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _run_cell(args: tuple[str, ScenarioConfig, str]) -> tuple[str, RunMetrics]:
    label, config, out_dir = args
    out = Path(out_dir)
    metrics, events = run(config)
    write_event_log(out / "events" / f"{label}.jsonl", events)
    with open(out / "runs" / f"{label}.json", "w") as handle:
        json.dump(metrics.to_json_dict(), handle, sort_keys=True, indent=1)
    return label, metrics


def run_sweep(sweep: Sweep, out_dir, threads: int = 1) -> Path:
    """Execute every cell and write the result tree; returns metrics.csv."""
    out = Path(out_dir)
    for sub in ("events", "runs", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    jobs = [(label, config, str(out)) for label, config in sweep.cells]
    results: dict[str, RunMetrics] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for label, metrics in pool.map(_run_cell, jobs):
                log.info("cell %s done", label)
                results[label] = metrics
    else:
        for job in jobs:
            label, metrics = _run_cell(job)
            log.info("cell %s done", label)
            results[label] = metrics

    rows = [(label, results[label]) for label, _ in sweep.cells]
    csv_path = out / "metrics.csv"
    with open(csv_path, "w") as handle:
        handle.write(RunMetrics.CSV_FIELDS + "\n")
        for _, metrics in rows:
            handle.write(metrics.csv_row() + "\n")

    summary = summarise(rows)
    with open(out / "summary.json", "w") as handle:
        json.dump(summary, handle, sort_keys=True, indent=1)

    for metric in ("pdr_mean", "unique_per_node"):
        _boxplot(summary, metric, out / "figures" / f"{metric}.png")
    return csv_path
