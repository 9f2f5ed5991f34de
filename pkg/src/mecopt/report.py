"""Figure rendering for experiment CSVs.

The CSV files remain the data contract; these plots are a convenience view.
Rendering uses the Agg backend so it works headless.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

from .errors import ConfigError
from .harness import CSV_HEADER, TRACE_HEADER

__all__ = ["render_report"]

_MAX_TRACE_TRIALS = 5


def _read_csv(path, expected_header, field):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(expected_header):
                raise ConfigError(field, f"unexpected header {header} in {path}")
            return [dict(zip(header, row)) for row in reader]
    except OSError as exc:
        raise ConfigError(field, f"cannot read {path}: {exc}") from exc


def _energy_figure(rows, out_path, plt):
    # one energy value per (algorithm, deadline, trial); rows repeat per user
    totals = {}
    for row in rows:
        key = (row["algorithm"], float(row["deadline_s"]), int(row["trial"]))
        value = float(row["total_energy_j"])
        if row["status"] != "infeasible" and math.isfinite(value):
            totals[key] = value
    series = defaultdict(dict)
    for (algo, deadline, trial), value in totals.items():
        series[algo].setdefault(deadline, []).append(value)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for algo in sorted(series):
        deadlines = sorted(series[algo])
        means = [sum(series[algo][d]) / len(series[algo][d]) for d in deadlines]
        ax.semilogy(deadlines, means, marker="o", label=algo)
    ax.set_xlabel("deadline T (s)")
    ax.set_ylabel("mean total energy (J)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def _convergence_figure(rows, out_path, plt):
    curves = defaultdict(list)
    for row in rows:
        key = (row["algorithm"], int(row["trial"]))
        curves[key].append((int(row["iter"]), float(row["objective_j"])))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    shown = set()
    for (algo, trial), pts in sorted(curves.items()):
        if trial >= _MAX_TRACE_TRIALS:
            continue
        pts.sort()
        label = algo if algo not in shown else None
        shown.add(algo)
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts],
                    marker=".", alpha=0.7, label=label)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("total energy objective (J)")
    ax.grid(True, which="both", alpha=0.3)
    if shown:
        ax.legend()
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_report(results_csv, traces_csv=None, outdir=None):
    """Render figures for a results CSV (and optional trace CSV).

    Returns the list of written figure paths. ``outdir`` defaults to the
    directory holding the results CSV.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    results_csv = Path(results_csv)
    outdir = Path(outdir) if outdir is not None else results_csv.parent
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("outdir", f"cannot create {outdir}: {exc}") from exc

    rows = _read_csv(results_csv, CSV_HEADER, "results_csv")
    written = []
    energy_path = outdir / "energy_vs_deadline.png"
    _energy_figure(rows, energy_path, plt)
    written.append(energy_path)
    if traces_csv is not None:
        trace_rows = _read_csv(traces_csv, TRACE_HEADER, "traces_csv")
        conv_path = outdir / "convergence.png"
        _convergence_figure(trace_rows, conv_path, plt)
        written.append(conv_path)
    return written
