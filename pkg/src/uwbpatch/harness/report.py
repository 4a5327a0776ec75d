"""Report persistence and plot-ready CSV series."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..defenses import detectability_csv
from .experiments import CELL_KEYS

# figure id -> (experiment, x field, cell filter, curve label fields)
FIGURES = {
    "baseline_sync_desync": ("baseline_sync_desync", "epsilon", {}, ("attack", "mode")),
    "srp_vs_uap": ("srp_eval", "epsilon", {"mode": "shift", "defense": "none"}, ("attack",)),
    "sfr_vs_uap": ("sfr_eval", "epsilon", {"mode": "shift", "defense": "filter"}, ("attack",)),
    "filter_impact": ("filter_impact", "epsilon", {"mode": "shift"}, ("attack", "defense")),
    "size_sweep": ("size_sweep", "size", {"mode": "one_shot"}, ("epsilon",)),
    "size_sweep_continuous": ("size_sweep", "size", {"mode": "continuous"}, ("epsilon",)),
    "random_noise": ("random_baseline", "epsilon", {}, ("attack",)),
    "at_one_shot": ("at_eval", "epsilon", {"mode": "one_shot"}, ("victim",)),
    "at_continuous": ("at_eval", "epsilon", {"mode": "continuous"}, ("victim",)),
}
PLOT_HEADER = ("x", "y", "label")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cells_csv(report) -> str:
    extra = sorted({k for c in report["cells"] for k in c} - set(CELL_KEYS) - {"success_rate", "accuracy"})
    cols = list(CELL_KEYS) + ["success_rate", "accuracy"] + extra
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for cell in report["cells"]:
        writer.writerow(["" if cell.get(c) is None else (repr(cell[c]) if isinstance(cell[c], float) else cell[c])
                         for c in cols])
    return buf.getvalue()


def figures_for(experiment: str):
    return [fid for fid, (exp, *_rest) in FIGURES.items() if exp == experiment]


def plot_series(report, figure_id):
    """``{label: [(x, y), ...]}`` for one figure, points sorted by x."""
    if figure_id not in FIGURES:
        raise KeyError(f"unknown figure id {figure_id!r}; choose from {', '.join(FIGURES)}")
    experiment, x_field, where, label_fields = FIGURES[figure_id]
    if report["experiment"] != experiment:
        raise ValueError(f"figure {figure_id!r} needs a {experiment} report, got {report['experiment']}")
    curves = {}
    for cell in report["cells"]:
        if cell["attack"] == "none" or any(cell.get(k) != v for k, v in where.items()):
            continue
        label = "_".join(f"eps{cell[f]:g}" if f == "epsilon" else str(cell[f]) for f in label_fields)
        curves.setdefault(label, []).append((cell[x_field], cell["success_rate"]))
    return {label: sorted(points) for label, points in sorted(curves.items())}


def emit_plot_data(report, figure_id, outdir):
    """Write one ``x,y,label`` CSV per curve under ``outdir/<figure_id>/``; returns the paths."""
    series = plot_series(report, figure_id)
    target = Path(outdir) / figure_id
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for label, points in series.items():
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PLOT_HEADER)
        for x, y in points:
            writer.writerow([repr(x) if isinstance(x, float) else x, repr(float(y)), label])
        path = target / f"{label}.csv"
        path.write_text(buf.getvalue())
        paths.append(path)
    return paths


def write_report(report, timings, outdir):
    """Persist the report JSON, its cell table, plot series and (separately) the timings."""
    outdir = Path(outdir)
    (outdir / "reports").mkdir(parents=True, exist_ok=True)
    name = report["experiment"]
    paths = [outdir / "reports" / f"{name}.json", outdir / "reports" / f"{name}.csv"]
    paths[0].write_text(dumps(report))
    paths[1].write_text(cells_csv(report))
    if name == "magnitude_table":
        for eps, rows in sorted(report["summary"].get("detectability", {}).items()):
            p = outdir / "reports" / f"detectability_eps{float(eps):g}.csv"
            p.write_text(detectability_csv(rows))
            paths.append(p)
    for fid in figures_for(name):
        paths.extend(emit_plot_data(report, fid, outdir / "series"))
    (outdir / "reports" / f"{name}.timings.json").write_text(dumps(timings))
    return paths
