"""Render bufwer CSV outputs as figures.

This package knows nothing about the statistical engine: it consumes the
documented CSV contracts only.

Simulation CSV columns:
    procedure,K,k1_setting,theta_true,alpha,reps,seed,fwer,fwer_se,tpr,tpr_se
Region CSV columns:
    procedure,p1,p2,p3,d1,d2,d3,n_reject

Figure kinds:
    power_curves   two panels (FWER top, TPR bottom), one line per procedure,
                   x axis = number of false nulls (1..K plus "mix")
    fwer_curves    the FWER panel alone
    region_heatmap one panel per (procedure, p3 slice): rejection counts
    improvement    TPR difference of ih-* procedures against the hommel rows

Rendering is deterministic: fixed style, no timestamps in the output files.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["SchemaError", "read_csv", "render", "FIGURE_KINDS"]

SIMULATION_COLUMNS = ["procedure", "K", "k1_setting", "theta_true", "alpha",
                      "reps", "seed", "fwer", "fwer_se", "tpr", "tpr_se"]
REGION_COLUMNS = ["procedure", "p1", "p2", "p3", "d1", "d2", "d3", "n_reject"]

FIGURE_KINDS = ("power_curves", "fwer_curves", "region_heatmap", "improvement")

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "svg.hashsalt": "buplots",
}


class SchemaError(ValueError):
    """The input CSV does not match the expected column contract."""


def read_csv(path: str, required: list) -> list:
    """Rows as dicts; '#' comment lines and repeated header lines (from
    concatenating several exports) are skipped."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}")
    if lines:
        header_line = lines[0]
        lines = [header_line] + [ln for ln in lines[1:] if ln != header_line]
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing} (found {header})")
    rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _setting_order(rows):
    """k1 settings sorted numerically with 'mix' variants last; drops the
    all-null setting (it has no power to plot)."""
    labels = []
    for r in rows:
        s = r["k1_setting"]
        if s not in labels and s != "0":
            labels.append(s)
    numeric = sorted((s for s in labels if not s.startswith("mix")), key=int)
    mixes = [s for s in labels if s.startswith("mix")]
    return numeric + mixes


def _procedures(rows):
    seen = []
    for r in rows:
        if r["procedure"] not in seen:
            seen.append(r["procedure"])
    return seen


def _series(rows, procedure, settings, column):
    by_key = {(r["procedure"], r["k1_setting"]): r for r in rows}
    out = []
    for s in settings:
        row = by_key.get((procedure, s))
        val = row[column] if row is not None else ""
        out.append(float(val) if val not in ("", None) else np.nan)
    return np.asarray(out)


def _curve_axes(ax, rows, settings, column, labels):
    x = np.arange(len(settings))
    for name in _procedures(rows):
        ax.plot(x, _series(rows, name, settings, column), marker="o",
                label=labels.get(name, name))
    ax.set_xticks(x)
    ax.set_xticklabels(settings)
    ax.set_xlabel("number of false nulls")


def _render_power_curves(rows, labels):
    settings = _setting_order(rows)
    fig, (ax_f, ax_t) = plt.subplots(2, 1, figsize=(7, 6.5), sharex=True)
    _curve_axes(ax_f, rows, settings, "fwer", labels)
    alpha_vals = {r["alpha"] for r in rows}
    if len(alpha_vals) == 1:
        ax_f.axhline(float(alpha_vals.pop()), color="k", linestyle=":", linewidth=1)
    ax_f.set_ylabel("FWER")
    _curve_axes(ax_t, rows, settings, "tpr", labels)
    ax_t.set_ylabel("TPR")
    ax_f.legend(loc="best", fontsize=8)
    fig.suptitle("FWER and power by number of false nulls")
    return fig


def _render_fwer_curves(rows, labels):
    settings = _setting_order(rows)
    fig, ax = plt.subplots(figsize=(7, 4))
    _curve_axes(ax, rows, settings, "fwer", labels)
    ax.set_ylabel("FWER")
    ax.legend(loc="best", fontsize=8)
    return fig


def _render_improvement(rows, labels):
    settings = _setting_order(rows)
    base = "hommel"
    names = _procedures(rows)
    if base not in names:
        raise SchemaError("improvement figure needs hommel rows as the baseline")
    improved = [n for n in names if n.startswith("ih")]
    if not improved:
        raise SchemaError("improvement figure needs at least one ih-* procedure")
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(settings))
    baseline = _series(rows, base, settings, "tpr")
    for name in improved:
        ax.plot(x, _series(rows, name, settings, "tpr") - baseline, marker="o",
                label=f"{labels.get(name, name)} - {labels.get(base, base)}")
    ax.axhline(0.0, color="k", linewidth=1)
    ax.set_xticks(x)
    ax.set_xticklabels(settings)
    ax.set_xlabel("number of false nulls")
    ax.set_ylabel("TPR difference")
    ax.legend(loc="best", fontsize=8)
    return fig


def _render_region_heatmap(rows, labels):
    procedures = _procedures(rows)
    slices = sorted({float(r["p3"]) for r in rows})
    k_max = 3
    fig, axes = plt.subplots(
        len(procedures), len(slices),
        figsize=(2.6 * len(slices) + 1.2, 2.6 * len(procedures)),
        squeeze=False,
    )
    last_image = None
    for i, proc in enumerate(procedures):
        for j, p3 in enumerate(slices):
            ax = axes[i][j]
            sub = [r for r in rows if r["procedure"] == proc and float(r["p3"]) == p3]
            if not sub:
                raise SchemaError(f"no rows for procedure {proc!r} at p3={p3}")
            p1 = np.asarray(sorted({float(r["p1"]) for r in sub}))
            p2 = np.asarray(sorted({float(r["p2"]) for r in sub}))
            grid = np.full((p2.size, p1.size), np.nan)
            i1 = {v: idx for idx, v in enumerate(p1)}
            i2 = {v: idx for idx, v in enumerate(p2)}
            for r in sub:
                grid[i2[float(r["p2"])], i1[float(r["p1"])]] = float(r["n_reject"])
            last_image = ax.imshow(
                grid, origin="lower", aspect="auto", vmin=0, vmax=k_max,
                extent=(p1.min(), p1.max(), p2.min(), p2.max()), cmap="viridis",
            )
            ax.grid(False)
            if i == 0:
                ax.set_title(f"p3 = {p3:g}", fontsize=9)
            if j == 0:
                ax.set_ylabel(f"{labels.get(proc, proc)}\np2", fontsize=8)
            if i == len(procedures) - 1:
                ax.set_xlabel("p1", fontsize=8)
    fig.colorbar(last_image, ax=[a for row in axes for a in row],
                 label="rejections", shrink=0.8)
    return fig


_RENDERERS = {
    "power_curves": (_render_power_curves, SIMULATION_COLUMNS),
    "fwer_curves": (_render_fwer_curves, SIMULATION_COLUMNS),
    "improvement": (_render_improvement, SIMULATION_COLUMNS),
    "region_heatmap": (_render_region_heatmap, REGION_COLUMNS),
}


def render(kind: str, input_path: str, output_path: str, labels: dict | None = None):
    """Render one figure kind from a CSV to a PNG or SVG file.

    ``labels`` optionally maps procedure names to display names for legends
    and panel titles.
    """
    if kind not in _RENDERERS:
        raise SchemaError(f"unknown figure kind {kind!r}; choose from {FIGURE_KINDS}")
    if not output_path.endswith((".png", ".svg")):
        raise SchemaError("output must end in .png or .svg")
    fn, required = _RENDERERS[kind]
    rows = read_csv(input_path, required)
    labels = dict(labels or {})
    unknown = [k for k in labels if k not in {r["procedure"] for r in rows}]
    if unknown:
        raise SchemaError(f"--label names not present in the input: {unknown}")
    with plt.rc_context(STYLE):
        fig = fn(rows, labels)
        try:
            # strip volatile metadata so identical inputs give identical bytes
            meta = {"Date": None} if output_path.endswith(".svg") else {"Software": None}
            fig.savefig(output_path, metadata=meta)
        finally:
            plt.close(fig)
