"""Batch rendering of appendix facet figures from report panel CSVs.

Each figure is one combination of the appendix's figure columns; facets are
a fixed grid (rows x cols follow the study design, e.g. K x M) with blank
panels where the CSVs carry no rows.  Output is deterministic: fixed figure
geometry and DPI, no embedded timestamps, stable series order and colors.
"""
from __future__ import annotations

import csv
import os
import sys
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .spec import APPENDICES, PanelSpec

__all__ = ["render", "load_panels", "build_figure"]

_REQUIRED = ("M", "K", "n", "delta", "tau2", "estimator", "value", "denominator")

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

matplotlib.rcParams["svg.hashsalt"] = "meta3-plots"


def _fmt(v: float) -> str:
    return format(v, ".6g")


def load_panels(panel_dir, appendix: str) -> list[dict]:
    """Rows of every panel CSV of one appendix, with column validation."""
    rows: list[dict] = []
    names = sorted(
        f for f in os.listdir(panel_dir)
        if f.startswith(f"{appendix}__") and f.endswith(".csv")
    )
    for name in names:
        with open(os.path.join(panel_dir, name), newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in _REQUIRED:
                if col not in header:
                    raise ValueError(f"{name}: missing column {col!r}")
            rows.extend(reader)
    return rows


def _facet_values(canonical, observed):
    vals = sorted(set(canonical) | {float(v) for v in observed})
    return vals


def build_figure(rows: list[dict], spec: PanelSpec, fig_key: tuple[str, ...],
                 appendix: str):
    """One facet-grid figure for a single figure-key combination."""
    row_vals = _facet_values(spec.facet_rows, (r[spec.facets[0]] for r in rows))
    col_vals = _facet_values(spec.facet_cols, (r[spec.facets[1]] for r in rows))
    nrows, ncols = len(row_vals), len(col_vals)
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(2.6 * ncols, 2.1 * nrows),
        squeeze=False, sharex=True, sharey=True,
    )
    handles, labels = [], []
    for i, rv in enumerate(row_vals):
        for j, cv in enumerate(col_vals):
            ax = axes[i][j]
            panel = [
                r for r in rows
                if float(r[spec.facets[0]]) == rv and float(r[spec.facets[1]]) == cv
            ]
            if spec.y_reference is not None:
                ax.axhline(spec.y_reference, color="0.6", lw=0.8, ls="--", zorder=1)
            for s_idx, series in enumerate(spec.series_order):
                pts = sorted(
                    ((float(r[spec.x]), float(r[spec.y]))
                     for r in panel if r[spec.series] == series),
                    key=lambda t: t[0],
                )
                if not pts:
                    continue
                xs, ys = zip(*pts)
                (line,) = ax.plot(
                    xs, ys, marker="o", ms=3, lw=1.0,
                    color=_COLORS[s_idx % len(_COLORS)], label=series, zorder=2,
                )
                if series not in labels:
                    handles.append(line)
                    labels.append(series)
            if i == 0:
                ax.set_title(f"{spec.facets[1]} = {_fmt(cv)}", fontsize=8)
            if j == 0:
                ax.set_ylabel(f"{spec.facets[0]} = {_fmt(rv)}", fontsize=8)
            ax.tick_params(labelsize=7)
    for j in range(ncols):
        axes[-1][j].set_xlabel(spec.x, fontsize=8)
    if handles:
        fig.legend(handles, labels, loc="lower center",
                   ncol=max(len(labels), 1), fontsize=8, frameon=False)
    fixed = ", ".join(f"{c} = {v}" for c, v in zip(spec.figure, fig_key))
    fig.suptitle(f"appendix {appendix}: {spec.title} ({fixed})", fontsize=10)
    fig.subplots_adjust(top=0.92, bottom=0.10, left=0.07, right=0.98,
                        hspace=0.25, wspace=0.12)
    return fig


def render(panel_dir, appendix: str, out_dir, fmt: str = "png",
           log=sys.stderr) -> list[str]:
    """Render every figure of one appendix; returns written file names."""
    appendix = appendix.strip().upper()
    if appendix not in APPENDICES:
        raise ValueError(f"unknown appendix {appendix!r}; expected one of A..H")
    if fmt not in ("png", "svg"):
        raise ValueError(f"format must be png or svg, got {fmt!r}")
    spec = APPENDICES[appendix]
    rows = load_panels(panel_dir, appendix)
    if not rows:
        print(f"warning: no {appendix} panels under {panel_dir}; "
              f"rendering a blank figure", file=log)
        groups = {("none",): []}
    else:
        groups: dict[tuple[str, ...], list[dict]] = {}
        for r in rows:
            key = tuple(_fmt(float(r[c])) for c in spec.figure)
            groups.setdefault(key, []).append(r)

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for key in sorted(groups):
        fig = build_figure(groups[key], spec, key, appendix)
        tag = "_".join(f"{c}-{v}" for c, v in zip(spec.figure, key)) or "empty"
        name = f"{appendix}__{tag}.{fmt}"
        path = os.path.join(out_dir, name)
        metadata = {"Software": None} if fmt == "png" else {"Date": None}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fig.savefig(path, dpi=150, format=fmt, metadata=metadata)
        plt.close(fig)
        written.append(name)
    return written
