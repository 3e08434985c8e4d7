"""Turn simulation results into per-panel tidy CSVs, one per appendix figure
panel.

Each appendix letter selects a metric family modeled on the study's figure
layout: a figure is one combination of the "figure" columns, a panel one
combination of the "facet" columns, and within a panel the chosen series
are plotted against the x column.  Panel files carry the full scenario
columns so a renderer can reassemble facet grids without parsing names.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

from . import simulate

__all__ = ["AppendixSpec", "APPENDICES", "write_panels", "panel_filename"]


@dataclass(frozen=True)
class AppendixSpec:
    metric: str
    estimators: tuple[str, ...]
    x: str
    series: str                  # column whose values label the series
    figure: tuple[str, ...]
    facets: tuple[str, str]
    y_reference: float | None
    series_values: tuple[str, ...] | None = None  # restrict series (appendix A)


APPENDICES: dict[str, AppendixSpec] = {
    # REML fit non-convergence rate vs tau2, traces by study size
    "A": AppendixSpec("nonconv", ("reml_fit",), x="tau2", series="n",
                      figure=("M",), facets=("K", "delta"), y_reference=None,
                      series_values=("20", "40", "100")),
    # empirical level of the two Q tests vs n
    "B": AppendixSpec("level", ("qa", "qf"), x="n", series="estimator",
                      figure=("delta",), facets=("K", "M"), y_reference=0.05),
    # bias of the level-2 variance estimators vs tau2
    "C": AppendixSpec("bias_tau2", ("reml", "qa"), x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.0),
    # coverage of the level-2 variance intervals
    "D": AppendixSpec("cover_tau2", ("pl", "qa"), x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.95),
    # bias of the level-3 variance estimators
    "E": AppendixSpec("bias_omega2", ("reml", "qf"), x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.0),
    # coverage of the level-3 variance intervals
    "F": AppendixSpec("cover_omega2", ("pl", "qf"), x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.95),
    # bias of the overall-effect estimators
    "G": AppendixSpec("bias_delta", ("iv", "ssw"), x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.0),
    # coverage of the overall-effect intervals, four critical-value variants
    "H": AppendixSpec("cover_delta", ("reml_n", "reml_t", "q_n", "q_t"),
                      x="tau2", series="estimator",
                      figure=("delta", "n"), facets=("K", "M"), y_reference=0.95),
}

_OUT_COLUMNS = ("M", "K", "n", "delta", "tau2", "estimator", "value", "denominator")


def panel_filename(appendix: str, fig_key: tuple, panel_key: tuple, spec: AppendixSpec) -> str:
    fig = "_".join(f"{c}-{v}" for c, v in zip(spec.figure, fig_key))
    panel = "_".join(f"{c}-{v}" for c, v in zip(spec.facets, panel_key))
    return f"{appendix}__{fig}__{panel}.csv"


def write_panels(results_csv_path, appendix: str, out_dir) -> list[str]:
    """Write one tidy CSV per (figure, panel) present in the results.

    Returns the written file names (sorted).  An empty results file yields
    no panels.
    """
    appendix = appendix.strip().upper()
    if appendix not in APPENDICES:
        raise ValueError(f"unknown appendix {appendix!r}; expected one of A..H")
    spec = APPENDICES[appendix]
    rows = simulate.read_results_rows(results_csv_path)
    selected = [
        r for r in rows
        if r["metric"] == spec.metric and r["estimator"] in spec.estimators
        and (spec.series_values is None or r[spec.series] in spec.series_values)
    ]
    groups: dict[tuple, list[dict]] = {}
    for r in selected:
        fig_key = tuple(r[c] for c in spec.figure)
        panel_key = tuple(r[c] for c in spec.facets)
        groups.setdefault((fig_key, panel_key), []).append(r)

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for (fig_key, panel_key), rs in sorted(groups.items()):
        rs.sort(key=lambda r: (float(r[spec.x]), spec.estimators.index(r["estimator"]),
                               r[spec.series]))
        name = panel_filename(appendix, fig_key, panel_key, spec)
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(",".join(_OUT_COLUMNS) + "\n")
            for r in rs:
                fh.write(",".join(r[c] for c in _OUT_COLUMNS) + "\n")
        written.append(name)
    return sorted(written)
