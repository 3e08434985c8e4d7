"""Panel layout contract for each appendix's report CSVs."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PanelSpec:
    x: str
    y: str
    series: str
    facets: tuple[str, str]          # (row column, col column)
    y_reference: float | None
    series_order: tuple[str, ...]    # legend/draw order
    figure: tuple[str, ...]          # one image per combination
    facet_rows: tuple[float, ...]    # canonical grid values
    facet_cols: tuple[float, ...]
    title: str


_K = (2.0, 5.0, 10.0, 20.0)
_M = (5.0, 10.0, 25.0, 50.0)
_DELTA = (0.0, 0.2, 0.5, 1.0)

APPENDICES: dict[str, PanelSpec] = {
    "A": PanelSpec(x="tau2", y="value", series="n", facets=("K", "delta"),
                   y_reference=None, series_order=("20", "40", "100"),
                   figure=("M",), facet_rows=_K, facet_cols=_DELTA,
                   title="REML fit non-convergence rate"),
    "B": PanelSpec(x="n", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.05, series_order=("qa", "qf"),
                   figure=("delta",), facet_rows=_K, facet_cols=_M,
                   title="empirical level of the Q tests (alpha = .05)"),
    "C": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.0, series_order=("reml", "qa"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="bias of the between-study variance estimators"),
    "D": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.95, series_order=("pl", "qa"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="coverage of 95% intervals for the between-study variance"),
    "E": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.0, series_order=("reml", "qf"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="bias of the between-cluster variance estimators"),
    "F": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.95, series_order=("pl", "qf"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="coverage of 95% intervals for the between-cluster variance"),
    "G": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.0, series_order=("iv", "ssw"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="bias of the overall-effect estimators"),
    "H": PanelSpec(x="tau2", y="value", series="estimator", facets=("K", "M"),
                   y_reference=0.95, series_order=("reml_n", "reml_t", "q_n", "q_t"),
                   figure=("delta", "n"), facet_rows=_K, facet_cols=_M,
                   title="coverage of 95% intervals for the overall effect"),
}
