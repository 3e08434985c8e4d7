"""Appendix-style facet figures from meta3 report panel CSVs."""
from .render import build_figure, load_panels, render
from .spec import APPENDICES, PanelSpec

__version__ = "0.1.0"

__all__ = ["render", "load_panels", "build_figure", "APPENDICES", "PanelSpec", "__version__"]
