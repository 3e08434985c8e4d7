"""Three-level meta-analysis of standardized mean differences.

Moment (effective-sample-size-weighted) point and interval estimators for
the two variance components and the overall effect, a REML/profile-
likelihood baseline, quadratic-form distribution machinery, and a Monte
Carlo harness for bias/coverage/level experiments.
"""
from . import backend, model, moment, qform, reml, simulate, smd
from .model import Dataset, StudySummary, WeightSpec, read_dataset_csv, validate
from .moment import MomentFit, fit_moment
from .reml import RemlFit, reml_fit
from .simulate import Scenario, ScenarioResult, run_grid, run_scenario

__version__ = "0.1.0"

__all__ = [
    "backend",
    "model",
    "moment",
    "qform",
    "reml",
    "simulate",
    "smd",
    "Dataset",
    "StudySummary",
    "WeightSpec",
    "read_dataset_csv",
    "validate",
    "MomentFit",
    "fit_moment",
    "RemlFit",
    "reml_fit",
    "Scenario",
    "ScenarioResult",
    "run_grid",
    "run_scenario",
    "__version__",
]
