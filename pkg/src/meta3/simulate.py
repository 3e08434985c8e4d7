"""Monte Carlo engine: scenario grid, data generation, per-repetition
estimation with the moment and REML pipelines, metric aggregation.

Data generation for a scenario (M clusters of K studies of total size n):
cluster effects are N(delta, omega2), study means add N(0, tau2) shifts,
observed effects come from the scaled noncentral-t sampler with the
small-sample correction, and v2 from the SMD variance estimator.  Every
repetition owns a counter-based random substream derived from
(seed, scenario-hash, rep), so results do not depend on execution order or
parallelism degree.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import model, moment, reml, smd

__all__ = [
    "Scenario",
    "MetricRow",
    "ScenarioResult",
    "generate",
    "run_scenario",
    "run_grid",
    "full_grid",
    "load_grid_config",
    "write_results_csv",
    "read_results_keys",
    "RESULT_COLUMNS",
]

# Parameter values of the full study design (their crossing gives the
# complete 1600-scenario grid).
GRID_M = (5, 10, 25, 50)
GRID_K = (2, 5, 10, 20)
GRID_N = (20, 40, 100, 200, 1000)
GRID_DELTA = (0.0, 0.2, 0.5, 1.0)
GRID_TAU2 = (0.0, 0.02, 0.1, 0.2, 0.5)

RESULT_COLUMNS = ("M", "K", "n", "delta", "tau2", "metric", "estimator",
                  "value", "denominator", "seed")

# Canonical metric order used in result rows and CSV output.
_METRICS = (
    ("bias_delta", "ssw"),
    ("bias_delta", "iv"),
    ("bias_tau2", "qa"),
    ("bias_tau2", "reml"),
    ("bias_omega2", "qf"),
    ("bias_omega2", "reml"),
    ("cover_delta", "q_n"),
    ("cover_delta", "q_t"),
    ("cover_delta", "reml_n"),
    ("cover_delta", "reml_t"),
    ("cover_tau2", "qa"),
    ("cover_tau2", "pl"),
    ("cover_omega2", "qf"),
    ("cover_omega2", "pl"),
    ("level", "qa"),
    ("level", "qf"),
    ("nonconv", "moment"),
    ("nonconv", "reml_fit"),
    ("nonconv", "pl_ci_tau2"),
    ("nonconv", "pl_ci_omega2"),
)


@dataclass(frozen=True)
class Scenario:
    m: int
    k: int
    n: int
    delta: float
    tau2: float
    q_frac: float = 0.5
    nrep: int = 1000
    seed: int = 0

    @property
    def omega2(self) -> float:
        # the study design ties the two variance components together
        return self.tau2

    def __post_init__(self):
        n_c = self.n * self.q_frac
        if abs(n_c - round(n_c)) > 1e-9:
            raise ValueError(f"n * q_frac must be integral, got {self.n} * {self.q_frac}")

    @property
    def n_c(self) -> int:
        return int(round(self.n * self.q_frac))

    @property
    def n_t(self) -> int:
        return self.n - self.n_c


class MetricRow(NamedTuple):
    metric: str
    estimator: str
    value: float
    denominator: int


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    rows: tuple[MetricRow, ...]

    def value(self, metric: str, estimator: str) -> float:
        for r in self.rows:
            if r.metric == metric and r.estimator == estimator:
                return r.value
        raise KeyError((metric, estimator))

    def denominator(self, metric: str, estimator: str) -> int:
        for r in self.rows:
            if r.metric == metric and r.estimator == estimator:
                return r.denominator
        raise KeyError((metric, estimator))


def _scenario_words(scn: Scenario) -> tuple[int, int]:
    key = f"{scn.m}|{scn.k}|{scn.n}|{scn.delta!r}|{scn.tau2!r}|{scn.q_frac!r}"
    digest = hashlib.blake2s(key.encode(), digest_size=8).digest()
    return (int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little"))


def rep_rng(scn: Scenario, rep: int) -> np.random.Generator:
    """Deterministic substream for one repetition."""
    h1, h2 = _scenario_words(scn)
    ss = np.random.SeedSequence(entropy=scn.seed, spawn_key=(h1, h2, rep))
    return np.random.default_rng(ss)


def generate(scn: Scenario, rep: int) -> model.Dataset:
    """One simulated dataset.  Draw order: cluster effects, study shifts,
    then the SMD sampler's normals and chi-squares (vectorized)."""
    rng = rep_rng(scn, rep)
    delta0 = scn.delta + np.sqrt(scn.omega2) * rng.standard_normal(scn.m)
    theta = delta0[:, None] + np.sqrt(scn.tau2) * rng.standard_normal((scn.m, scn.k))
    g = smd.sample_g(theta.ravel(), scn.n_c, scn.n_t, rng)
    v2 = smd.smd_variance(g, scn.n_c, scn.n_t)
    clusters = []
    idx = 0
    for ci in range(scn.m):
        studies = [
            model.study(float(g[idx + j]), scn.n_c, scn.n_t, float(v2[idx + j]))
            for j in range(scn.k)
        ]
        clusters.append(model.cluster(str(ci + 1), studies))
        idx += scn.k
    return model.dataset(clusters)


class _Acc:
    """Mean/proportion accumulator with an explicit denominator."""

    __slots__ = ("total", "count")

    def __init__(self):
        self.total = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        self.total += value
        self.count += 1

    def mean(self) -> float:
        return self.total / self.count if self.count else float("nan")


def run_scenario(scn: Scenario, alpha: float = 0.05) -> ScenarioResult:
    """All metrics for one scenario.

    The moment pipeline is expected never to fail; any exception there is
    counted (criterion: the count stays zero).  REML failures, including
    unexpected errors, count as fit non-convergence; profile-CI failures
    count per component among converged fits.
    """
    acc = {key: _Acc() for key in _METRICS if key[0] != "nonconv"}
    mom_fail = 0
    reml_fail = 0
    ci_tau2_fail = 0
    ci_omega2_fail = 0
    n_reml_ok = 0

    for rep in range(scn.nrep):
        ds = generate(scn, rep)
        d = model.design(ds)

        try:
            fit = moment.fit_moment(ds, alpha=alpha, validated=True)
            acc[("bias_delta", "ssw")].add(fit.delta_hat - scn.delta)
            acc[("bias_tau2", "qa")].add(fit.tau2_hat - scn.tau2)
            acc[("bias_omega2", "qf")].add(fit.omega2_hat - scn.omega2)
            lo, hi = fit.ci_delta_normal
            acc[("cover_delta", "q_n")].add(1.0 if lo <= scn.delta <= hi else 0.0)
            lo, hi = fit.ci_delta_t
            acc[("cover_delta", "q_t")].add(1.0 if lo <= scn.delta <= hi else 0.0)
            lo, hi = fit.ci_tau2
            acc[("cover_tau2", "qa")].add(1.0 if lo <= scn.tau2 <= hi else 0.0)
            lo, hi = fit.ci_omega2
            acc[("cover_omega2", "qf")].add(1.0 if lo <= scn.omega2 <= hi else 0.0)
            acc[("level", "qa")].add(1.0 if fit.p_qa < alpha else 0.0)
            acc[("level", "qf")].add(1.0 if fit.p_qf < alpha else 0.0)
        except Exception:
            mom_fail += 1

        try:
            x_fixed = reml.fixed_design(d)
            rfit = reml.reml_fit(d.t, x_fixed, d.v2, d.starts, alpha=alpha, ci=True)
        except Exception:
            rfit = reml.RemlFit(converged=False)
        if not rfit.converged:
            reml_fail += 1
            continue
        n_reml_ok += 1
        acc[("bias_delta", "iv")].add(rfit.delta_iv - scn.delta)
        acc[("bias_tau2", "reml")].add(rfit.tau2 - scn.tau2)
        acc[("bias_omega2", "reml")].add(rfit.omega2 - scn.omega2)
        lo, hi = reml.delta_interval_iv(rfit, scn.m, "normal", alpha)
        acc[("cover_delta", "reml_n")].add(1.0 if lo <= scn.delta <= hi else 0.0)
        lo, hi = reml.delta_interval_iv(rfit, scn.m, "t", alpha)
        acc[("cover_delta", "reml_t")].add(1.0 if lo <= scn.delta <= hi else 0.0)
        if rfit.pl_converged_tau2:
            lo, hi = rfit.pl_ci_tau2
            acc[("cover_tau2", "pl")].add(1.0 if lo <= scn.tau2 <= hi else 0.0)
        else:
            ci_tau2_fail += 1
        if rfit.pl_converged_omega2:
            lo, hi = rfit.pl_ci_omega2
            acc[("cover_omega2", "pl")].add(1.0 if lo <= scn.omega2 <= hi else 0.0)
        else:
            ci_omega2_fail += 1

    rows = []
    for metric, estimator in _METRICS:
        if metric == "nonconv":
            if estimator == "moment":
                rows.append(MetricRow(metric, estimator, mom_fail / scn.nrep, scn.nrep))
            elif estimator == "reml_fit":
                rows.append(MetricRow(metric, estimator, reml_fail / scn.nrep, scn.nrep))
            elif estimator == "pl_ci_tau2":
                val = ci_tau2_fail / n_reml_ok if n_reml_ok else float("nan")
                rows.append(MetricRow(metric, estimator, val, n_reml_ok))
            else:
                val = ci_omega2_fail / n_reml_ok if n_reml_ok else float("nan")
                rows.append(MetricRow(metric, estimator, val, n_reml_ok))
        else:
            a = acc[(metric, estimator)]
            rows.append(MetricRow(metric, estimator, a.mean(), a.count))
    return ScenarioResult(scenario=scn, rows=tuple(rows))


def _run_one(args) -> ScenarioResult:
    scn, alpha = args
    return run_scenario(scn, alpha)


def run_grid(
    scenarios: Sequence[Scenario],
    jobs: int = 1,
    alpha: float = 0.05,
) -> list[ScenarioResult]:
    """Run scenarios, optionally across processes.  Results keep input order
    and are independent of the parallelism degree."""
    scenarios = list(scenarios)
    if not scenarios:
        return []
    if jobs <= 1 or len(scenarios) == 1:
        return [run_scenario(s, alpha) for s in scenarios]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(s, alpha) for s in scenarios], chunksize=1))


def full_grid(nrep: int = 1000, seed: int = 0) -> list[Scenario]:
    """The complete crossing of the study design (1600 scenarios)."""
    return [
        Scenario(m=m, k=k, n=n, delta=d, tau2=t2, nrep=nrep, seed=seed)
        for m in GRID_M for k in GRID_K for n in GRID_N
        for d in GRID_DELTA for t2 in GRID_TAU2
    ]


def load_grid_config(path) -> tuple[list[Scenario], float]:
    """Parse the key-value grid config.

    [grid] lists space-separated parameter vectors (m, k, n, delta, tau2);
    [run] holds nrep, seed and optional alpha/q_frac.  Scenarios are the
    crossing in m, k, n, delta, tau2 order.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    if "grid" not in cp or "run" not in cp:
        raise ValueError(f"{path}: config needs [grid] and [run] sections")
    grid = cp["grid"]
    run = cp["run"]

    def ints(key):
        return [int(v) for v in grid[key].split()]

    def floats(key):
        return [float(v) for v in grid[key].split()]

    ms, ks, ns = ints("m"), ints("k"), ints("n")
    deltas, tau2s = floats("delta"), floats("tau2")
    nrep = run.getint("nrep")
    seed = run.getint("seed")
    alpha = run.getfloat("alpha", fallback=0.05)
    q_frac = run.getfloat("q_frac", fallback=0.5)
    scenarios = [
        Scenario(m=m, k=k, n=n, delta=d, tau2=t2, q_frac=q_frac, nrep=nrep, seed=seed)
        for m in ms for k in ks for n in ns for d in deltas for t2 in tau2s
    ]
    return scenarios, alpha


def _fmt(x: float) -> str:
    return format(x, ".6g")


def scenario_csv_key(scn: Scenario) -> tuple:
    return (str(scn.m), str(scn.k), str(scn.n), _fmt(scn.delta), _fmt(scn.tau2), str(scn.seed))


def write_results_csv(results: Iterable[ScenarioResult], path) -> None:
    """Tidy CSV: one row per scenario x metric."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for res in results:
            s = res.scenario
            for row in res.rows:
                writer.writerow([s.m, s.k, s.n, _fmt(s.delta), _fmt(s.tau2),
                                 row.metric, row.estimator, _fmt(row.value),
                                 row.denominator, s.seed])


def read_results_keys(path) -> set[tuple]:
    """Scenario keys already present in a results CSV (for --resume)."""
    keys = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected results header {reader.fieldnames}")
        for row in reader:
            keys.add((row["M"], row["K"], row["n"], row["delta"], row["tau2"], row["seed"]))
    return keys


def read_results_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected results header {reader.fieldnames}")
        return list(reader)
