"""Domain types for the three-level hierarchical model.

A dataset is M ordered clusters of two-arm studies.  Study i in cluster g
carries an observed bias-corrected SMD t, arm sizes, the effective sample
size ntilde = n_c*n_t/n, and a within-study variance estimate v2.  Stacking
the per-cluster vectors yields the K_total-vector T and the K_total x (M+p)
design X whose first M columns are cluster-intercept indicators.  Input
order of clusters and of studies within a cluster is preserved everywhere;
all matrix constructions use that canonical order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import smd
from .errors import ArmSizeNonPositive, DataError, EmptyCluster, RankDeficientDesign

__all__ = [
    "StudySummary",
    "Cluster",
    "Dataset",
    "WeightSpec",
    "StackedDesign",
    "study",
    "cluster",
    "dataset",
    "validate",
    "stack",
    "design",
    "ssw_weights",
    "read_dataset_csv",
    "write_dataset_csv",
]

# Relative singular-value threshold below which the stacked design is
# declared rank deficient.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class StudySummary:
    t: float
    n_c: int
    n_t: int
    n: int
    n_tilde: float
    v2: float


@dataclass(frozen=True)
class Cluster:
    id: str
    studies: tuple[StudySummary, ...]
    n_tilde_g: float
    w_row: tuple[float, ...] = (1.0,)
    z_row: tuple[float, ...] = ()


@dataclass(frozen=True)
class Dataset:
    clusters: tuple[Cluster, ...]
    y_design: tuple[np.ndarray, ...] | None = None
    omega_known: np.ndarray | None = None


@dataclass(frozen=True)
class WeightSpec:
    """Fixed weight matrices: level2 is K_total x K_total, level3 is M x M."""

    level2: np.ndarray
    level3: np.ndarray


@dataclass(frozen=True)
class StackedDesign:
    """Stacked arrays derived from a validated dataset."""

    t: np.ndarray        # (K_total,)
    x: np.ndarray        # (K_total, M+p)
    v2: np.ndarray       # (K_total,)
    n_tilde: np.ndarray  # (K_total,)
    sizes: np.ndarray    # (M,) studies per cluster
    starts: np.ndarray   # (M+1,) cluster slice boundaries
    n_tilde_g: np.ndarray  # (M,)
    w: np.ndarray        # (M, q)
    z: np.ndarray        # (M, r)
    omega: np.ndarray    # (r, r)

    @property
    def m(self) -> int:
        return self.sizes.size

    @property
    def k_total(self) -> int:
        return self.t.size


def study(t: float, n_c: int, n_t: int, v2: float | None = None) -> StudySummary:
    """Build a StudySummary, computing n, ntilde and (if absent) v2."""
    if n_c < 1 or n_t < 1:
        raise ArmSizeNonPositive(f"arm sizes must be positive, got ({n_c}, {n_t})")
    n = n_c + n_t
    n_tilde = n_c * n_t / n
    if v2 is None:
        v2 = smd.smd_variance(t, n_c, n_t)
    return StudySummary(t=float(t), n_c=int(n_c), n_t=int(n_t), n=n,
                        n_tilde=n_tilde, v2=float(v2))


def cluster(
    id: str,
    studies: Iterable[StudySummary],
    w_row: Sequence[float] = (1.0,),
    z_row: Sequence[float] = (),
) -> Cluster:
    studies = tuple(studies)
    return Cluster(
        id=str(id),
        studies=studies,
        n_tilde_g=float(sum(s.n_tilde for s in studies)),
        w_row=tuple(float(w) for w in w_row),
        z_row=tuple(float(z) for z in z_row),
    )


def dataset(
    clusters: Iterable[Cluster],
    y_design: Sequence[np.ndarray] | None = None,
    omega_known: np.ndarray | None = None,
) -> Dataset:
    if y_design is not None:
        y_design = tuple(np.atleast_2d(np.asarray(y, dtype=float)) for y in y_design)
    if omega_known is not None:
        omega_known = np.asarray(omega_known, dtype=float)
    return Dataset(clusters=tuple(clusters), y_design=y_design, omega_known=omega_known)


def validate(ds: Dataset) -> Dataset:
    """Check invariants, recompute derived quantities, verify design rank.

    Returns a dataset with n, ntilde and ntilde_g recomputed from the arm
    sizes.  Raises EmptyCluster, ArmSizeNonPositive, RankDeficientDesign or
    DataError on violations.
    """
    if len(ds.clusters) < 2:
        raise DataError(f"need at least M >= 2 clusters, got {len(ds.clusters)}")
    new_clusters = []
    q = len(ds.clusters[0].w_row)
    r = len(ds.clusters[0].z_row)
    for c in ds.clusters:
        if not c.studies:
            raise EmptyCluster(f"cluster {c.id!r} has no studies")
        if len(c.w_row) != q or len(c.z_row) != r:
            raise DataError(f"cluster {c.id!r}: inconsistent design row lengths")
        fixed = []
        for s in c.studies:
            if s.n_c < 1 or s.n_t < 1:
                raise ArmSizeNonPositive(
                    f"cluster {c.id!r}: arm sizes must be positive, got ({s.n_c}, {s.n_t})"
                )
            n = s.n_c + s.n_t
            if s.n >= 4 and not s.v2 > 0.0:
                raise DataError(f"cluster {c.id!r}: v2 must be positive for n >= 4")
            fixed.append(StudySummary(t=s.t, n_c=s.n_c, n_t=s.n_t, n=n,
                                      n_tilde=s.n_c * s.n_t / n, v2=s.v2))
        new_clusters.append(Cluster(id=c.id, studies=tuple(fixed),
                                    n_tilde_g=sum(s.n_tilde for s in fixed),
                                    w_row=c.w_row, z_row=c.z_row))
    if ds.y_design is not None:
        if len(ds.y_design) != len(new_clusters):
            raise DataError("y_design must have one block per cluster")
        p = ds.y_design[0].shape[1]
        for c, y in zip(new_clusters, ds.y_design):
            if y.shape != (len(c.studies), p):
                raise DataError(f"cluster {c.id!r}: y block shape {y.shape} does not "
                                f"match ({len(c.studies)}, {p})")
    if ds.omega_known is not None:
        om = ds.omega_known
        if om.shape != (r, r):
            raise DataError(f"omega_known must be {r}x{r}, got {om.shape}")
        if om.size and not np.allclose(om, om.T):
            raise DataError("omega_known must be symmetric")
        if om.size and np.linalg.eigvalsh(om).min() < -1e-10 * max(1.0, np.abs(om).max()):
            raise DataError("omega_known must be nonnegative definite")

    out = Dataset(clusters=tuple(new_clusters), y_design=ds.y_design,
                  omega_known=ds.omega_known)
    _, x = stack(out)
    sv = np.linalg.svd(x, compute_uv=False)
    if sv.size == 0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise RankDeficientDesign(
            f"stacked design is rank deficient (singular values {sv[0]:.3g}..{sv[-1]:.3g})"
        )
    return out


def stack(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stacked effect vector T and design X, cluster-major and study-minor.

    X_g = (delta_g1 1_g, ..., delta_gM 1_g, Y_g): one indicator column per
    cluster followed by the optional study-level covariate blocks.
    """
    m = len(ds.clusters)
    sizes = [len(c.studies) for c in ds.clusters]
    k_total = sum(sizes)
    p = 0 if ds.y_design is None else ds.y_design[0].shape[1]
    t = np.empty(k_total)
    x = np.zeros((k_total, m + p))
    row = 0
    for g, c in enumerate(ds.clusters):
        k = len(c.studies)
        t[row:row + k] = [s.t for s in c.studies]
        x[row:row + k, g] = 1.0
        if p:
            x[row:row + k, m:] = ds.y_design[g]
        row += k
    return t, x


def design(ds: Dataset) -> StackedDesign:
    """Full array bundle used by the estimators (assumes a validated dataset)."""
    t, x = stack(ds)
    sizes = np.array([len(c.studies) for c in ds.clusters], dtype=np.int64)
    starts = np.zeros(sizes.size + 1, dtype=np.int64)
    np.cumsum(sizes, out=starts[1:])
    v2 = np.array([s.v2 for c in ds.clusters for s in c.studies])
    n_tilde = np.array([s.n_tilde for c in ds.clusters for s in c.studies])
    n_tilde_g = np.array([c.n_tilde_g for c in ds.clusters])
    w = np.array([c.w_row for c in ds.clusters], dtype=float)
    r = len(ds.clusters[0].z_row)
    z = np.array([c.z_row for c in ds.clusters], dtype=float).reshape(len(ds.clusters), r)
    omega = ds.omega_known if ds.omega_known is not None else np.zeros((r, r))
    return StackedDesign(t=t, x=x, v2=v2, n_tilde=n_tilde, sizes=sizes, starts=starts,
                         n_tilde_g=n_tilde_g, w=w, z=z, omega=np.asarray(omega, float))


def ssw_weights(ds: Dataset) -> WeightSpec:
    """Default effective-sample-size weights: A = diag(ntilde_gi), F = diag(ntilde_g)."""
    d = design(ds)
    return WeightSpec(level2=np.diag(d.n_tilde), level3=np.diag(d.n_tilde_g))


def read_dataset_csv(path) -> Dataset:
    """Read the long-format dataset CSV: cluster,study,n_c,n_t,g[,v2].

    Rows are grouped by the cluster column in order of first appearance;
    a missing or empty v2 column is filled in from the SMD variance
    estimator.  Raises DataError with a line number on malformed input.
    """
    required = {"cluster", "study", "n_c", "n_t", "g"}
    order: list[str] = []
    groups: dict[str, list[StudySummary]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(
                f"{path}: header must contain columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                cid = row["cluster"].strip()
                n_c = int(row["n_c"])
                n_t = int(row["n_t"])
                g = float(row["g"])
                v2_raw = (row.get("v2") or "").strip()
                v2 = float(v2_raw) if v2_raw else None
            except (TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row: {exc}") from exc
            try:
                s = study(g, n_c, n_t, v2)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if cid not in groups:
                groups[cid] = []
                order.append(cid)
            groups[cid].append(s)
    return dataset(cluster(cid, groups[cid]) for cid in order)


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "study", "n_c", "n_t", "g", "v2"])
        for c in ds.clusters:
            for i, s in enumerate(c.studies, start=1):
                writer.writerow([c.id, i, s.n_c, s.n_t, repr(s.t), repr(s.v2)])
