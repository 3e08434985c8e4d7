import numpy as np
import pytest

from meta3 import model, qform, smd
from meta3.errors import (
    ArmSizeNonPositive,
    DataError,
    EmptyCluster,
    RankDeficientDesign,
)


def balanced_dataset(m=2, k=2, n_c=10, n_t=10, t=0.3):
    clusters = [
        model.cluster(str(g + 1), [model.study(t, n_c, n_t) for _ in range(k)])
        for g in range(m)
    ]
    return model.dataset(clusters)


def test_symmetric_arms_effective_sizes():
    ds = model.validate(balanced_dataset())
    for c in ds.clusters:
        assert c.n_tilde_g == pytest.approx(10.0)
        for s in c.studies:
            assert s.n_tilde == pytest.approx(5.0)
            assert s.n == s.n_c + s.n_t


def test_empty_cluster_rejected():
    ds = model.Dataset(clusters=(
        model.cluster("1", [model.study(0.1, 10, 10)]),
        model.Cluster(id="2", studies=(), n_tilde_g=0.0),
    ))
    with pytest.raises(EmptyCluster):
        model.validate(ds)


def test_single_cluster_rejected():
    ds = model.dataset([model.cluster("1", [model.study(0.1, 10, 10)])])
    with pytest.raises(DataError, match="M >= 2"):
        model.validate(ds)


def test_nonpositive_arm_rejected():
    bad = model.StudySummary(t=0.1, n_c=0, n_t=10, n=10, n_tilde=0.0, v2=0.1)
    ds = model.Dataset(clusters=(
        model.Cluster(id="1", studies=(bad,), n_tilde_g=0.0),
        model.cluster("2", [model.study(0.1, 10, 10)]),
    ))
    with pytest.raises(ArmSizeNonPositive):
        model.validate(ds)


def test_duplicate_intercept_column_is_rank_deficient():
    # Y block equal to cluster 1's intercept indicator duplicates a design
    # column; the eigensolver oracle confirms X'X is singular.
    m, k = 5, 2
    clusters = [
        model.cluster(str(g + 1), [model.study(0.2, 10, 10) for _ in range(k)])
        for g in range(m)
    ]
    y = [np.ones((k, 1)) if g == 0 else np.zeros((k, 1)) for g in range(m)]
    ds = model.dataset(clusters, y_design=y)
    _, x = model.stack(ds)
    evals = qform.eigen_sym(x.T @ x)
    assert evals[-1] == pytest.approx(0.0, abs=1e-10)  # oracle: singular normal matrix
    with pytest.raises(RankDeficientDesign):
        model.validate(ds)


def test_stack_kronecker_structure():
    ds = model.dataset([
        model.cluster("1", [model.study(0.1, 10, 10)]),
        model.cluster("2", [model.study(0.2, 10, 10), model.study(0.3, 10, 10)]),
    ])
    t, x = model.stack(ds)
    assert x.shape == (3, 2)
    assert np.array_equal(x, np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
    assert np.allclose(t, [0.1, 0.2, 0.3])


def test_stack_covariate_block():
    ds = model.dataset(
        [
            model.cluster("1", [model.study(0.1, 10, 10)]),
            model.cluster("2", [model.study(0.2, 10, 10), model.study(0.3, 10, 10)]),
        ],
        y_design=[np.array([[0.1]]), np.array([[0.2], [0.3]])],
    )
    _, x = model.stack(ds)
    assert x.shape == (3, 3)
    assert np.allclose(x[:, 2], [0.1, 0.2, 0.3])


def test_stack_dimensions():
    ds = balanced_dataset(m=3, k=2)
    t, x = model.stack(ds)
    assert t.shape == (6,)
    assert x.shape == (6, 3)
    assert sum(len(c.studies) for c in ds.clusters) == t.size == x.shape[0]


@pytest.mark.parametrize("n_c,n_t", [(10, 10), (5, 15), (2, 18), (9, 11)])
def test_effective_size_bound(n_c, n_t):
    s = model.study(0.0, n_c, n_t)
    assert s.n_tilde <= s.n / 4 + 1e-12
    if n_c == n_t:
        assert s.n_tilde == pytest.approx(s.n / 4)
    else:
        assert s.n_tilde < s.n / 4


def test_csv_roundtrip(tmp_path):
    ds = model.validate(balanced_dataset(m=3, k=2))
    path = tmp_path / "ds.csv"
    model.write_dataset_csv(ds, path)
    back = model.validate(model.read_dataset_csv(path))
    assert back == ds


def test_csv_missing_v2_computed(tmp_path):
    path = tmp_path / "ds.csv"
    path.write_text(
        "cluster,study,n_c,n_t,g\n"
        "a,1,10,10,0.5\n"
        "a,2,10,10,0.1\n"
        "b,1,20,20,0.0\n"
        "b,2,20,20,0.2\n"
    )
    ds = model.read_dataset_csv(path)
    s = ds.clusters[0].studies[0]
    assert s.v2 == pytest.approx(smd.smd_variance(0.5, 10, 10))


def test_csv_malformed_row_has_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "cluster,study,n_c,n_t,g\n"
        "a,1,10,10,0.5\n"
        "a,2,10,ten,0.1\n"
    )
    with pytest.raises(DataError, match=r":3:"):
        model.read_dataset_csv(path)


def test_csv_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("cluster,n_c,n_t\na,10,10\n")
    with pytest.raises(DataError, match="header"):
        model.read_dataset_csv(path)


def test_validate_recomputes_derived_fields():
    # stale n/ntilde values are corrected from the arm sizes
    stale = model.StudySummary(t=0.1, n_c=10, n_t=10, n=21, n_tilde=1.0, v2=0.2)
    ds = model.Dataset(clusters=(
        model.Cluster(id="1", studies=(stale,), n_tilde_g=1.0),
        model.cluster("2", [model.study(0.3, 10, 10)]),
    ))
    out = model.validate(ds)
    assert out.clusters[0].studies[0].n == 20
    assert out.clusters[0].studies[0].n_tilde == pytest.approx(5.0)
    assert out.clusters[0].n_tilde_g == pytest.approx(5.0)
