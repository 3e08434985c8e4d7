import numpy as np
import pytest

from meta3 import model, moment, simulate


def test_generate_deterministic():
    scn = simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=5, seed=77)
    assert simulate.generate(scn, 3) == simulate.generate(scn, 3)
    assert simulate.generate(scn, 3) != simulate.generate(scn, 4)


def test_generate_distinct_across_scenarios_and_seeds():
    a = simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=5, seed=77)
    b = simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.2, nrep=5, seed=77)
    c = simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=5, seed=78)
    assert simulate.generate(a, 0) != simulate.generate(b, 0)
    assert simulate.generate(a, 0) != simulate.generate(c, 0)


def test_generate_degenerate_variances_center_on_delta():
    # tau2 = omega2 = 0: every study mean equals delta
    scn = simulate.Scenario(m=2, k=2, n=20, delta=0.7, tau2=0.0, nrep=10**4, seed=78)
    total = np.empty(scn.nrep * scn.m * scn.k)
    pos = 0
    from meta3 import smd
    var_g = smd.smd_variance_true(0.7, 10, 10)
    for rep in range(scn.nrep):
        ds = simulate.generate(scn, rep)
        for c in ds.clusters:
            for s in c.studies:
                total[pos] = s.t
                pos += 1
    se = np.sqrt(var_g / total.size)
    assert abs(total.mean() - 0.7) < 3 * se


def test_generate_law_of_total_variance():
    # variance of latent cluster-mean study effects ~ omega2 + tau2/K;
    # the latent draws are replayed through the documented stream order
    scn = simulate.Scenario(m=50, k=20, n=40, delta=0.2, tau2=0.5, nrep=200, seed=79)
    means = []
    for rep in range(scn.nrep):
        rng = simulate.rep_rng(scn, rep)
        delta0 = scn.delta + np.sqrt(scn.omega2) * rng.standard_normal(scn.m)
        theta = delta0[:, None] + np.sqrt(scn.tau2) * rng.standard_normal((scn.m, scn.k))
        means.extend(theta.mean(axis=1))
    means = np.asarray(means)
    expect = scn.omega2 + scn.tau2 / scn.k
    assert means.var(ddof=1) == pytest.approx(expect, rel=0.05)


def test_generate_v2_matches_estimator():
    scn = simulate.Scenario(m=3, k=2, n=40, delta=0.3, tau2=0.05, nrep=5, seed=80)
    ds = simulate.generate(scn, 1)
    from meta3 import smd
    for c in ds.clusters:
        for s in c.studies:
            assert s.v2 == pytest.approx(smd.smd_variance(s.t, s.n_c, s.n_t), rel=1e-12)
            assert s.n_c == s.n_t == 20


def test_scenario_rejects_fractional_arm_split():
    with pytest.raises(ValueError):
        simulate.Scenario(m=2, k=2, n=25, delta=0.0, tau2=0.0, q_frac=0.5)


def test_full_grid_size():
    grid = simulate.full_grid(nrep=10, seed=1)
    assert len(grid) == 1600


def test_run_scenario_single_rep_indicators():
    scn = simulate.Scenario(m=3, k=2, n=20, delta=0.2, tau2=0.02, nrep=1, seed=81)
    res = simulate.run_scenario(scn)
    for metric in ("cover_delta", "cover_tau2", "cover_omega2", "level"):
        for row in res.rows:
            if row.metric == metric and row.denominator:
                assert row.value in (0.0, 1.0)
    assert res.value("nonconv", "moment") == 0.0


def test_run_grid_empty():
    assert simulate.run_grid([]) == []


def test_run_grid_parallel_deterministic(tmp_path):
    grid = [
        simulate.Scenario(m=3, k=2, n=20, delta=0.0, tau2=0.0, nrep=5, seed=82),
        simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=5, seed=82),
        simulate.Scenario(m=4, k=2, n=40, delta=0.2, tau2=0.02, nrep=5, seed=82),
        simulate.Scenario(m=5, k=2, n=20, delta=1.0, tau2=0.5, nrep=5, seed=82),
    ]
    seq = simulate.run_grid(grid, jobs=1)
    par = simulate.run_grid(grid, jobs=8)
    p1, p8 = tmp_path / "r1.csv", tmp_path / "r8.csv"
    simulate.write_results_csv(seq, p1)
    simulate.write_results_csv(par, p8)
    assert p1.read_bytes() == p8.read_bytes()


def test_mean_within_study_variance_decreases_with_n():
    def mean_v2(n):
        scn = simulate.Scenario(m=4, k=3, n=n, delta=0.3, tau2=0.1, nrep=30, seed=83)
        vals = []
        for rep in range(scn.nrep):
            ds = simulate.generate(scn, rep)
            vals.extend(s.v2 for c in ds.clusters for s in c.studies)
        return np.mean(vals)

    assert mean_v2(20) > mean_v2(100) > mean_v2(1000)


def test_se_delta_decreases_with_m():
    def mean_se(m):
        scn = simulate.Scenario(m=m, k=3, n=40, delta=0.3, tau2=0.1, nrep=20, seed=84)
        vals = []
        for rep in range(scn.nrep):
            fit = moment.fit_moment(simulate.generate(scn, rep),
                                    validated=True, variance_cis=False)
            vals.append(fit.se_delta)
        return np.mean(vals)

    assert mean_se(5) > mean_se(25)


def test_smoke_grid_runtime():
    import time

    grid = [
        simulate.Scenario(m=3, k=2, n=20, delta=0.0, tau2=0.0, nrep=50, seed=86),
        simulate.Scenario(m=4, k=2, n=40, delta=0.5, tau2=0.1, nrep=50, seed=86),
        simulate.Scenario(m=5, k=2, n=20, delta=0.2, tau2=0.02, nrep=50, seed=86),
    ]
    t0 = time.perf_counter()
    res = simulate.run_grid(grid, jobs=1)
    assert len(res) == 3
    assert time.perf_counter() - t0 < 60.0


def test_config_roundtrip(tmp_path):
    cfg = tmp_path / "grid.ini"
    cfg.write_text(
        "[grid]\n"
        "m = 3 5\n"
        "k = 2\n"
        "n = 20 40\n"
        "delta = 0 0.5\n"
        "tau2 = 0.1\n"
        "[run]\n"
        "nrep = 7\n"
        "seed = 99\n"
        "alpha = 0.1\n"
    )
    scenarios, alpha = simulate.load_grid_config(cfg)
    assert alpha == 0.1
    assert len(scenarios) == 8
    # crossing order: m-major, tau2-minor
    assert (scenarios[0].m, scenarios[0].n, scenarios[0].delta) == (3, 20, 0.0)
    assert (scenarios[1].m, scenarios[1].n, scenarios[1].delta) == (3, 20, 0.5)
    assert scenarios[-1].m == 5
    assert all(s.nrep == 7 and s.seed == 99 for s in scenarios)


def test_config_missing_section(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[grid]\nm = 3\n")
    with pytest.raises(ValueError):
        simulate.load_grid_config(cfg)


def test_results_csv_roundtrip(tmp_path):
    scn = simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=3, seed=85)
    res = simulate.run_scenario(scn)
    path = tmp_path / "res.csv"
    simulate.write_results_csv([res], path)
    keys = simulate.read_results_keys(path)
    assert keys == {simulate.scenario_csv_key(scn)}
    rows = simulate.read_results_rows(path)
    assert len(rows) == len(res.rows)
    assert {r["metric"] for r in rows} == {m for m, _ in simulate._METRICS}
