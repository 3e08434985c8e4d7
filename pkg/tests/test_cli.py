import os
import subprocess
import sys
from pathlib import Path

import pytest

from meta3 import cli, report, simulate
from meta3.errors import DataError

REPO = Path(__file__).resolve().parents[1]
EXAMPLE = REPO / "data" / "example_m5k2.csv"
GOLDEN = REPO / "tests" / "golden" / "fit_example.txt"


def run_cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "meta3.cli", *args],
        capture_output=True, text=True, cwd=REPO,
    )
    return proc


def test_fit_matches_golden_file():
    if os.environ.get("META3_BACKEND", "numba") != "numba":
        pytest.skip("golden output frozen under the default backend")
    proc = run_cli(["fit", "--data", str(EXAMPLE), "--alpha", "0.05", "--method", "both"])
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == GOLDEN.read_text()


def test_fit_moment_block_identical_between_methods():
    both = run_cli(["fit", "--data", str(EXAMPLE), "--method", "both"])
    only = run_cli(["fit", "--data", str(EXAMPLE), "--method", "moment"])
    assert both.returncode == only.returncode == 0
    moment_block = only.stdout
    assert both.stdout.startswith(moment_block.rstrip("\n"))


def test_fit_rejects_single_cluster(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("cluster,study,n_c,n_t,g\na,1,10,10,0.5\na,2,10,10,0.1\n")
    proc = run_cli(["fit", "--data", str(path)])
    assert proc.returncode == 2
    assert "M >= 2" in proc.stderr


def test_fit_malformed_csv_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("cluster,study,n_c,n_t,g\na,1,10,10,0.5\nb,1,x,10,0.2\n")
    proc = run_cli(["fit", "--data", str(path)])
    assert proc.returncode == 2
    assert ":3:" in proc.stderr


def test_fit_rejects_bad_alpha():
    proc = run_cli(["fit", "--data", str(EXAMPLE), "--alpha", "1.5"])
    assert proc.returncode == 2


SIM_CONFIG = (
    "[grid]\n"
    "m = 3\n"
    "k = 2\n"
    "n = 20\n"
    "delta = 0 0.5\n"
    "tau2 = 0.1\n"
    "[run]\n"
    "nrep = 6\n"
    "seed = 4242\n"
)


def test_simulate_deterministic_and_resume(tmp_path):
    cfg = tmp_path / "grid.ini"
    cfg.write_text(SIM_CONFIG)
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    computed, reused = cli.cmd_simulate(cfg, out1, jobs=1)
    assert (computed, reused) == (2, 0)
    cli.cmd_simulate(cfg, out2, jobs=2)
    assert out1.read_bytes() == out2.read_bytes()

    # refuses to clobber without --resume
    with pytest.raises(DataError):
        cli.cmd_simulate(cfg, out1, jobs=1)

    # drop one scenario's rows; --resume recomputes only that scenario
    lines = out1.read_text().splitlines(keepends=True)
    kept = [lines[0]] + [l for l in lines[1:] if not l.startswith("3,2,20,0.5")]
    out1.write_text("".join(kept))
    computed, reused = cli.cmd_simulate(cfg, out1, jobs=1, resume=True)
    assert (computed, reused) == (1, 1)
    assert out1.read_bytes() == out2.read_bytes()


def test_simulate_cli_exit_codes(tmp_path):
    cfg = tmp_path / "grid.ini"
    cfg.write_text(SIM_CONFIG)
    out = tmp_path / "r.csv"
    proc = run_cli(["simulate", "--config", str(cfg), "--out", str(out), "--jobs", "1"])
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    proc = run_cli(["simulate", "--config", str(cfg), "--out", str(out)])
    assert proc.returncode == 2
    assert "--resume" in proc.stderr


@pytest.fixture(scope="module")
def small_results(tmp_path_factory):
    path = tmp_path_factory.mktemp("res") / "results.csv"
    grid = [
        simulate.Scenario(m=3, k=2, n=20, delta=0.5, tau2=0.1, nrep=4, seed=7),
        simulate.Scenario(m=3, k=2, n=40, delta=0.5, tau2=0.1, nrep=4, seed=7),
    ]
    simulate.write_results_csv(simulate.run_grid(grid), path)
    return path


def test_report_appendix_h_panels(small_results, tmp_path):
    written = cli.cmd_report(small_results, "H", tmp_path)
    assert written == sorted(written)
    assert len(written) == 2  # one figure per (delta, n), one panel each
    body = (tmp_path / written[0]).read_text().splitlines()
    assert body[0] == "M,K,n,delta,tau2,estimator,value,denominator"
    series = {line.split(",")[5] for line in body[1:]}
    assert series == {"reml_n", "reml_t", "q_n", "q_t"}


def test_report_appendix_a_series_filter(small_results, tmp_path):
    written = cli.cmd_report(small_results, "A", tmp_path)
    # n=20 passes the appendix-A trace filter; n=40 does too; both land in
    # the same (M, (K, delta)) panel file
    assert len(written) == 1
    body = (tmp_path / written[0]).read_text().splitlines()
    assert {line.split(",")[5] for line in body[1:]} == {"reml_fit"}
    assert {line.split(",")[2] for line in body[1:]} == {"20", "40"}


def test_report_empty_results_warns(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(simulate.RESULT_COLUMNS) + "\n")
    outdir = tmp_path / "panels"
    proc = run_cli(["report", "--in", str(empty), "--appendix", "H",
                    "--out-dir", str(outdir)])
    assert proc.returncode == 0
    assert "warning" in proc.stderr
    assert not list(outdir.glob("*.csv")) if outdir.exists() else True


def test_report_unknown_appendix(small_results, tmp_path):
    proc = run_cli(["report", "--in", str(small_results), "--appendix", "Z",
                    "--out-dir", str(tmp_path)])
    assert proc.returncode == 2
    assert "unknown appendix" in proc.stderr
