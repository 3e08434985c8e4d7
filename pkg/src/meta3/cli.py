"""Command-line interface: fit a dataset, run a simulation grid, slice
results into appendix report panels.

Exit codes: 0 success, 2 input/data error, 3 internal numeric failure.
All floating-point output uses 6 significant digits so repeated runs are
byte-identical.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import model, moment, report, reml, simulate
from .errors import DataError, Meta3Error, NumericError

__all__ = ["main", "cmd_fit", "cmd_simulate", "cmd_report"]


def _fmt(x: float) -> str:
    return format(x, ".6g")


def _fmt_iv(iv: tuple[float, float]) -> str:
    return f"[{_fmt(iv[0])}, {_fmt(iv[1])}]"


def cmd_fit(data_path, alpha: float, method: str, out=sys.stdout) -> None:
    ds = model.validate(model.read_dataset_csv(data_path))
    k_total = sum(len(c.studies) for c in ds.clusters)
    print(f"dataset: M={len(ds.clusters)} clusters, studies={k_total}", file=out)
    print(f"alpha = {_fmt(alpha)}", file=out)

    if method in ("moment", "both"):
        fit = moment.fit_moment(ds, alpha=alpha, validated=True)
        print("", file=out)
        print("[moment]", file=out)
        print(f"delta_hat = {_fmt(fit.delta_hat)}", file=out)
        print(f"se_delta = {_fmt(fit.se_delta)}", file=out)
        print(f"ci_delta_normal = {_fmt_iv(fit.ci_delta_normal)}", file=out)
        print(f"ci_delta_t = {_fmt_iv(fit.ci_delta_t)}", file=out)
        print(f"tau2_hat = {_fmt(fit.tau2_hat)}", file=out)
        print(f"ci_tau2 = {_fmt_iv(fit.ci_tau2)}", file=out)
        print(f"omega2_hat = {_fmt(fit.omega2_hat)}", file=out)
        print(f"ci_omega2 = {_fmt_iv(fit.ci_omega2)}", file=out)
        print(f"Q_A = {_fmt(fit.level2.q_a)}  p_QA = {_fmt(fit.p_qa)}", file=out)
        print(f"Q_F = {_fmt(fit.level3.q_f)}  p_QF = {_fmt(fit.p_qf)}", file=out)

    if method in ("reml", "both"):
        d = model.design(ds)
        rfit = reml.reml_fit(d.t, reml.fixed_design(d), d.v2, d.starts, alpha=alpha)
        print("", file=out)
        print("[reml]", file=out)
        print(f"converged = {'yes' if rfit.converged else 'no'}", file=out)
        if rfit.converged:
            print(f"tau2_reml = {_fmt(rfit.tau2)}", file=out)
            print(f"omega2_reml = {_fmt(rfit.omega2)}", file=out)
            print(f"delta_iv = {_fmt(rfit.delta_iv)}", file=out)
            print(f"se_delta_iv = {_fmt(rfit.se_delta)}", file=out)
            ci_n = reml.delta_interval_iv(rfit, d.m, "normal", alpha)
            ci_t = reml.delta_interval_iv(rfit, d.m, "t", alpha)
            print(f"ci_delta_iv_normal = {_fmt_iv(ci_n)}", file=out)
            print(f"ci_delta_iv_t = {_fmt_iv(ci_t)}", file=out)
            print(f"loglik = {_fmt(rfit.loglik)}", file=out)
            if rfit.pl_converged_tau2:
                print(f"pl_ci_tau2 = {_fmt_iv(rfit.pl_ci_tau2)}", file=out)
            else:
                print("pl_ci_tau2 = not converged", file=out)
            if rfit.pl_converged_omega2:
                print(f"pl_ci_omega2 = {_fmt_iv(rfit.pl_ci_omega2)}", file=out)
            else:
                print("pl_ci_omega2 = not converged", file=out)


def cmd_simulate(config_path, out_path, jobs: int, resume: bool = False,
                 log=sys.stderr) -> tuple[int, int]:
    """Run the configured grid; returns (computed, reused) scenario counts."""
    scenarios, alpha = simulate.load_grid_config(config_path)
    existing_rows: list[dict] = []
    existing_keys: set[tuple] = set()
    if os.path.exists(out_path):
        if not resume:
            raise DataError(
                f"{out_path} already exists; pass --resume to fill in missing scenarios"
            )
        existing_rows = simulate.read_results_rows(out_path)
        existing_keys = {
            (r["M"], r["K"], r["n"], r["delta"], r["tau2"], r["seed"])
            for r in existing_rows
        }

    todo = [s for s in scenarios if simulate.scenario_csv_key(s) not in existing_keys]
    print(f"grid: {len(scenarios)} scenarios, computing {len(todo)}, "
          f"reusing {len(scenarios) - len(todo)}", file=log)
    results = {}
    for i, res in enumerate(simulate.run_grid(todo, jobs=jobs, alpha=alpha)):
        results[simulate.scenario_csv_key(res.scenario)] = res
        s = res.scenario
        print(f"  [{i + 1}/{len(todo)}] M={s.m} K={s.k} n={s.n} "
              f"delta={s.delta:g} tau2={s.tau2:g} done", file=log)

    by_key: dict[tuple, list[dict]] = {}
    for r in existing_rows:
        by_key.setdefault((r["M"], r["K"], r["n"], r["delta"], r["tau2"], r["seed"]),
                          []).append(r)

    # canonical grid order, reusing old rows verbatim where present
    with open(out_path, "w", newline="") as fh:
        fh.write(",".join(simulate.RESULT_COLUMNS) + "\n")
        for s in scenarios:
            key = simulate.scenario_csv_key(s)
            if key in results:
                res = results[key]
                for row in res.rows:
                    fh.write(",".join([
                        str(s.m), str(s.k), str(s.n),
                        format(s.delta, ".6g"), format(s.tau2, ".6g"),
                        row.metric, row.estimator, format(row.value, ".6g"),
                        str(row.denominator), str(s.seed),
                    ]) + "\n")
            else:
                for r in by_key[key]:
                    fh.write(",".join(r[c] for c in simulate.RESULT_COLUMNS) + "\n")
    return len(todo), len(scenarios) - len(todo)


def cmd_report(results_path, appendix: str, out_dir, log=sys.stderr) -> list[str]:
    try:
        written = report.write_panels(results_path, appendix, out_dir)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not written:
        print(f"warning: no rows for appendix {appendix} in {results_path}", file=log)
    return written


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meta3",
        description="Three-level meta-analysis of standardized mean differences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="analyze a dataset CSV")
    p_fit.add_argument("--data", required=True, help="dataset CSV path")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--method", choices=("moment", "reml", "both"), default="moment")

    p_sim = sub.add_parser("simulate", help="run a simulation grid")
    p_sim.add_argument("--config", required=True, help="grid config path")
    p_sim.add_argument("--out", required=True, help="output results CSV")
    p_sim.add_argument("--jobs", type=int,
                       default=int(os.environ.get("META3_JOBS", "1")))
    p_sim.add_argument("--resume", action="store_true",
                       help="fill in scenarios missing from an existing output file")

    p_rep = sub.add_parser("report", help="emit per-panel CSVs for one appendix")
    p_rep.add_argument("--in", dest="results", required=True, help="results CSV")
    p_rep.add_argument("--appendix", required=True, help="appendix letter A..H")
    p_rep.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            if not 0.0 < args.alpha < 1.0:
                raise DataError(f"alpha must be in (0, 1), got {args.alpha}")
            cmd_fit(args.data, args.alpha, args.method)
        elif args.command == "simulate":
            cmd_simulate(args.config, args.out, args.jobs, args.resume)
        else:
            cmd_report(args.results, args.appendix, args.out_dir)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, Meta3Error) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
