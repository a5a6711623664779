"""Command-line entry point: ``ctdls simulate|check-excitation|compare|audit``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from .harness import (
    AUDIT_TOLERANCES,
    ESTIMATORS,
    ConfigError,
    ScenarioConfig,
    export_report,
    run_monte_carlo,
    write_excitation_csv,
    write_json,
    write_mse_csv,
)
from .network import TopologyError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_AUDIT = 0, 2, 3, 4


def _load(args, **overrides) -> ScenarioConfig:
    config = ScenarioConfig.from_file(args.config)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        try:
            config = dataclasses.replace(config, **changes)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
    return config


def _out_dir(args, config):
    return Path(args.out if getattr(args, "out", None) else config.out)


def _report_aborts(report):
    for a in report.aborted:
        who = a["estimator"] or "plant"
        print(f"replication {a['replication']} aborted ({who}) at t={a['t']:.6g}: {a['message']}", file=sys.stderr)
    return EXIT_NUMERIC if report.aborted else EXIT_OK


def cmd_simulate(args):
    config = _load(args, seed=args.seed, replications=args.runs,
                   full_resolution=True if args.full_resolution else None)
    report = run_monte_carlo(config)
    out = _out_dir(args, config)
    export_report(report, "csv", out)
    write_json(report, out / "report.json")
    for name in report.estimators:
        if name in report.mse:
            final = report.mse[name][:, -1]
            print(f"{name:14s} final MSE per sensor: " + " ".join(f"{x:.4g}" for x in final))
    print(f"wrote {out}")
    return _report_aborts(report)


def cmd_check_excitation(args):
    config = _load(args, replications=1, excitation=True)
    if not set(config.estimators) & {"dls", "standard_ls"}:
        config = dataclasses.replace(config, estimators=["dls"])
    report = run_monte_carlo(config)
    out = _out_dir(args, config)
    write_excitation_csv(report, out / "excitation.csv")
    ex = report.excitation
    if ex is not None:
        v = ex["verdict"]
        trend = v["trend"]
        trend_s = "n/a" if trend is None or (isinstance(trend, float) and math.isnan(trend)) else f"{trend:.4g}"
        print(f"epochs={len(ex['R'])} diameter={ex['diameter']} final log R/lambda_min={ex['log_ratio'][-1]:.4g}")
        print(f"trend over last {v['window']} epochs: {trend_s}; satisfied hint: {v['satisfied_hint']}")
        print("(finite-horizon heuristic; the limit itself cannot be decided from a finite run)")
    print(f"wrote {out / 'excitation.csv'}")
    return _report_aborts(report)


def cmd_compare(args):
    names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    bad = [n for n in names if n not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
    config = _load(args, estimators=names)
    config.validate()
    report = run_monte_carlo(config)
    out = _out_dir(args, config)
    write_mse_csv(report, out / "mse.csv")
    write_json(report, out / "report.json")
    print(f"{'estimator':14s} {'sensor':>6s} {'initial MSE':>12s} {'final MSE':>12s} {'ratio':>8s}")
    for name in report.estimators:
        if name not in report.mse:
            continue
        for i, row in enumerate(report.mse[name]):
            ratio = row[-1] / row[0] if row[0] > 0 else float("nan")
            print(f"{name:14s} {i + 1:6d} {row[0]:12.5g} {row[-1]:12.5g} {ratio:8.3g}")
    print(f"wrote {out}")
    return _report_aborts(report)


def cmd_audit(args):
    config = _load(args)
    if "dls" not in config.estimators:
        config = dataclasses.replace(config, estimators=["dls"] + list(config.estimators))
    report = run_monte_carlo(config)
    code = _report_aborts(report)
    summary = report.audit_summary
    for key, tol in AUDIT_TOLERANCES.items():
        value = summary.get(key, 0.0)
        flag = "ok" if value <= tol else "VIOLATION"
        print(f"{key:24s} {value:.3e}  (tol {tol:.0e})  {flag}")
    if report.audit_failures():
        return EXIT_AUDIT
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctdls", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo run with CSV and JSON output")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out")
    p.add_argument("--full-resolution", action="store_true", help="one CSV row per grid step")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-excitation", help="excitation series and finite-horizon verdict")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check_excitation)

    p = sub.add_parser("compare", help="MSE curves for several estimators")
    p.add_argument("--config", required=True)
    p.add_argument("--estimators", default=",".join(ESTIMATORS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="invariant audits only; exit 4 on violation")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TopologyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
