"""Command-line front end.

Verbs::

    ddmhe simulate   --config FILE [--set section.key=value ...]
    ddmhe synthesize --config FILE [--set ...]
    ddmhe estimate   --config FILE [--set ...]
    ddmhe sweep      --config FILE [--set ...] [--values 1e3,1e4,...]
    ddmhe report     --dir RUN_DIR

``--set`` overrides take precedence over the config file (flags above
file). Every verb exits 0 only when all the certificates it requested
pass; validation and runtime failures exit 2 with the module diagnostic.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmhe",
        description=(
            "data-driven moving-horizon estimation: simulate, synthesize "
            "stability parameters, estimate, sweep, report"
        ),
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_flags(p):
        p.add_argument(
            "--config", type=str, default=None, help="INI config file"
        )
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable; wins over the file)",
        )

    for verb, text in (
        ("simulate", "run the plant and write history/truth CSV logs"),
        ("synthesize", "certify estimator weights from historical data"),
        ("estimate", "full experiment: simulate, estimate, report"),
        ("sweep", "replay the scenario across noise weights"),
    ):
        p = sub.add_parser(verb, help=text)
        add_config_flags(p)
        if verb == "sweep":
            p.add_argument(
                "--values",
                type=str,
                default=None,
                help="comma-separated mu values (default 1e3,1e4,1e5,1e6)",
            )

    p = sub.add_parser(
        "report", help="recompute a run report from existing CSV logs"
    )
    p.add_argument("--dir", required=True, help="run output directory")
    return parser


def _load(args) -> harness.ExperimentConfig:
    return harness.load_config(args.config, args.overrides)


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    # Reuse the runner with every estimator switched off: it writes the
    # resolved config plus history/truth CSVs and the truth-only plots.
    cfg = replace(
        cfg, mhe_enabled=False, eskf_enabled=False, kmhe_enabled=False,
        synthesis_enabled=False,
    )
    report = harness.run_experiment(cfg)
    print(f"simulated {report.steps} steps into {report.outputs_dir}")
    return 0


def _cmd_synthesize(args) -> int:
    cfg = _load(args)
    cfg = replace(
        cfg, mhe_enabled=False, eskf_enabled=False, kmhe_enabled=False,
        synthesis_enabled=True,
    )
    report = harness.run_experiment(cfg)
    syn = report.synthesis
    print(
        f"rho0 = {syn['rho0']:.6g}  mu0 = {syn['mu0']:.6g}  "
        f"radius = {syn['radius']:.6g}  iterations = {syn['iterations']}"
    )
    print(f"certified: {syn['rho0'] < 1.0}")
    return 0 if syn["rho0"] < 1.0 else 1


def _cmd_estimate(args) -> int:
    cfg = _load(args)
    report = harness.run_experiment(cfg)
    print(harness._report_text(report), end="")
    return 0 if report.certificates_ok else 1


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.values is not None:
        values = tuple(float(v) for v in args.values.split(","))
    else:
        values = harness.DEFAULT_MU_SWEEP
    reports = harness.sweep_mu(cfg, values)
    for mu, report in sorted(reports.items()):
        for name, m in report.estimators.items():
            print(
                f"mu = {mu:<10g} {name:<5} rmse_full = {m.rmse_full:.6g}  "
                f"rmse_final = {m.rmse_final:.6g}"
            )
    ok = all(r.certificates_ok for r in reports.values())
    print(f"certificates_ok: {ok}")
    return 0 if ok else 1


def _cmd_report(args) -> int:
    run_dir = Path(args.dir)
    metrics = harness.report_from_csvs(run_dir)
    if not metrics:
        print(f"no estimator CSV logs under {run_dir}", file=sys.stderr)
        return 2
    ok = True
    for name, m in metrics.items():
        print(f"[estimator.{name}]")
        print(f"rmse_full = {m.rmse_full!r}")
        print(f"rmse_final = {m.rmse_final!r}")
        print(f"max_error = {m.max_error!r}")
        if m.thm1_rate is not None:
            print(f"thm1_pass_rate = {m.thm1_rate!r}")
        if m.thm2_rate is not None:
            print(f"thm2_pass_rate = {m.thm2_rate!r}")
        ok = ok and m.certificates_ok
    written = harness.emit_plots(run_dir)
    print(f"plots: {', '.join(written)}")
    return 0 if ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "synthesize": _cmd_synthesize,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ValueError, FileNotFoundError, RuntimeError,
            FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
