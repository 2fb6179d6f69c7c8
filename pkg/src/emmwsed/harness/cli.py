"""Command line entry point: ``emmwsed <command> [--config FILE] [--seed N] ...``.

Each command starts from built-in defaults matching the corresponding
study, applies the config file (if any) and then the command line flags.
Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ScenarioConfig, build_config, load_config
from .io import FORMATS, emit_results

COMMAND_DEFAULTS = {
    "consensus": {"scenario": "consensus", "trials": "100", "sweep.n_sus": "10, 60",
                  "sweep.connectivity": "0.2, 0.5"},
    "dist": {"scenario": "dist", "trials": "10000", "channel.L": "12", "channel.snr_db": "-3",
             "dist.C": "5, 10, 20, 40"},
    "roc": {"scenario": "roc", "detectors": "ED, WSED, mWSED", "network.n_sus": "10",
            "network.connectivity": "0.2", "channel.L": "12", "channel.snr_db": "-3",
            "sweep.alpha_beta": "0.05, 0.1"},
    "err-surface": {"scenario": "err-surface", "trials": "200", "detectors": "EM-Viterbi",
                    "sweep.n_sus": "10, 20, 60", "sweep.L": "8, 12, 36",
                    "sweep.snr_db": "-5, -3, 0"},
    "em-converge": {"scenario": "em-converge", "trials": "200", "detectors": "EM-Viterbi",
                    "network.n_sus": "10", "sweep.L": "12, 36", "sweep.snr_db": "-5, -3, 0"},
    "pd-vs-snr": {"scenario": "pd-vs-snr", "trials": "1000",
                  "detectors": "EM-Viterbi, EM-mWSED, mWSED", "network.n_sus": "20",
                  "network.connectivity": "0.5", "sweep.L": "12, 36",
                  "sweep.snr_db": "-6, -5, -4, -3, -2, -1, 0"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value scenario file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--trials", type=int, help="Monte Carlo trials (seeds for consensus)")
    common.add_argument("--out", type=Path, help="output file (default <command>.<format>)")
    common.add_argument("--format", choices=FORMATS, default="csv")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--plot", action="store_true", help="also render a PNG next to --out")
    parser = _Parser(prog="emmwsed", description="Cooperative spectrum sensing experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "consensus": "iterations to consensus over random networks",
        "dist": "histograms of the mWSED statistic for several C",
        "roc": "ROC curves and AUC per detector",
        "err-surface": "EM-Viterbi state estimation error over SNR and L",
        "em-converge": "EM parameter error per iteration",
        "pd-vs-snr": "detection probability at matched false-alarm rate versus SNR",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = build_config(COMMAND_DEFAULTS[args.command])
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    overrides = {k: getattr(args, k) for k in ("seed", "trials", "workers") if getattr(args, k) is not None}
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def run_command(command: str, cfg: ScenarioConfig, out: Path, fmt: str, plot: bool) -> list[Path]:
    from . import plots

    written = []
    if command == "consensus":
        records, traces = ex.consensus_study(cfg)
        written.append(emit_results(records, out, ex.ConsensusRecord, fmt))
        trace_path = out.with_name(f"{out.stem}_traces{out.suffix}")
        written.append(emit_results(traces, trace_path, ex.ConsensusTraceRecord, fmt))
        if plot:
            written.append(plots.plot_consensus(traces, plots.figure_path(out)))
        return written
    if command == "dist":
        records = ex.dist(cfg)
        written.append(emit_results(records, out, ex.DistRecord, fmt))
        if plot:
            written.append(plots.plot_dist(records, plots.figure_path(out)))
        return written
    runner, plotter = {
        "roc": (ex.roc_sweep, plots.plot_roc),
        "err-surface": (ex.estimation_error_surface, plots.plot_err_surface),
        "em-converge": (ex.mse_trace, plots.plot_mse),
        "pd-vs-snr": (ex.pd_vs_snr, plots.plot_pd_vs_snr),
    }[command]
    records = runner(cfg)
    written.append(emit_results(records, out, ex.MetricRecord, fmt))
    if plot:
        written.append(plotter(records, plots.figure_path(out)))
    for r in records:
        if r.warning:
            print(f"warning: {r.detector} at point L={r.L}, {r.snr_db:g} dB: {r.warning}", file=sys.stderr)
            break
    return written


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"emmwsed: config error: {exc}", file=sys.stderr)
        return 1
    out = args.out or Path(f"{args.command}.{args.format}")
    try:
        for path in run_command(args.command, cfg, out, args.format, args.plot):
            print(path)
    except ConfigError as exc:
        print(f"emmwsed: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any failure with the runtime exit status
        print(f"emmwsed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
