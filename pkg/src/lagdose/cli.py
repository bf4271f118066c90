"""Command-line entry point ``lagdose``.

Every command writes its files into a private temporary directory next to
``--out`` and moves them into place only on success, so a failing command
leaves no partial output behind.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .estimator import KernelSNMM
from .exceptions import ConfigError, LagdoseError
from .glucose import bin_streams, simulate_streams
from .io import (
    fmt,
    load_panel,
    read_fit_report,
    read_streams,
    write_fit_report,
    write_mc_report,
    write_panel,
    write_streams,
)
from .panel import TrajectoryPanel
from .policy import DoseRegime, estimated_advantage_report, suggest_doses
from .simulation import generate_panel, resolve_threads, run_monte_carlo
from .snmm import parameter_names
from .validation import check_dose_bounds, check_features, check_summary

COMMANDS = ("simulate", "fit", "mc", "suggest", "evaluate", "bin-glucose")


def _panel(args, cfg: ExperimentConfig) -> TrajectoryPanel:
    if args.panel is None:
        raise ConfigError(f"{args.command} needs --panel")
    return load_panel(args.panel, initial_dose=cfg.initial_dose)


def _subset(panel: TrajectoryPanel, rng) -> TrajectoryPanel:
    return panel if rng is None else panel.subset(rng.indices(panel.n))


def _bounds(cfg: ExperimentConfig, panel: TrajectoryPanel):
    # observed_max looks at every subject in the file, not just the fitted ones
    return None if cfg.dose_bounds == "unbounded" else check_dose_bounds(cfg.dose_bounds, panel)


def _estimator(cfg: ExperimentConfig, panel: TrajectoryPanel) -> KernelSNMM:
    return KernelSNMM(
        summary=cfg.summary_spec(),
        features=cfg.feature_map(),
        lags=cfg.lags,
        weights=cfg.weights,
        bandwidth=cfg.bandwidth_rule(),
        level=cfg.level,
        t_range=cfg.t_range,
        dose_bounds=_bounds(cfg, panel),
        leave_one_out=cfg.leave_one_out,
    )


def _regime(cfg: ExperimentConfig, panel: TrajectoryPanel) -> DoseRegime:
    """The fitted weighted-advantage rule, refitted or read from ``params_from``."""
    if cfg.params_from is None:
        est = _estimator(cfg, panel).fit(_subset(panel, cfg.fit_subjects))
        return est.regime_
    spec = check_summary(cfg.summary_spec(), panel)
    fmap = check_features(cfg.feature_map())
    fits = read_fit_report(cfg.params_from)
    if "weighted" not in fits:
        raise ConfigError(f"{cfg.params_from} holds no weighted fit")
    fit = fits["weighted"]
    expected = parameter_names(fmap, spec.names)
    if tuple(fit.param_names) != expected:
        raise ConfigError(
            f"parameters in {cfg.params_from} are {list(fit.param_names)} but the config implies {list(expected)}"
        )
    bounds = _bounds(cfg, panel) or (-np.inf, np.inf)
    return DoseRegime(fit.weighted_params, fmap, spec, bounds)


def cmd_simulate(args, cfg, out: Path) -> None:
    panel = generate_panel(cfg.dgp_config())
    write_panel(panel, out / "panel.csv")


def cmd_fit(args, cfg, out: Path) -> None:
    panel = _panel(args, cfg)
    est = _estimator(cfg, panel).fit(_subset(panel, cfg.fit_subjects))
    fits = dict(est.lag_fits_)
    fits["weighted"] = est.weighted_fit_
    write_fit_report(fits, out, cfg.level)


def cmd_mc(args, cfg, out: Path) -> None:
    report = run_monte_carlo(
        cfg.dgp_config(), cfg.replicates, cfg.estimator_settings(), threads=resolve_threads(args.threads)
    )
    write_mc_report(report, out)


def cmd_suggest(args, cfg, out: Path) -> None:
    panel = _panel(args, cfg)
    regime = _regime(cfg, panel)
    target = _subset(panel, cfg.eval_subjects)
    F, t = regime.features(target)
    doses = np.full(target.A.shape, np.nan)
    doses[:, t - 1] = suggest_doses(regime, F)
    write_panel(target, out / "suggestions.csv", extra={"suggested_dose": doses})


def cmd_evaluate(args, cfg, out: Path) -> None:
    panel = _panel(args, cfg)
    regime = _regime(cfg, panel)
    report = estimated_advantage_report(regime, _subset(panel, cfg.eval_subjects))
    rows = [
        ("suggested_advantage", fmt(report.suggested)),
        ("observed_advantage", fmt(report.observed)),
        ("n_subjects", report.n_subjects),
        ("t_start", report.t_range[0]),
        ("t_stop", report.t_range[1]),
        ("alpha", fmt(regime.params.alpha)),
    ]
    with (out / "evaluation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)
    (out / "evaluation.txt").write_text(
        f"mean estimated weighted advantage over t={report.t_range[0]}..{report.t_range[1]}, "
        f"{report.n_subjects} subjects\n"
        f"  suggested doses: {report.suggested:.4g}\n"
        f"  observed doses:  {report.observed:.4g}\n"
    )


def cmd_bin_glucose(args, cfg, out: Path) -> None:
    g = cfg.glucose
    if args.panel is None:
        records = simulate_streams(g.simulate_days, seed=cfg.seed)
        write_streams(records, out / "streams.csv")
    else:
        records = read_streams(args.panel)
    write_panel(bin_streams(records, g.bin_minutes, g.bins_per_day), out / "panel.csv")


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "mc": cmd_mc,
    "suggest": cmd_suggest,
    "evaluate": cmd_evaluate,
    "bin-glucose": cmd_bin_glucose,
}


def _run_atomic(handler, args, cfg, out: Path) -> list[Path]:
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".lagdose-", dir=out))
    try:
        handler(args, cfg, tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    written = []
    for f in sorted(tmp.iterdir()):
        os.replace(f, out / f.name)
        written.append(out / f.name)
    tmp.rmdir()
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagdose", description="Lagged dose effects and dose suggestions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON experiment config (defaults apply if omitted)")
    p.add_argument("--panel", type=Path, help="panel CSV (bin-glucose: raw stream CSV)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="worker processes for mc (env LAGDOSE_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        written = _run_atomic(HANDLERS[args.command], args, cfg, args.out)
    except LagdoseError as exc:
        print(f"lagdose {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
