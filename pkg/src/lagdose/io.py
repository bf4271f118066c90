"""CSV readers and writers for panels, fit reports, Monte Carlo reports and raw streams.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces the in-memory values exactly.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .panel import LagParams, LagWeights, TrajectoryPanel
from .snmm import LagFit, confidence_intervals

__all__ = [
    "PanelCsvSchema",
    "load_panel",
    "write_panel",
    "write_fit_report",
    "read_fit_report",
    "format_fit_table",
    "write_mc_report",
    "read_mc_report",
    "format_mc_table",
    "read_streams",
    "write_streams",
]

RESERVED = ("subject_id", "t", "dose", "outcome")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


class PanelCsvSchema:
    """Column layout of a panel file.

    One row per (subject, t) with ``t = 1..T+1``; ``dose`` is blank on the
    last row and ``outcome`` blank on the first. Every other column is a
    covariate unless ``covariates`` lists them explicitly.
    """

    def __init__(self, covariates=None, subject_col="subject_id", t_col="t", dose_col="dose",
                 outcome_col="outcome"):
        self.covariates = list(covariates) if covariates is not None else None
        self.subject_col = subject_col
        self.t_col = t_col
        self.dose_col = dose_col
        self.outcome_col = outcome_col

    def required(self) -> list[str]:
        return [self.subject_col, self.t_col, self.dose_col, self.outcome_col]


def _cell(row: dict, col: str, lineno: int, required: bool) -> float | None:
    raw = (row.get(col) or "").strip()
    if raw == "":
        if required:
            raise DataError(f"line {lineno}: missing value in column {col!r}")
        return None
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"line {lineno}: column {col!r} is not numeric: {raw!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: column {col!r} is not finite: {raw!r}")
    return value


def load_panel(path, schema: PanelCsvSchema | None = None, initial_dose=None) -> TrajectoryPanel:
    """Read and validate a panel CSV; subjects keep their order of first appearance."""
    schema = schema or PanelCsvSchema()
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.required() if c not in header]
        covariates = schema.covariates
        if covariates is None:
            covariates = [c for c in header if c not in schema.required()]
        missing += [c for c in covariates if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; header is {header}")
        if not covariates:
            raise DataError(f"{path}: no covariate columns")
        records = defaultdict(dict)
        for lineno, row in enumerate(reader, start=2):
            sid = (row.get(schema.subject_col) or "").strip()
            if not sid:
                raise DataError(f"line {lineno}: empty subject id")
            t_raw = (row.get(schema.t_col) or "").strip()
            try:
                t = int(t_raw)
            except ValueError:
                raise DataError(f"line {lineno}: t is not an integer: {t_raw!r}") from None
            if t < 1:
                raise DataError(f"line {lineno}: t must be >= 1, got {t}")
            if t in records[sid]:
                raise DataError(f"line {lineno}: duplicate row for subject {sid!r} at t={t}")
            records[sid][t] = (row, lineno)

    if not records:
        raise DataError(f"{path}: no data rows")
    horizons = {}
    for sid, rows in records.items():
        ts = sorted(rows)
        for expected, t in enumerate(ts, start=1):
            if t != expected:
                raise DataError(
                    f"subject {sid!r}: time index jumps from {expected - 1} to {t} "
                    f"(line {rows[t][1]}); t must be contiguous from 1"
                )
        horizons[sid] = len(ts) - 1
    if len(set(horizons.values())) != 1:
        raise DataError(f"subjects have different horizons: {dict(horizons)}")
    T = next(iter(horizons.values()))
    if T < 1:
        raise DataError("each subject needs at least two rows (t=1..T+1 with T >= 1)")

    n, p = len(records), len(covariates)
    X = np.empty((n, T + 1, p))
    A = np.empty((n, T))
    Y = np.empty((n, T))
    for i, rows in enumerate(records.values()):
        for t in range(1, T + 2):
            row, lineno = rows[t]
            X[i, t - 1] = [_cell(row, c, lineno, True) for c in covariates]
            if t <= T:
                A[i, t - 1] = _cell(row, schema.dose_col, lineno, True)
            if t >= 2:
                Y[i, t - 2] = _cell(row, schema.outcome_col, lineno, True)
    return TrajectoryPanel(
        X, A, Y, covariate_names=tuple(covariates), subject_ids=tuple(records),
        initial_dose=initial_dose,
    )


def write_panel(panel: TrajectoryPanel, path, extra: dict | None = None) -> None:
    """Write ``panel`` in the schema above; ``extra`` maps column names to (n, T) arrays."""
    extra = extra or {}
    cols = ["subject_id", "t", *panel.covariate_names, "dose", "outcome", *extra]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, sid in enumerate(panel.subject_ids):
            for t in range(1, panel.T + 2):
                dose = panel.A[i, t - 1] if t <= panel.T else None
                outcome = panel.Y[i, t - 2] if t >= 2 else None
                extras = [fmt(v[i, t - 1]) if t <= panel.T else "" for v in extra.values()]
                w.writerow([sid, t, *map(fmt, panel.X[i, t - 1]), fmt(dose), fmt(outcome), *extras])


# --------------------------------------------------------------------------
# fit reports

FIT_COLUMNS = ["lag", "parameter", "estimate", "se", "ci_lo", "ci_hi", "level", "n_subjects",
               "t_start", "t_stop", "weights"]


def write_fit_report(fits: dict, out_dir, level: float = 0.95) -> list[Path]:
    """Write ``estimates.csv``, ``covariance.csv`` and ``estimates.txt``; returns the paths."""
    out_dir = Path(out_dir)
    est_path = out_dir / "estimates.csv"
    cov_path = out_dir / "covariance.csv"
    txt_path = out_dir / "estimates.txt"
    with est_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for lag, fit in fits.items():
            ci = confidence_intervals(fit, level)
            weights = " ".join(map(fmt, fit.weights.w)) if fit.weights is not None else ""
            for j, name in enumerate(fit.param_names):
                w.writerow([lag, name, fmt(fit.estimate[j]), fmt(fit.se[j]), fmt(ci[j, 0]),
                            fmt(ci[j, 1]), fmt(level), fit.n_subjects, fit.t_range[0],
                            fit.t_range[1], weights])
    with cov_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "row", "col", "value"])
        for lag, fit in fits.items():
            for a, ra in enumerate(fit.param_names):
                for b, rb in enumerate(fit.param_names):
                    w.writerow([lag, ra, rb, fmt(fit.covariance[a, b])])
    txt_path.write_text(format_fit_table(fits))
    return [est_path, cov_path, txt_path]


def _lag_key(raw: str):
    return int(raw) if raw.isdigit() else raw


def read_fit_report(out_dir) -> dict:
    """Inverse of :func:`write_fit_report`; returns ``{lag: LagFit}``."""
    out_dir = Path(out_dir)
    for name in ("estimates.csv", "covariance.csv"):
        if not (out_dir / name).exists():
            raise DataError(f"{out_dir / name} does not exist")
    try:
        return _read_fit_report(out_dir)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{out_dir}: malformed fit report ({exc})") from None


def _read_fit_report(out_dir: Path) -> dict:
    rows = defaultdict(list)
    with (out_dir / "estimates.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows[_lag_key(row["lag"])].append(row)
    cov = defaultdict(dict)
    with (out_dir / "covariance.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            cov[_lag_key(row["lag"])][(row["row"], row["col"])] = float(row["value"])
    fits = {}
    for lag, rs in rows.items():
        names = tuple(r["parameter"] for r in rs)
        est = np.array([float(r["estimate"]) for r in rs])
        se = np.array([float(r["se"]) for r in rs])
        C = np.array([[cov[lag][(a, b)] for b in names] for a in names])
        weights = rs[0]["weights"].split()
        fits[lag] = LagFit(
            LagParams.from_vector(est, k=lag if isinstance(lag, int) else None),
            C,
            se,
            int(rs[0]["n_subjects"]),
            (int(rs[0]["t_start"]), int(rs[0]["t_stop"])),
            names,
            LagWeights(tuple(float(v) for v in weights)) if weights else None,
        )
    return fits


def _table(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(r[j]) for r in [header, *body]) for j in range(len(header))]
    line = lambda r: "  ".join(c.rjust(widths[j]) if j else c.ljust(widths[j]) for j, c in enumerate(r))
    rule = "-" * len(line(header))
    return "\n".join([rule, line(header), rule, *map(line, body), rule]) + "\n"


def format_fit_table(fits: dict) -> str:
    """Parameters as rows, one ``estimate (se)`` column per lag plus the weighted fit."""
    lags = list(fits)
    names = next(iter(fits.values())).param_names
    header = ["parameter"] + [f"k={lag}" if isinstance(lag, int) else str(lag).capitalize() for lag in lags]
    body = [
        [name] + [f"{fits[lag].estimate[j]:.4g} ({fits[lag].se[j]:.3g})" for lag in lags]
        for j, name in enumerate(names)
    ]
    return _table(header, body)


# --------------------------------------------------------------------------
# Monte Carlo reports

MC_COLUMNS = ["lag", "parameter", "truth", "bias", "sd", "mean_se", "coverage", "n_ok"]


def write_mc_report(report, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    rows_path = out_dir / "mc_report.csv"
    summary_path = out_dir / "mc_summary.csv"
    txt_path = out_dir / "mc_report.txt"
    with rows_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MC_COLUMNS)
        for r in report.rows:
            w.writerow([r.lag, r.parameter, fmt(r.truth), fmt(r.bias), fmt(r.sd), fmt(r.mean_se),
                        fmt(r.coverage), r.n_ok])
    with summary_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["replicates", report.replicates])
        w.writerow(["failures", len(report.failures)])
        w.writerow(["policy_mean", fmt(report.policy_mean)])
        w.writerow(["policy_sd", fmt(report.policy_sd)])
        w.writerow(["optimal_value", fmt(report.optimal_value)])
        for rep, msg in report.failures:
            w.writerow([f"failure:{rep}", msg])
    txt_path.write_text(format_mc_table(report))
    return [rows_path, summary_path, txt_path]


def _float(raw: str) -> float:
    return float(raw) if raw != "" else float("nan")


def read_mc_report(out_dir):
    from .simulation import McReport, McRow

    out_dir = Path(out_dir)
    rows = []
    with (out_dir / "mc_report.csv").open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(McRow(_lag_key(r["lag"]), r["parameter"], _float(r["truth"]),
                              _float(r["bias"]), _float(r["sd"]), _float(r["mean_se"]),
                              _float(r["coverage"]), int(r["n_ok"])))
    meta, failures = {}, []
    with (out_dir / "mc_summary.csv").open(newline="") as fh:
        for r in csv.DictReader(fh):
            if r["metric"].startswith("failure:"):
                failures.append((int(r["metric"].split(":", 1)[1]), r["value"]))
            else:
                meta[r["metric"]] = r["value"]
    return McReport(
        rows,
        int(meta["replicates"]),
        failures,
        policy_mean=_float(meta["policy_mean"]),
        policy_sd=_float(meta["policy_sd"]),
        optimal_value=_float(meta["optimal_value"]),
    )


def format_mc_table(report) -> str:
    """Bias, SD and mean SE in units of 1e-3, coverage in percent."""
    header = ["lag", "parameter", "Bias", "SD", "SE", "CP"]
    body = [
        [str(r.lag), r.parameter, f"{1e3 * r.bias:.1f}", f"{1e3 * r.sd:.1f}",
         f"{1e3 * r.mean_se:.1f}", f"{100 * r.coverage:.1f}"]
        for r in report.rows
    ]
    text = _table(header, body)
    text += f"replicates: {report.replicates}  failures: {len(report.failures)}\n"
    if not math.isnan(report.policy_mean):
        text += (
            f"policy value (1e-3): {1e3 * report.policy_mean:.2f} (sd {1e3 * report.policy_sd:.2f}); "
            f"optimal {1e3 * report.optimal_value:.2f}\n"
        )
    return text


# --------------------------------------------------------------------------
# raw streams

STREAM_COLUMNS = ["subject_id", "minute", "kind", "value"]


def write_streams(records, path) -> None:
    """``records`` is an iterable of ``(subject_id, minute, kind, value)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STREAM_COLUMNS)
        for sid, minute, kind, value in records:
            w.writerow([sid, fmt(minute), kind, fmt(value)])


def read_streams(path) -> list[tuple]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"stream file {path} does not exist")
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in STREAM_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            minute = _cell(row, "minute", lineno, True)
            value = _cell(row, "value", lineno, True)
            kind = (row["kind"] or "").strip()
            if not kind:
                raise DataError(f"line {lineno}: empty kind")
            out.append((row["subject_id"].strip(), minute, kind, value))
    return out
