"""Raw diabetes-monitoring streams and their binning into a dose panel.

Streams are ``(subject_id, minute, kind, value)`` records where each subject
is one day and ``minute`` counts from the start of that day. Recognised kinds:

``glucose``     CGM reading (mg/dL)
``carbs``       carbohydrate intake event (g)
``bolus``       bolus insulin event (U); this is the dose
``basal``       basal rate reading (U/h)
``heart_rate``  heart-rate reading (bpm)

Binning labels the interval ``[(t-1) w, t w)`` as ``t``. For each bin the
covariates are the carbohydrate total, the mean glucose, the mean heart rate
and the mean basal rate; the dose ``A_t`` is the bolus total in bin ``t`` and
the outcome ``Y_t`` the mean IGC of the readings in bin ``t``. With ``B``
bins per day this gives ``X_1..X_B``, ``A_1..A_{B-1}`` and ``Y_2..Y_B``, so
``T = B - 1``.

Rate streams (basal, heart rate) are step functions: a bin without readings
takes the last earlier reading, or the first later one at the start of a day.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .panel import (
    CurrentCovariate,
    FeatureMap,
    LaggedDose,
    LeadCovariate,
    RollingMeanCovariate,
    SummarySpec,
    TrajectoryPanel,
    compute_igc,
)

__all__ = [
    "STREAM_KINDS",
    "COVARIATES",
    "StreamSimulator",
    "simulate_streams",
    "bin_streams",
    "glucose_summary",
    "glucose_features",
]

STREAM_KINDS = ("glucose", "carbs", "bolus", "basal", "heart_rate")
COVARIATES = ("carb", "glucose", "heart_rate", "basal")
RATE_KINDS = ("basal", "heart_rate")


def glucose_summary() -> SummarySpec:
    """Seven-dimensional summary: current covariates, planned carbs, 4-8 h basal mean, last dose."""
    return SummarySpec(
        (
            CurrentCovariate("carb"),
            LeadCovariate("carb", 1, allow_lookahead=True),
            CurrentCovariate("glucose"),
            CurrentCovariate("heart_rate"),
            CurrentCovariate("basal"),
            RollingMeanCovariate("basal", 8, 15),
            LaggedDose(1),
        )
    )


def glucose_features() -> FeatureMap:
    """Intercept plus carbs, planned carbs, the 4-8 h basal mean and the last dose."""
    spec = glucose_summary()
    return FeatureMap(True, (spec.names[0], spec.names[1], spec.names[5], spec.names[6]))


@dataclass(frozen=True)
class StreamSimulator:
    """Toy type-1 diabetes day generator at 5-minute resolution.

    Glucose mean-reverts towards ``target``, rises with absorbed carbs, falls
    with active bolus insulin and with the basal rate of 4 to 8 hours
    earlier. Boluses follow a noisy carb ratio plus a correction term.
    """

    step_minutes: int = 5
    day_minutes: int = 1440
    target: float = 150.0
    reversion: float = 0.01
    carb_gain: float = 3.0  # mg/dL per g, spread over absorption
    insulin_gain: float = 30.0  # mg/dL per U, spread over action
    basal_gain: float = 0.6  # mg/dL per step per U/h above nominal
    nominal_basal: float = 0.9
    carb_ratio: float = 10.0
    noise: float = 1.5

    def _kernel(self, minutes: float, peak: float) -> np.ndarray:
        s = np.arange(int(minutes // self.step_minutes)) * self.step_minutes + self.step_minutes / 2
        k = s * np.exp(-s / peak)
        return k / k.sum()

    def generate(self, days: int, rng: np.random.Generator) -> list[tuple]:
        steps = self.day_minutes // self.step_minutes
        minutes = np.arange(steps) * self.step_minutes
        carb_k = self._kernel(180, 30)
        ins_k = self._kernel(300, 60)

        meals = np.zeros((days, steps))
        planned = np.zeros((days, steps))
        slots = [(420, 30, 45, 15, 1.0), (750, 45, 60, 20, 1.0), (1140, 45, 70, 20, 1.0), (930, 60, 15, 5, 0.4)]
        for centre, spread, mean, sd, prob in slots:
            when = np.clip(rng.normal(centre, spread, days), 0, self.day_minutes - 1)
            idx = (when // self.step_minutes).astype(int)
            grams = np.maximum(5.0, rng.normal(mean, sd, days)).round()
            eaten = rng.random(days) < prob
            meals[np.arange(days)[eaten], idx[eaten]] += grams[eaten]
            # the bolus for a meal is taken up to 20 minutes ahead of it
            early = np.maximum(0, idx - rng.integers(0, 5, days))
            planned[np.arange(days)[eaten], early[eaten]] += grams[eaten]

        # basal: a daily profile scaled per day, with the previous evening equal to today's
        profile = 0.9 + 0.2 * np.sin(2 * np.pi * (minutes - 240) / self.day_minutes)
        scale = rng.uniform(0.75, 1.25, days)
        basal = np.round(profile[None, :] * scale[:, None], 2)
        lag_lo, lag_hi = 240 // self.step_minutes, 480 // self.step_minutes
        ext = np.concatenate([basal, basal], axis=1)
        csum = np.concatenate([np.zeros((days, 1)), np.cumsum(ext, axis=1)], axis=1)
        idx = np.arange(steps) + steps
        basal_4_8 = (csum[:, idx - lag_lo] - csum[:, idx - lag_hi]) / (lag_hi - lag_lo)

        exercise = np.zeros((days, steps))
        start = rng.integers(0, steps - 12, days)
        active = rng.random(days) < 0.3
        for d in np.flatnonzero(active):
            exercise[d, start[d]:start[d] + 12] = 1.0
        heart = 68 + 40 * exercise + rng.normal(0, 4, (days, steps))

        g = np.empty((days, steps))
        bolus = np.zeros((days, steps))
        carb_in = np.zeros((days, steps + len(carb_k)))
        ins_in = np.zeros((days, steps + len(ins_k)))
        ratio = self.carb_ratio * np.exp(rng.normal(0, 0.25, days))
        cur = rng.normal(140, 25, days)
        for s in range(steps):
            meal = meals[:, s]
            eat = planned[:, s] > 0
            correction = rng.random(days) < 0.04
            dose = np.where(eat, planned[:, s] / ratio + np.maximum(0, cur - 140) / 60, 0.0)
            dose = np.where(~eat & correction & (cur > 200), (cur - 140) / 60, dose)
            dose = np.where(dose > 0, np.maximum(0, dose * np.exp(rng.normal(0, 0.2, days))), 0.0)
            bolus[:, s] = np.round(dose, 1)
            carb_in[:, s:s + len(carb_k)] += meal[:, None] * carb_k[None, :]
            ins_in[:, s:s + len(ins_k)] += bolus[:, s][:, None] * ins_k[None, :]
            cur = (
                cur
                + self.reversion * (self.target - cur)
                + self.carb_gain * carb_in[:, s]
                - self.insulin_gain * ins_in[:, s]
                - self.basal_gain * (basal_4_8[:, s] - self.nominal_basal)
                - 0.4 * exercise[:, s]
                + rng.normal(0, self.noise, days)
            )
            cur = np.clip(cur, 40, 400)
            g[:, s] = cur

        records = []
        for d in range(days):
            sid = f"day{d + 1:03d}"
            for s in range(steps):
                m = int(minutes[s])
                records.append((sid, m, "glucose", round(float(g[d, s]), 1)))
                records.append((sid, m, "basal", float(basal[d, s])))
                records.append((sid, m, "heart_rate", round(float(heart[d, s]), 1)))
                if meals[d, s] > 0:
                    records.append((sid, m, "carbs", float(meals[d, s])))
                if bolus[d, s] > 0:
                    records.append((sid, m, "bolus", float(bolus[d, s])))
        return records


def simulate_streams(days: int = 54, seed: int = 0, simulator: StreamSimulator | None = None) -> list[tuple]:
    """Synthetic raw streams for ``days`` independent days."""
    if days < 1:
        raise DataError("need at least one day")
    return (simulator or StreamSimulator()).generate(days, np.random.default_rng(seed))


def _fill_rate(values: list, sid: str, kind: str) -> list:
    known = [v for v in values if v is not None]
    if not known:
        raise DataError(f"subject {sid!r}: no {kind} readings")
    last = known[0]
    out = []
    for v in values:
        last = v if v is not None else last
        out.append(last)
    return out


def bin_streams(records, bin_minutes: int = 30, bins_per_day: int = 48) -> TrajectoryPanel:
    """Aggregate raw stream records into a panel with ``T = bins_per_day - 1``."""
    if bin_minutes <= 0 or bins_per_day < 2:
        raise DataError("need bin_minutes > 0 and bins_per_day >= 2")
    span = bin_minutes * bins_per_day
    data = defaultdict(lambda: {k: defaultdict(list) for k in STREAM_KINDS})
    for sid, minute, kind, value in records:
        if kind not in STREAM_KINDS:
            raise DataError(f"subject {sid!r}: unknown stream kind {kind!r}; expected one of {STREAM_KINDS}")
        if not 0 <= minute < span:
            raise DataError(f"subject {sid!r}: minute {minute} outside [0, {span})")
        data[sid][kind][int(minute // bin_minutes) + 1].append(float(value))
    if not data:
        raise DataError("no stream records")

    bins = range(1, bins_per_day + 1)
    n, T = len(data), bins_per_day - 1
    X = np.empty((n, T + 1, len(COVARIATES)))
    A = np.empty((n, T))
    Y = np.empty((n, T))
    for i, (sid, streams) in enumerate(data.items()):
        glucose = streams["glucose"]
        missing = [b for b in bins if not glucose.get(b)]
        if missing:
            raise DataError(f"subject {sid!r}: no glucose readings in bin(s) {missing[:5]}")
        rates = {
            kind: _fill_rate([np.mean(streams[kind][b]) if streams[kind].get(b) else None for b in bins], sid, kind)
            for kind in RATE_KINDS
        }
        for j, b in enumerate(bins):
            X[i, j] = (
                sum(streams["carbs"].get(b, [])),
                np.mean(glucose[b]),
                rates["heart_rate"][j],
                rates["basal"][j],
            )
            if b <= T:
                A[i, j] = sum(streams["bolus"].get(b, []))
            if b >= 2:
                Y[i, b - 2] = compute_igc(glucose[b])
    return TrajectoryPanel(X, A, Y, covariate_names=COVARIATES, subject_ids=tuple(data), initial_dose=None)
