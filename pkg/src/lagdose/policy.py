"""Dose suggestions from a fitted weighted advantage and their evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, NoFiniteMaximizerError
from .panel import (
    FeatureMap,
    SummarySpec,
    TrajectoryPanel,
    advantage,
    apply_features,
    build_summaries,
)

__all__ = [
    "DoseRegime",
    "AdvantageReport",
    "suggest_dose",
    "suggest_doses",
    "evaluate_regime",
    "estimated_advantage_report",
    "dose_shift_report",
]


@dataclass(frozen=True, eq=False)
class DoseRegime:
    """Deterministic rule maximizing ``alpha a^2 + (beta . f(S_t)) a`` over ``dose_bounds``."""

    params: object
    fmap: FeatureMap
    spec: SummarySpec
    dose_bounds: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        lo, hi = (float(b) for b in self.dose_bounds)
        if np.isnan(lo) or np.isnan(hi) or lo > hi:
            raise DataError(f"invalid dose bounds {self.dose_bounds}")
        object.__setattr__(self, "dose_bounds", (lo, hi))

    def features(self, panel: TrajectoryPanel):
        """Features ``f(S_t)`` on ``panel`` and their time indices."""
        summaries = build_summaries(panel, self.spec)
        return apply_features(summaries.values, self.fmap, summaries.names), summaries.t_values


def suggest_doses(regime: DoseRegime, F) -> np.ndarray:
    """Vectorised :func:`suggest_dose` over feature arrays of shape (..., q)."""
    F = np.asarray(F, dtype=float)
    lo, hi = regime.dose_bounds
    alpha = regime.params.alpha
    slope = F @ np.asarray(regime.params.beta, dtype=float)
    if alpha < 0:
        return np.clip(-slope / (2 * alpha), lo, hi)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NoFiniteMaximizerError(
            f"no finite maximizer: the advantage is not concave (alpha={alpha:.6g}) "
            "and the dose interval is unbounded"
        )
    gain_hi = alpha * hi**2 + slope * hi
    gain_lo = alpha * lo**2 + slope * lo
    return np.where(gain_hi > gain_lo, hi, lo)


def suggest_dose(regime: DoseRegime, s) -> float:
    """Best dose for the summary vector ``s``.

    A concave advantage is maximized at its vertex, clipped into the bounds;
    otherwise the better endpoint wins, ties going to the lower dose.
    """
    f = apply_features(np.atleast_1d(s), regime.fmap, regime.spec.names)
    return float(suggest_doses(regime, f))


def _mean_over_t_then_subjects(values: np.ndarray) -> float:
    return float(values.mean(axis=1).mean())


def evaluate_regime(
    regime: DoseRegime,
    eval_panel: TrajectoryPanel,
    truth,
    truth_spec: SummarySpec | None = None,
    truth_fmap: FeatureMap | None = None,
    t_max: int | None = None,
) -> float:
    """Average true weighted advantage of the regime's doses on ``eval_panel``.

    ``truth`` is evaluated on its own features (defaults: the regime's);
    time points are those where both summaries exist, capped at ``t_max``.
    """
    F_r, t_r = regime.features(eval_panel)
    truth_regime = DoseRegime(truth, truth_fmap or regime.fmap, truth_spec or regime.spec)
    F_t, t_t = truth_regime.features(eval_panel)
    start = max(t_r[0], t_t[0])
    stop = min(t_r[-1], t_t[-1], t_max if t_max is not None else eval_panel.T)
    if start > stop:
        raise DataError("regime and truth summaries share no time points")
    doses = suggest_doses(regime, F_r[:, start - t_r[0] : stop - t_r[0] + 1])
    gain = advantage(truth, doses, F_t[:, start - t_t[0] : stop - t_t[0] + 1])
    return _mean_over_t_then_subjects(np.asarray(gain))


@dataclass(frozen=True)
class AdvantageReport:
    suggested: float
    observed: float
    n_subjects: int
    t_range: tuple


def estimated_advantage_report(
    regime: DoseRegime, eval_panel: TrajectoryPanel, t_max: int | None = None
) -> AdvantageReport:
    """Mean advantage under the regime's own parameters, for suggested and observed doses."""
    F, t = regime.features(eval_panel)
    stop = min(int(t[-1]), t_max if t_max is not None else eval_panel.T)
    F = F[:, : stop - t[0] + 1]
    t = t[: stop - t[0] + 1]
    if t.size == 0:
        raise DataError("no time points to evaluate")
    suggested = advantage(regime.params, suggest_doses(regime, F), F)
    observed = advantage(regime.params, eval_panel.A[:, t - 1], F)
    return AdvantageReport(
        _mean_over_t_then_subjects(np.asarray(suggested)),
        _mean_over_t_then_subjects(np.asarray(observed)),
        eval_panel.n,
        (int(t[0]), int(t[-1])),
    )


def dose_shift_report(params, feature_names) -> dict:
    """Change of the unconstrained optimal dose per unit of each feature, ``-beta_j / (2 alpha)``."""
    if not params.alpha < 0:
        raise NoFiniteMaximizerError("dose shifts are only defined for a concave advantage")
    beta = np.asarray(params.beta, dtype=float)
    return {name: float(-b / (2 * params.alpha)) for name, b in zip(feature_names, beta)}
