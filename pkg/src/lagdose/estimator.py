"""Scikit-learn style front end tying the estimation pipeline together."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .kernel import estimate_conditional_means
from .panel import build_summaries, combine_weighted
from .policy import DoseRegime, estimated_advantage_report, suggest_doses
from .snmm import assemble_design, confidence_intervals, fit_lag, fit_weighted_direct
from .validation import (
    check_bandwidth,
    check_dose_bounds,
    check_features,
    check_panel,
    check_summary,
    check_weights,
)

__all__ = ["KernelSNMM"]


class KernelSNMM(BaseEstimator):
    """Lag-k dose effects and the weighted-advantage dose rule.

    Parameters
    ----------
    summary : SummarySpec or sequence of terms, optional
        How ``S_t`` is built from the history. Defaults to every current
        covariate.
    features : FeatureMap, optional
        ``f(S_t)``; defaults to an intercept plus every summary entry.
    lags : int, default=1
        Largest lag ``K``; effects are fitted for ``k = 1..K``.
    weights : sequence of float, optional
        Lag weights for the advantage; uniform by default.
    bandwidth : BandwidthRule or dict, optional
    level : float, default=0.95
        Confidence level of the Wald intervals.
    t_range : {"maximal", "common"}, default="maximal"
        ``"maximal"`` fits lag ``k`` on every ``t <= T - k + 1``;
        ``"common"`` restricts all lags to ``t <= T - K + 1``.
    dose_bounds : None, "observed_max" or (lo, hi)
        Feasible doses for :meth:`predict`.
    leave_one_out : bool, default=False
        Drop each observation from its own kernel estimate.

    Attributes
    ----------
    lag_fits_ : dict of int to LagFit
    weighted_fit_ : LagFit
        Direct fit of the weighted advantage.
    weighted_params_ : WeightedParams
    regime_ : DoseRegime
    means_ : ConditionalMeans
    """

    def __init__(
        self,
        summary=None,
        features=None,
        lags=1,
        weights=None,
        bandwidth=None,
        level=0.95,
        t_range="maximal",
        dose_bounds=None,
        leave_one_out=False,
    ):
        self.summary = summary
        self.features = features
        self.lags = lags
        self.weights = weights
        self.bandwidth = bandwidth
        self.level = level
        self.t_range = t_range
        self.dose_bounds = dose_bounds
        self.leave_one_out = leave_one_out

    def fit(self, panel, y=None):
        panel = check_panel(panel)
        K = int(self.lags)
        if K < 1:
            raise DataError("lags must be >= 1")
        if self.t_range not in ("maximal", "common"):
            raise DataError(f"unknown t_range policy {self.t_range!r}")
        spec = check_summary(self.summary, panel)
        fmap = check_features(self.features)
        w = check_weights(self.weights, K)
        rule = check_bandwidth(self.bandwidth)

        summaries = build_summaries(panel, spec)
        means = estimate_conditional_means(
            panel, summaries, range(1, K + 1), rule, leave_one_out=self.leave_one_out
        )
        first = int(summaries.t_values[0])
        fits = {}
        for k in range(1, K + 1):
            t_range = (first, panel.T - K + 1) if self.t_range == "common" else None
            fits[k] = fit_lag(assemble_design(panel, summaries, fmap, means, k, t_range))

        self.summary_spec_ = spec
        self.feature_map_ = fmap
        self.weights_ = w
        self.bandwidth_rule_ = rule
        self.summaries_ = summaries
        self.means_ = means
        self.lag_fits_ = fits
        self.weighted_fit_ = fit_weighted_direct(panel, summaries, fmap, means, w)
        self.weighted_params_ = self.weighted_fit_.weighted_params
        self.dose_bounds_ = check_dose_bounds(self.dose_bounds, panel)
        self.regime_ = DoseRegime(self.weighted_params_, fmap, spec, self.dose_bounds_)
        self.param_names_ = self.weighted_fit_.param_names
        return self

    def combined_params(self):
        """Weighted sum of the per-lag fits (each on its own window)."""
        check_is_fitted(self, "lag_fits_")
        return combine_weighted([self.lag_fits_[k].params for k in sorted(self.lag_fits_)], self.weights_)

    def confidence_intervals(self):
        """Dict mapping each lag (and ``"weighted"``) to its (q+1, 2) interval array."""
        check_is_fitted(self, "lag_fits_")
        out = {k: confidence_intervals(fit, self.level) for k, fit in self.lag_fits_.items()}
        out["weighted"] = confidence_intervals(self.weighted_fit_, self.level)
        return out

    def predict(self, panel) -> np.ndarray:
        """Suggested dose for every (subject, t); NaN where ``S_t`` is undefined.

        Returns an array shaped like ``panel.A``.
        """
        check_is_fitted(self, "regime_")
        panel = check_panel(panel)
        F, t = self.regime_.features(panel)
        out = np.full(panel.A.shape, np.nan)
        out[:, t - 1] = suggest_doses(self.regime_, F)
        return out

    def advantage_report(self, panel):
        check_is_fitted(self, "regime_")
        return estimated_advantage_report(self.regime_, check_panel(panel))

    def score(self, panel, y=None) -> float:
        """Mean estimated weighted advantage of the suggested doses on ``panel``."""
        return self.advantage_report(panel).suggested
