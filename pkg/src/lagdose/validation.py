"""Input coercion shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError
from .kernel import BandwidthRule
from .panel import CurrentCovariate, FeatureMap, LagWeights, SummarySpec, TrajectoryPanel


def check_panel(panel) -> TrajectoryPanel:
    """Accept a panel or an ``(X, A, Y)`` triple of arrays."""
    if isinstance(panel, TrajectoryPanel):
        return panel
    if isinstance(panel, (tuple, list)) and len(panel) == 3:
        return TrajectoryPanel(*panel)
    raise DataError(f"expected a TrajectoryPanel or an (X, A, Y) triple, got {type(panel).__name__}")


def check_weights(weights, K: int) -> LagWeights:
    if weights is None:
        return LagWeights.uniform(K)
    w = weights if isinstance(weights, LagWeights) else LagWeights(tuple(np.ravel(weights)))
    if w.K != K:
        raise DataError(f"{w.K} weights given for K={K} lags")
    return w


def check_summary(summary, panel: TrajectoryPanel) -> SummarySpec:
    if summary is None:
        return SummarySpec(tuple(CurrentCovariate(c) for c in panel.covariate_names))
    if isinstance(summary, SummarySpec):
        return summary
    return SummarySpec(tuple(summary))


def check_features(features) -> FeatureMap:
    if features is None:
        return FeatureMap()
    if isinstance(features, FeatureMap):
        return features
    raise DataError(f"expected a FeatureMap, got {type(features).__name__}")


def check_bandwidth(bandwidth) -> BandwidthRule:
    if bandwidth is None:
        return BandwidthRule()
    if isinstance(bandwidth, BandwidthRule):
        return bandwidth
    return BandwidthRule(**dict(bandwidth))


def check_dose_bounds(dose_bounds, panel: TrajectoryPanel) -> tuple[float, float]:
    """``None`` is the whole real line; ``"observed_max"`` is ``[0, max observed dose]``."""
    if dose_bounds is None:
        return (-np.inf, np.inf)
    if isinstance(dose_bounds, str):
        if dose_bounds != "observed_max":
            raise DataError(f"unknown dose bound policy {dose_bounds!r}")
        return (0.0, max(0.0, panel.max_dose))
    lo, hi = (float(b) for b in dose_bounds)
    if not lo <= hi:
        raise DataError(f"invalid dose bounds ({lo}, {hi})")
    return (lo, hi)
