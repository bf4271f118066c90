"""Closed-form kernel-centered SNMM estimation with sandwich standard errors.

For lag ``k`` each (subject, t) contributes a centered regressor row

    M_t = (A_t^2 - B(S_t), (A_t - C(S_t)) f(S_t))

and a centered target ``R_t = Y_{t+k} - D_k(S_t)``. The estimate solves
``sum M_t (R_t - M_t' phi) = 0``, i.e. ``phi = (sum M M')^{-1} sum M R``.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy import linalg

from .exceptions import DataError, SingularDesignError
from .kernel import ConditionalMeans
from .panel import (
    FeatureMap,
    LagParams,
    LagWeights,
    SummarySeries,
    TrajectoryPanel,
    WeightedParams,
    apply_features,
)

__all__ = [
    "CenteredDesign",
    "LagFit",
    "assemble_design",
    "fit_lag",
    "fit_weighted_direct",
    "sandwich_covariance",
    "confidence_intervals",
    "parameter_names",
]

MAX_CONDITION = 1e12
_ROUNDING = 64 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class CenteredDesign:
    """``M`` is (n, m, q+1), ``R`` is (n, m); rows indexed by ``t_values``."""

    M: np.ndarray
    R: np.ndarray
    t_values: np.ndarray
    param_names: tuple
    k: int | None = None
    weights: LagWeights | None = None

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def gram(self) -> np.ndarray:
        return np.einsum("imp,imq->pq", self.M, self.M)

    def moment(self) -> np.ndarray:
        return np.einsum("imp,im->p", self.M, self.R)


@dataclass(frozen=True, eq=False)
class LagFit:
    """Point estimate with the sandwich covariance of ``sqrt(n) (phi_hat - phi)``.

    Standard errors are ``sqrt(diag(covariance) / n_subjects)``.
    """

    params: LagParams
    covariance: np.ndarray
    se: np.ndarray
    n_subjects: int
    t_range: tuple
    param_names: tuple
    weights: LagWeights | None = None

    @property
    def k(self):
        return self.params.k

    @property
    def estimate(self) -> np.ndarray:
        return self.params.as_vector()

    @property
    def weighted_params(self) -> WeightedParams:
        return WeightedParams(self.params.alpha, self.params.beta, self.weights or LagWeights((1.0,)))


def parameter_names(fmap: FeatureMap, names) -> tuple:
    return ("alpha",) + tuple(f"beta[{name}]" for name in fmap.feature_names(names))


def _resolve_range(summaries: SummarySeries, last_allowed: int, t_range, what: str) -> tuple[int, int]:
    first = int(summaries.t_values[0])
    if t_range is None:
        t_range = (first, min(last_allowed, int(summaries.t_values[-1])))
    start, stop = int(t_range[0]), int(t_range[1])
    if stop > last_allowed:
        raise DataError(f"t_range ends at {stop} but {what} needs t <= {last_allowed}")
    if start < first or stop > summaries.t_values[-1]:
        raise DataError(
            f"t_range {start}..{stop} leaves the summary window "
            f"{first}..{int(summaries.t_values[-1])}"
        )
    if start > stop:
        raise DataError(f"empty t_range {start}..{stop}")
    return start, stop


def _centre(x, mean):
    # differences at rounding level (x equal to its own smoothed mean) are exact zeros
    out = x - mean
    out[np.abs(out) <= _ROUNDING * np.maximum(np.abs(x), np.abs(mean))] = 0.0
    return out


def _regressors(panel, summaries, fmap, means, cols):
    t = summaries.t_values[cols]
    A = panel.A[:, t - 1]
    F = apply_features(summaries.values[:, cols], fmap, summaries.names)
    centred_sq = _centre(A**2, means.B[:, cols])
    centred = _centre(A, means.C[:, cols])
    return np.concatenate([centred_sq[..., None], centred[..., None] * F], axis=-1)


def _check_means(summaries: SummarySeries, means: ConditionalMeans, lags):
    if not np.array_equal(summaries.t_values, means.t_values):
        raise DataError("conditional means were estimated on a different time window")
    missing = [k for k in lags if k not in means.D]
    if missing:
        raise DataError(f"conditional means do not cover lags {missing}")


def assemble_design(
    panel: TrajectoryPanel,
    summaries: SummarySeries,
    fmap: FeatureMap,
    means: ConditionalMeans,
    k: int,
    t_range=None,
) -> CenteredDesign:
    """Centered rows for lag ``k`` over ``t_range`` (inclusive; default maximal)."""
    _check_means(summaries, means, [k])
    start, stop = _resolve_range(summaries, panel.T - k + 1, t_range, f"lag {k}")
    first = int(summaries.t_values[0])
    cols = slice(start - first, stop - first + 1)
    M = _regressors(panel, summaries, fmap, means, cols)
    t = summaries.t_values[cols]
    R = panel.Y[:, t + k - 2] - means.D[k][:, cols]
    return CenteredDesign(M, R, t.copy(), parameter_names(fmap, summaries.names), k=k)


def _solve(design: CenteredDesign) -> np.ndarray:
    G = design.gram()
    b = design.moment()
    scale = np.sqrt(np.diag(G))
    if np.any(~(scale > 0)):
        j = int(np.flatnonzero(~(scale > 0))[0])
        raise SingularDesignError(
            f"centered design column {design.param_names[j]!r} is identically zero "
            "(no residual dose variation left after centering)"
        )
    Gs = G / np.outer(scale, scale)
    cond = np.linalg.cond(Gs)
    if not cond <= MAX_CONDITION:
        _, vecs = np.linalg.eigh(Gs)
        j = int(np.argmax(np.abs(vecs[:, 0])))
        raise SingularDesignError(
            f"centered Gram matrix is ill-conditioned (condition number {cond:.3g}); "
            f"feature {design.param_names[j]!r} is (nearly) collinear with the others"
        )
    return linalg.solve(Gs, b / scale, assume_a="pos") / scale


def sandwich_covariance(design: CenteredDesign, params) -> np.ndarray:
    """Plug-in sandwich ``P^{-1} Sigma P^{-1}`` for ``sqrt(n) (phi_hat - phi)``.

    ``P`` averages the per-subject Gram matrices ``L1_i`` and ``Sigma`` is the
    sample covariance (``1/(n-1)``) over subjects of ``L1_i phi - L2_i``.
    """
    n = design.n
    if n < 2:
        raise DataError("the sandwich covariance needs at least 2 subjects")
    phi = params.as_vector() if hasattr(params, "as_vector") else np.asarray(params, dtype=float)
    L1 = np.einsum("imp,imq->ipq", design.M, design.M)
    L2 = np.einsum("imp,im->ip", design.M, design.R)
    psi = L1 @ phi - L2
    sigma = np.atleast_2d(np.cov(psi, rowvar=False, ddof=1))
    bread = np.linalg.inv(L1.mean(axis=0))
    cov = bread @ sigma @ bread
    return (cov + cov.T) / 2


def fit_lag(design: CenteredDesign) -> LagFit:
    """Solve the estimating equation in closed form and attach sandwich SEs."""
    phi = _solve(design)
    params = LagParams.from_vector(phi, k=design.k)
    cov = sandwich_covariance(design, params)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None) / design.n)
    t = design.t_values
    return LagFit(
        params, cov, se, design.n, (int(t[0]), int(t[-1])), design.param_names, design.weights
    )


def weighted_design(
    panel: TrajectoryPanel,
    summaries: SummarySeries,
    fmap: FeatureMap,
    means: ConditionalMeans,
    w: LagWeights,
    t_range=None,
) -> CenteredDesign:
    lags = list(range(1, w.K + 1))
    _check_means(summaries, means, lags)
    start, stop = _resolve_range(summaries, panel.T - w.K + 1, t_range, f"lag {w.K}")
    first = int(summaries.t_values[0])
    cols = slice(start - first, stop - first + 1)
    M = _regressors(panel, summaries, fmap, means, cols)
    t = summaries.t_values[cols]
    R = np.zeros(M.shape[:2])
    for wk, k in zip(w.w, lags):
        R += wk * (panel.Y[:, t + k - 2] - means.D[k][:, cols])
    return CenteredDesign(M, R, t.copy(), parameter_names(fmap, summaries.names), weights=w)


def fit_weighted_direct(
    panel: TrajectoryPanel,
    summaries: SummarySeries,
    fmap: FeatureMap,
    means: ConditionalMeans,
    w: LagWeights,
    t_range=None,
) -> LagFit:
    """Fit the weighted advantage directly, using ``sum_k w_k (Y_{t+k} - D_k)`` as target.

    The default window ends at ``T - K + 1`` so every lag's outcome exists.
    """
    return fit_lag(weighted_design(panel, summaries, fmap, means, w, t_range))


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def confidence_intervals(fit: LagFit, level: float = 0.95) -> np.ndarray:
    """Wald intervals ``estimate -/+ z se``; returns an array of shape (q+1, 2)."""
    if not 0 < level < 1:
        raise DataError(f"confidence level must lie in (0, 1), got {level}")
    z = normal_quantile((1 + level) / 2)
    est = fit.estimate
    return np.column_stack([est - z * fit.se, est + z * fit.se])
