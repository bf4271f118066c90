"""Gaussian Nadaraya-Watson smoothing of doses and outcomes given ``S_t``.

The centering terms of the estimating equations are the conditional means
``B_t(s) = E(A_t^2 | S_t = s)``, ``C_t(s) = E(A_t | S_t = s)`` and
``D_{t,k}(s) = E(Y_{t+k} | S_t = s)``. They are estimated either separately
at every time index (smoothing across subjects) or pooled over all
(subject, time) pairs when those conditional laws are time-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DataError, KernelUnderflowError
from .panel import SummarySeries, TrajectoryPanel

__all__ = [
    "BandwidthRule",
    "ConditionalMeans",
    "gaussian_kernel",
    "nw_estimate",
    "estimate_conditional_means",
    "NadarayaWatsonRegressor",
]

# rows of the query block are chosen so a block holds ~4M pairwise terms
_BLOCK_TERMS = 4_000_000


@dataclass(frozen=True)
class BandwidthRule:
    """``lambda_j = c * n**(-gamma) * sd(S_j)`` with ``n`` the subject count.

    ``mode`` is ``"per_time"`` (smooth over subjects at each ``t``, sd taken
    per ``t``) or ``"pooled"`` (smooth over every (subject, t) pair, sd taken
    over all of them).
    """

    c: float = 0.305
    gamma: float = 1 / 3
    mode: str = "per_time"

    def __post_init__(self):
        if not self.c > 0 or not self.gamma > 0:
            raise DataError("bandwidth constants c and gamma must be positive")
        if self.mode not in ("per_time", "pooled"):
            raise DataError(f"unknown bandwidth mode {self.mode!r}")

    def bandwidths(self, points: np.ndarray, n_subjects: int) -> np.ndarray:
        """Per-dimension bandwidths for ``points`` of shape (N, d).

        A dimension with zero spread gets an infinite bandwidth: every point
        shares its value, so it cannot discriminate and drops out of the kernel.
        """
        if points.shape[0] < 2:
            raise DataError("bandwidth rule needs at least two points")
        sd = np.atleast_1d(points.std(axis=0, ddof=1))
        lam = self.c * n_subjects ** (-self.gamma) * sd
        lam[sd == 0] = np.inf
        return lam


@dataclass(frozen=True, eq=False)
class ConditionalMeans:
    """Kernel estimates at the sample points.

    ``B``, ``C`` have shape (n, m) over ``t_values``; ``D[k]`` has shape
    (n, m_k) over the leading ``t_values`` with ``t <= T - k + 1``.
    ``bandwidths`` is (m, d) in per-time mode and (d,) when pooled.
    """

    B: np.ndarray
    C: np.ndarray
    D: dict
    t_values: np.ndarray
    bandwidths: np.ndarray
    mode: str

    def t_values_for(self, k: int) -> np.ndarray:
        return self.t_values[: self.D[k].shape[1]]


def gaussian_kernel(u, Lambda) -> float:
    """Multivariate normal density with covariance ``Lambda`` evaluated at ``u``.

    ``Lambda`` may be a diagonal matrix or the vector of its diagonal
    (squared bandwidths).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lam2 = np.asarray(Lambda, dtype=float)
    if lam2.ndim == 2:
        if np.any(lam2 - np.diag(np.diag(lam2))):
            raise DataError("only diagonal bandwidth matrices are supported")
        lam2 = np.diag(lam2)
    lam2 = np.atleast_1d(lam2)
    if np.any(~(lam2 > 0)):
        raise DataError("bandwidth entries must be positive")
    if lam2.shape != u.shape[-1:]:
        raise DataError("dimension mismatch between u and Lambda")
    d = lam2.size
    quad = np.sum(u**2 / lam2, axis=-1)
    return (2 * np.pi) ** (-d / 2) * np.prod(lam2) ** -0.5 * np.exp(-quad / 2)


def _weights(query: np.ndarray, points: np.ndarray, lam: np.ndarray) -> np.ndarray:
    # normalizing constants cancel in the ratio and are left out
    z = (query[:, None, :] - points[None, :, :]) / lam
    return np.exp(-0.5 * np.einsum("mnd,mnd->mn", z, z))


def _average(W: np.ndarray, targets: np.ndarray) -> np.ndarray:
    # row-major layout fixes the summation order of every row reduction
    W = np.ascontiguousarray(W)
    denom = W.sum(axis=1)
    if np.any(denom == 0):
        raise KernelUnderflowError(
            "all kernel weights vanished at a query point; the bandwidth is too small "
            "for its distance to the data"
        )
    # an elementwise reduction instead of BLAS, whose rounding depends on memory
    # alignment and on which other columns are averaged alongside
    out = np.empty((W.shape[0], targets.shape[1]))
    for c in range(targets.shape[1]):
        out[:, c] = np.multiply(W, targets[:, c]).sum(axis=1)
    out /= denom[:, None]
    # a weighted mean of identical values is that value, not a rounding of it
    const = np.all(targets == targets[:1], axis=0)
    out[:, const] = targets[0, const]
    return out


def nw_estimate(targets, points, query, Lambda) -> float:
    """Kernel-weighted average of ``targets`` at ``query``."""
    targets = np.asarray(targets, dtype=float).ravel()
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    query = np.atleast_1d(np.asarray(query, dtype=float))
    if targets.size < 1 or points.shape[0] != targets.size:
        raise DataError("need one point per target and at least one target")
    lam2 = np.asarray(Lambda, dtype=float)
    lam2 = np.atleast_1d(np.diag(lam2) if lam2.ndim == 2 else lam2)
    if np.any(~(lam2 > 0)):
        raise DataError("bandwidth entries must be positive")
    if points.shape[1] != query.size or lam2.size != query.size:
        raise DataError("dimension mismatch between points, query and Lambda")
    W = _weights(query[None, :], points, np.sqrt(lam2))
    return float(_average(W, targets[:, None])[0, 0])


def _lag_rows(t_values: np.ndarray, T: int, k: int) -> int:
    m_k = int(np.sum(t_values <= T - k + 1))
    if m_k == 0:
        raise DataError(f"no time points leave room for outcome lag k={k} (T={T})")
    return m_k


def estimate_conditional_means(
    panel: TrajectoryPanel,
    summaries: SummarySeries,
    lags,
    rule: BandwidthRule,
    leave_one_out: bool = False,
) -> ConditionalMeans:
    """Estimate ``B``, ``C`` and ``D_k`` (for every ``k`` in ``lags``) at each sample point.

    Each observation is part of its own fitted value unless ``leave_one_out``.
    """
    S = summaries.values
    t_values = summaries.t_values
    n, m, d = S.shape
    lags = sorted({int(k) for k in lags})
    if not lags or lags[0] < 1:
        raise DataError("lags must be positive integers")
    A = panel.A[:, t_values - 1]
    m_k = {k: _lag_rows(t_values, panel.T, k) for k in lags}
    Yk = {k: panel.Y[:, t_values[: m_k[k]] + k - 2] for k in lags}
    B = np.empty((n, m))
    C = np.empty((n, m))
    D = {k: np.empty((n, m_k[k])) for k in lags}

    if rule.mode == "per_time":
        if n < 2:
            raise DataError("per-time smoothing needs at least 2 subjects")
        bw = np.empty((m, d))
        for j in range(m):
            P = S[:, j]
            lam = rule.bandwidths(P, n)
            bw[j] = lam
            W = _weights(P, P, lam)
            if leave_one_out:
                np.fill_diagonal(W, 0.0)
            BC = _average(W, np.column_stack([A[:, j] ** 2, A[:, j]]))
            B[:, j], C[:, j] = BC[:, 0], BC[:, 1]
            for k in lags:
                if j < m_k[k]:
                    D[k][:, j] = _average(W, Yk[k][:, j][:, None])[:, 0]
    else:
        N = n * m
        if N < 2:
            raise DataError("pooled smoothing needs at least 2 observations")
        P = S.reshape(N, d)
        bw = rule.bandwidths(P, n)
        col = np.tile(np.arange(m), n)
        a_flat = A.reshape(N)
        bc_targets = np.column_stack([a_flat**2, a_flat])
        masks = {k: col < m_k[k] for k in lags}
        y_flat = {}
        for k in lags:
            full = np.zeros((n, m))
            full[:, : m_k[k]] = Yk[k]
            y_flat[k] = full.reshape(N)[masks[k]][:, None]
        BC = np.empty((N, 2))
        Dflat = {k: np.empty(N) for k in lags}
        block = max(1, _BLOCK_TERMS // max(1, N * d))
        for start in range(0, N, block):
            stop = min(N, start + block)
            W = _weights(P[start:stop], P, bw)
            if leave_one_out:
                W[np.arange(stop - start), np.arange(start, stop)] = 0.0
            BC[start:stop] = _average(W, bc_targets)
            for k in lags:
                rows = masks[k][start:stop]
                if rows.any():
                    Dflat[k][start:stop][rows] = _average(W[rows][:, masks[k]], y_flat[k])[:, 0]
        B = BC[:, 0].reshape(n, m)
        C = BC[:, 1].reshape(n, m)
        D = {k: Dflat[k].reshape(n, m)[:, : m_k[k]] for k in lags}

    for arr in (B, C, *D.values()):
        arr.setflags(write=False)
    return ConditionalMeans(B, C, D, t_values, bw, rule.mode)


class NadarayaWatsonRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-kernel regression with bandwidth ``c * n**(-gamma) * sd(X_j)``.

    Parameters
    ----------
    c : float, default=0.305
    gamma : float, default=1/3
    bandwidth : array-like of shape (n_features,), optional
        Explicit per-feature bandwidths; overrides the ``c, gamma`` rule.
    """

    def __init__(self, c=0.305, gamma=1 / 3, bandwidth=None):
        self.c = c
        self.gamma = gamma
        self.bandwidth = bandwidth

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.bandwidth is not None:
            lam = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (X.shape[1],)).copy()
            if np.any(~(lam > 0)):
                raise DataError("bandwidth entries must be positive")
        else:
            if X.shape[0] < 2:
                raise DataError("need at least two samples to set the bandwidth")
            lam = BandwidthRule(self.c, self.gamma).bandwidths(X, X.shape[0])
        self.X_fit_ = X
        self.y_fit_ = y.astype(float)
        self.bandwidth_ = lam
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "bandwidth_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.empty(X.shape[0])
        block = max(1, _BLOCK_TERMS // max(1, self.X_fit_.size))
        for start in range(0, X.shape[0], block):
            W = _weights(X[start : start + block], self.X_fit_, self.bandwidth_)
            out[start : start + block] = _average(W, self.y_fit_[:, None])[:, 0]
        return out
