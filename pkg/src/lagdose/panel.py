"""Panel data, summary statistics, feature maps and effect-parameter algebra.

Time indices are 1-based throughout, mirroring the usual longitudinal
notation: covariates ``X_t`` exist for ``t = 1..T+1``, doses ``A_t`` for
``t = 1..T`` and outcomes ``Y_t`` for ``t = 2..T+1`` (``Y_t`` follows the
decision ``A_{t-1}``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import DataError

__all__ = [
    "SubjectTrajectory",
    "TrajectoryPanel",
    "CurrentCovariate",
    "LaggedCovariate",
    "LaggedDose",
    "RollingMeanCovariate",
    "LeadCovariate",
    "SummarySpec",
    "SummarySeries",
    "FeatureMap",
    "LagWeights",
    "LagParams",
    "WeightedParams",
    "build_summaries",
    "apply_features",
    "compute_igc",
    "combine_weighted",
    "advantage",
]


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SubjectTrajectory:
    """One subject's record: ``X`` is (T+1, p), ``A`` is (T,), ``Y`` is (T,).

    ``Y[j]`` holds the outcome at time ``j + 2``.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray


@dataclass(frozen=True, eq=False)
class TrajectoryPanel:
    """Aligned trajectories of ``n`` subjects on a common grid.

    Parameters
    ----------
    X : array of shape (n, T+1, p)
        Covariates at ``t = 1..T+1``.
    A : array of shape (n, T)
        Doses at ``t = 1..T``.
    Y : array of shape (n, T)
        Outcomes at ``t = 2..T+1``.
    covariate_names : sequence of str
        Column names of the covariates, length ``p``.
    subject_ids : sequence of str, optional
        Defaults to ``"0", "1", ...``.
    initial_dose : float or None
        Value used for doses dated before ``t = 1`` when a summary asks for
        them. ``None`` (default) means such doses are unavailable and the
        estimation window starts late enough to avoid them.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    covariate_names: tuple = ()
    subject_ids: tuple = ()
    initial_dose: float | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        A = np.asarray(self.A, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3 or A.ndim != 2 or Y.ndim != 2:
            raise DataError("expected X of shape (n, T+1, p), A and Y of shape (n, T)")
        n, T = A.shape
        if T < 1 or n < 1:
            raise DataError("panel needs at least one subject and T >= 1")
        if X.shape[:2] != (n, T + 1):
            raise DataError(f"X has shape {X.shape[:2]}, expected {(n, T + 1)}")
        if Y.shape != (n, T):
            raise DataError(f"Y has shape {Y.shape}, expected {(n, T)}")
        for label, arr in (("X", X), ("A", A), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{label} contains non-finite entries")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(X.shape[2]))
        if len(names) != X.shape[2]:
            raise DataError(f"{len(names)} covariate names for {X.shape[2]} columns")
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names")
        ids = tuple(str(s) for s in self.subject_ids) or tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise DataError(f"{len(ids)} subject ids for {n} subjects")
        if self.initial_dose is not None and not np.isfinite(self.initial_dose):
            raise DataError("initial_dose must be finite")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "subject_ids", ids)

    @classmethod
    def from_subjects(cls, subjects: Sequence[SubjectTrajectory], **kwargs) -> "TrajectoryPanel":
        shapes = {(np.shape(s.X), np.shape(s.A), np.shape(s.Y)) for s in subjects}
        if len(shapes) != 1:
            raise DataError("subjects do not share T and p")
        return cls(
            X=np.stack([s.X for s in subjects]),
            A=np.stack([s.A for s in subjects]),
            Y=np.stack([s.Y for s in subjects]),
            **kwargs,
        )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def T(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    @property
    def subjects(self) -> list[SubjectTrajectory]:
        return [SubjectTrajectory(self.X[i], self.A[i], self.Y[i]) for i in range(self.n)]

    @property
    def max_dose(self) -> float:
        return float(self.A.max())

    def column(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise DataError(
                f"unknown covariate column {name!r}; have {list(self.covariate_names)}"
            ) from None

    def outcome(self, t) -> np.ndarray:
        """Outcomes ``Y_t`` for ``t`` in ``2..T+1`` (scalar or array of t)."""
        t = np.asarray(t)
        if np.any(t < 2) or np.any(t > self.T + 1):
            raise DataError(f"outcome index out of range 2..{self.T + 1}")
        return self.Y[:, t - 2]

    def subset(self, index) -> "TrajectoryPanel":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return TrajectoryPanel(
            self.X[index],
            self.A[index],
            self.Y[index],
            covariate_names=self.covariate_names,
            subject_ids=tuple(self.subject_ids[i] for i in index),
            initial_dose=self.initial_dose,
        )


# --------------------------------------------------------------------------
# summary terms


@dataclass(frozen=True)
class CurrentCovariate:
    column: str

    @property
    def name(self) -> str:
        return self.column

    def lookback(self, panel: TrajectoryPanel) -> int:
        return 0

    lead = 0

    def values(self, panel: TrajectoryPanel, t: np.ndarray) -> np.ndarray:
        return panel.X[:, t - 1, panel.column(self.column)]


@dataclass(frozen=True)
class LaggedCovariate:
    column: str
    lag: int

    def __post_init__(self):
        if self.lag < 0:
            raise DataError("lag must be >= 0")

    @property
    def name(self) -> str:
        return f"{self.column}_lag{self.lag}"

    def lookback(self, panel: TrajectoryPanel) -> int:
        return self.lag

    lead = 0

    def values(self, panel, t):
        return panel.X[:, t - 1 - self.lag, panel.column(self.column)]


@dataclass(frozen=True)
class LaggedDose:
    """The dose ``A_{t-lag}``; doses before ``t = 1`` use ``panel.initial_dose``."""

    lag: int = 1

    def __post_init__(self):
        if self.lag < 1:
            raise DataError("dose lag must be >= 1 (A_t itself is the treatment)")

    @property
    def name(self) -> str:
        return f"dose_lag{self.lag}"

    def lookback(self, panel: TrajectoryPanel) -> int:
        return 0 if panel.initial_dose is not None else self.lag

    lead = 0

    def values(self, panel, t):
        idx = t - self.lag
        out = np.empty((panel.n, len(t)))
        early = idx < 1
        out[:, ~early] = panel.A[:, idx[~early] - 1]
        if early.any():
            out[:, early] = panel.initial_dose
        return out


@dataclass(frozen=True)
class RollingMeanCovariate:
    """Mean of ``X_{t-l}[column]`` over ``l = from_lag..to_lag``."""

    column: str
    from_lag: int
    to_lag: int

    def __post_init__(self):
        if self.from_lag < 0 or self.to_lag < self.from_lag:
            raise DataError("need 0 <= from_lag <= to_lag")

    @property
    def name(self) -> str:
        return f"{self.column}_mean{self.from_lag}_{self.to_lag}"

    def lookback(self, panel):
        return self.to_lag

    lead = 0

    def values(self, panel, t):
        j = panel.column(self.column)
        lags = np.arange(self.from_lag, self.to_lag + 1)
        return panel.X[:, (t - 1)[:, None] - lags[None, :], j].mean(axis=2)


@dataclass(frozen=True)
class LeadCovariate:
    """A covariate read ``lead`` steps ahead, e.g. planned carbohydrates.

    Reading the future breaks the no-lookahead guarantee of summaries, so it
    must be requested explicitly with ``allow_lookahead=True``.
    """

    column: str
    lead: int = 1
    allow_lookahead: bool = False

    def __post_init__(self):
        if not self.allow_lookahead:
            raise DataError(
                f"LeadCovariate({self.column!r}) reads future values; "
                "pass allow_lookahead=True to permit it"
            )
        if self.lead < 1:
            raise DataError("lead must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.column}_lead{self.lead}"

    def lookback(self, panel):
        return 0

    def values(self, panel, t):
        return panel.X[:, t - 1 + self.lead, panel.column(self.column)]


SummaryTerm = Union[CurrentCovariate, LaggedCovariate, LaggedDose, RollingMeanCovariate, LeadCovariate]


@dataclass(frozen=True)
class SummarySpec:
    """Ordered list of terms making up the summary statistic ``S_t``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise DataError("summary spec needs at least one term")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list[str]:
        return [term.name for term in self.terms]

    @property
    def pre_window(self) -> int:
        """Largest look-back over all terms, ignoring any initial-dose option."""
        return max(
            getattr(term, "lag", 0) if not isinstance(term, RollingMeanCovariate) else term.to_lag
            for term in self.terms
        )

    def window(self, panel: TrajectoryPanel) -> tuple[int, int]:
        """First and last ``t`` at which ``S_t`` can be formed on ``panel``."""
        first = 1 + max(term.lookback(panel) for term in self.terms)
        last = panel.T + 1 - max(1, max(term.lead for term in self.terms))
        return first, last


@dataclass(frozen=True, eq=False)
class SummarySeries:
    """``values[i, j]`` is ``S_t`` of subject ``i`` at ``t = t_values[j]``."""

    values: np.ndarray
    t_values: np.ndarray
    names: tuple

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def at(self, t: int) -> np.ndarray:
        j = int(t) - int(self.t_values[0])
        if not 0 <= j < len(self.t_values):
            raise DataError(f"no summaries at t={t}")
        return self.values[:, j]


def build_summaries(panel: TrajectoryPanel, spec: SummarySpec) -> SummarySeries:
    """Evaluate ``spec`` for every subject at every admissible ``t``."""
    first, last = spec.window(panel)
    if first > last:
        raise DataError(
            f"summary spec looks back {first - 1} steps but the panel has T={panel.T}; "
            "no valid time points remain"
        )
    t = np.arange(first, last + 1)
    values = np.stack([term.values(panel, t) for term in spec.terms], axis=-1)
    values.setflags(write=False)
    t.setflags(write=False)
    return SummarySeries(values, t, tuple(spec.names))


@dataclass(frozen=True)
class FeatureMap:
    """Selects entries of ``S_t`` (optionally with an intercept) to form ``f(S_t)``.

    ``entries`` holds integer positions into ``S_t`` or term names; ``None``
    keeps every entry.
    """

    include_intercept: bool = True
    entries: tuple | None = None

    def indices(self, names: Sequence[str]) -> list[int]:
        if self.entries is None:
            return list(range(len(names)))
        out = []
        for entry in self.entries:
            if isinstance(entry, str):
                if entry not in names:
                    raise DataError(f"feature {entry!r} is not a summary term; have {list(names)}")
                out.append(list(names).index(entry))
            else:
                if not 0 <= int(entry) < len(names):
                    raise DataError(f"feature index {entry} out of range for d={len(names)}")
                out.append(int(entry))
        return out

    def dim(self, names: Sequence[str]) -> int:
        return len(self.indices(names)) + int(self.include_intercept)

    def feature_names(self, names: Sequence[str]) -> list[str]:
        out = ["intercept"] if self.include_intercept else []
        return out + [names[j] for j in self.indices(names)]


def apply_features(s, fmap: FeatureMap, names: Sequence[str] | None = None) -> np.ndarray:
    """Map summaries of shape (..., d) to features of shape (..., q)."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s[None]
    if names is None:
        names = [str(j) for j in range(s.shape[-1])]
    elif len(names) != s.shape[-1]:
        raise DataError(f"{len(names)} names for summaries of dimension {s.shape[-1]}")
    cols = s[..., fmap.indices(names)]
    if fmap.include_intercept:
        cols = np.concatenate([np.ones(s.shape[:-1] + (1,)), cols], axis=-1)
    return cols


def compute_igc(glucose) -> float:
    """Mean index of glycemic control over a set of glucose readings (mg/dL).

    Readings inside [80, 140] score 0; hypoglycemia is penalised by
    ``(80 - G)^2 / 30`` and hyperglycemia by ``(G - 140)^1.35 / 30``.
    """
    g = np.asarray(glucose, dtype=float).ravel()
    if g.size == 0:
        raise DataError("IGC needs at least one glucose reading")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise DataError("glucose readings must be finite and positive")
    low = np.where(g < 80, (80 - g) ** 2, 0.0)
    high = np.where(g > 140, np.abs(g - 140) ** 1.35, 0.0)
    return float(np.mean(-low / 30 - high / 30))


# --------------------------------------------------------------------------
# effect parameters


@dataclass(frozen=True)
class LagWeights:
    w: tuple

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size < 1:
            raise DataError("need at least one weight")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DataError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DataError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "w", tuple(float(v) for v in w))

    @classmethod
    def uniform(cls, K: int) -> "LagWeights":
        w = np.full(K, 1.0 / K)
        w[-1] = 1.0 - w[:-1].sum()
        return cls(tuple(w))

    @property
    def K(self) -> int:
        return len(self.w)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.w, dtype=dtype)


@dataclass(frozen=True, eq=False)
class LagParams:
    """Quadratic effect ``alpha a^2 + (beta . f) a`` for lag ``k``."""

    alpha: float
    beta: np.ndarray
    k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", _frozen(np.atleast_1d(self.beta)))

    @classmethod
    def from_vector(cls, phi, k=None) -> "LagParams":
        phi = np.asarray(phi, dtype=float)
        return cls(phi[0], phi[1:], k)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.beta])

    def __mul__(self, c: float) -> "LagParams":
        return LagParams(c * self.alpha, c * self.beta, self.k)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class WeightedParams:
    alpha_tilde: float
    beta_tilde: np.ndarray
    weights: LagWeights = field(default_factory=lambda: LagWeights((1.0,)))

    def __post_init__(self):
        object.__setattr__(self, "alpha_tilde", float(self.alpha_tilde))
        object.__setattr__(self, "beta_tilde", _frozen(np.atleast_1d(self.beta_tilde)))

    @property
    def alpha(self) -> float:
        return self.alpha_tilde

    @property
    def beta(self) -> np.ndarray:
        return self.beta_tilde

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha_tilde], self.beta_tilde])


def combine_weighted(per_lag: Sequence[LagParams], w: LagWeights) -> WeightedParams:
    """Weighted sums of per-lag coefficients, lag ``k`` taking weight ``w_k``."""
    if len(per_lag) != w.K:
        raise DataError(f"{len(per_lag)} lag fits for {w.K} weights")
    q = {len(p.beta) for p in per_lag}
    if len(q) != 1:
        raise DataError("per-lag parameters disagree on the feature dimension")
    ks = [p.k for p in per_lag]
    if all(k is not None for k in ks) and sorted(ks) != list(range(1, w.K + 1)):
        raise DataError(f"per-lag parameters must cover k=1..{w.K}, got {ks}")
    order = np.argsort([k if k is not None else i for i, k in enumerate(ks)], kind="stable")
    stacked = np.stack([per_lag[i].as_vector() for i in order])
    combined = np.asarray(w) @ stacked
    return WeightedParams(combined[0], combined[1:], w)


def advantage(params, a, f) -> np.ndarray | float:
    """``alpha a^2 + (beta . f) a``; broadcasts over leading axes of ``a`` and ``f``."""
    f = np.asarray(f, dtype=float)
    beta = np.asarray(params.beta, dtype=float)
    if f.shape[-1:] != beta.shape:
        raise DataError(f"feature dimension {f.shape[-1:]} does not match beta {beta.shape}")
    a = np.asarray(a, dtype=float)
    out = params.alpha * a**2 + (f @ beta) * a
    return float(out) if np.ndim(out) == 0 else out
