"""Autoregressive observational simulator, its analytic lag-k effects and a Monte Carlo driver.

Per subject: ``X_1 ~ N(0, s^2)``, ``A_1 ~ U(0, 1)`` and for ``t >= 1``

    X_{t+1} ~ N(eta1 X_t + eta2 A_t, s^2)
    A_{t+1} ~ N(tau1 X_{t+1} + tau2 A_t, s^2)
    Y_{t+1} = theta1 X_t + theta2 A_{t-1} - A_t (A_t - beta0 - beta1 X_t) + eps_{t+1}

with ``A_0 = 0`` and ``eps`` a stationary Gaussian AR(1) whose lag-``h``
correlation is ``s^(h/2)``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimator import KernelSNMM
from .exceptions import ConfigError, DataError, LagdoseError
from .kernel import BandwidthRule
from .panel import (
    CurrentCovariate,
    FeatureMap,
    LagParams,
    LagWeights,
    SummarySpec,
    TrajectoryPanel,
    combine_weighted,
)
from .policy import DoseRegime, evaluate_regime
from .snmm import normal_quantile

__all__ = [
    "DgpConfig",
    "EstimatorSettings",
    "McRow",
    "McReport",
    "generate_panel",
    "true_lag_coefficients",
    "true_lag_params",
    "true_lag2_closed_form",
    "true_feature_params",
    "run_monte_carlo",
]

log = logging.getLogger(__name__)

COVARIATE = "x"


@dataclass(frozen=True)
class DgpConfig:
    sigma: float = 0.5
    theta1: float = 0.8
    theta2: float = 0.0
    eta1: float = -0.2
    eta2: float = 0.2
    tau1: float = 1.0
    tau2: float = -0.5
    beta0: float = 0.0
    beta1: float = 2.0
    T: int = 50
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ConfigError(
                f"sigma must lie in (0, 1) for the AR(1) noise construction, got {self.sigma}"
            )
        if self.T < 1 or self.n < 1:
            raise ConfigError("T and n must be positive")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_panel(cfg: DgpConfig, n: int | None = None, T: int | None = None, rng=None) -> TrajectoryPanel:
    """Draw ``n`` subjects over ``T`` decision times (defaults from ``cfg``).

    ``rng`` may be a Generator or anything ``default_rng`` accepts; it
    defaults to ``cfg.seed``.
    """
    n = cfg.n if n is None else int(n)
    T = cfg.T if T is None else int(T)
    rng = _rng(cfg.seed if rng is None else rng)
    s = cfg.sigma
    x0 = rng.normal(0.0, s, n)
    a0 = rng.uniform(0.0, 1.0, n)
    zx = rng.standard_normal((n, T))
    za = rng.standard_normal((n, T))
    ze = rng.standard_normal((n, T))

    X = np.empty((n, T + 1))
    A = np.empty((n, T))
    Y = np.empty((n, T))
    X[:, 0], A[:, 0] = x0, a0
    rho = np.sqrt(s)
    innov = s * np.sqrt(1 - s)
    eps = s * ze[:, 0]
    a_prev = np.zeros(n)
    for j in range(T):  # j = t - 1
        x, a = X[:, j], A[:, j]
        X[:, j + 1] = cfg.eta1 * x + cfg.eta2 * a + s * zx[:, j]
        if j + 1 < T:
            A[:, j + 1] = cfg.tau1 * X[:, j + 1] + cfg.tau2 * a + s * za[:, j]
        if j > 0:
            eps = rho * eps + innov * ze[:, j]
        Y[:, j] = cfg.theta1 * x + cfg.theta2 * a_prev - a * (a - cfg.beta0 - cfg.beta1 * x) + eps
        a_prev = a
    return TrajectoryPanel(X[:, :, None], A, Y, covariate_names=(COVARIATE,))


def _step(c: np.ndarray, cfg: DgpConfig) -> np.ndarray:
    a1, a2, a3, a4, a5 = c
    e1, e2, t1, t2 = cfg.eta1, cfg.eta2, cfg.tau1, cfg.tau2
    g = t1 * e2 + t2
    return np.array(
        [
            (a1 + a4 * t1) * e1,
            (a2 + a3 * t1**2 + a5 * t1) * e1**2,
            a2 * e2**2 + a3 * g**2 + a5 * g * e2,
            a1 * e2 + a4 * g,
            2 * e1 * e2 * a2 + 2 * a3 * t1 * e1 * g + a5 * (t1 * e1 * e2 + e1 * g),
        ]
    )


def true_lag_coefficients(cfg: DgpConfig, k: int) -> np.ndarray:
    """Coefficients ``(c1..c5)`` of ``E(Y_{t+k} | A_t=a, X_t) = c1 X + c2 X^2 + c3 a^2 + c4 a + c5 aX``.

    Constants are dropped. For ``k = 1`` the coefficients describe the
    structural mean given ``(X_t, A_t)`` apart from the ``theta2 A_{t-1}``
    carry-over, which moves into the ``a`` coefficient at ``k = 2``.
    """
    if k < 1:
        raise DataError("lag must be >= 1")
    c = np.array([cfg.theta1, 0.0, -1.0, cfg.beta0, cfg.beta1])
    for step in range(1, k):
        c = _step(c, cfg)
        if step == 1:
            c[3] += cfg.theta2
    return c


def true_lag_params(cfg: DgpConfig, k: int) -> tuple[float, float, float]:
    """``(alpha_k, beta_k0, beta_k1)`` of the lag-``k`` effect with ``S_t = X_t``."""
    c = true_lag_coefficients(cfg, k)
    return (float(c[2]), float(c[3]), float(c[4]))


def true_lag2_closed_form(cfg: DgpConfig) -> tuple[float, float, float]:
    e1, e2, t1, t2 = cfg.eta1, cfg.eta2, cfg.tau1, cfg.tau2
    b0, b1 = cfg.beta0, cfg.beta1
    g = t1 * e2 + t2
    alpha = -(t1 * e2 + t2 - b1 * e2) * (t2 + t1 * e2)
    beta0 = cfg.theta1 * e2 + cfg.theta2 + b0 * g
    beta1 = g * (-2 * t1 * e1 + b1 * e1) + b1 * t1 * e1 * e2
    return (alpha, beta0, beta1)


def true_feature_params(cfg: DgpConfig, k: int, spec: SummarySpec, fmap: FeatureMap) -> LagParams:
    """True lag-``k`` effect expressed in the features ``fmap`` builds from ``spec``.

    The intercept carries ``beta_k0``, the current covariate ``beta_k1`` and
    any other feature a zero coefficient.
    """
    alpha, b0, b1 = true_lag_params(cfg, k)
    beta = [b0] if fmap.include_intercept else []
    for j in fmap.indices(spec.names):
        term = spec.terms[j]
        beta.append(b1 if isinstance(term, CurrentCovariate) and term.column == COVARIATE else 0.0)
    if not fmap.include_intercept and b0 != 0:
        log.warning("features lack an intercept; the true beta_k0=%g is not representable", b0)
    return LagParams(alpha, np.array(beta), k)


TRUTH_SPEC = SummarySpec((CurrentCovariate(COVARIATE),))
TRUTH_FMAP = FeatureMap(include_intercept=True)


@dataclass(frozen=True)
class EstimatorSettings:
    spec: SummarySpec = TRUTH_SPEC
    fmap: FeatureMap = TRUTH_FMAP
    bandwidth: BandwidthRule = field(default_factory=BandwidthRule)
    lags: int = 3
    weights: LagWeights | None = None
    level: float = 0.95
    t_range: str = "maximal"
    policy_test_size: int = 0

    def estimator(self) -> KernelSNMM:
        return KernelSNMM(
            summary=self.spec,
            features=self.fmap,
            lags=self.lags,
            weights=self.weights,
            bandwidth=self.bandwidth,
            level=self.level,
            t_range=self.t_range,
        )


@dataclass(frozen=True)
class McRow:
    lag: object  # int lag or "weighted"
    parameter: str
    truth: float
    bias: float
    sd: float
    mean_se: float
    coverage: float
    n_ok: int


@dataclass(eq=False)
class McReport:
    rows: list
    replicates: int
    failures: list
    policy_mean: float = float("nan")
    policy_sd: float = float("nan")
    optimal_value: float = float("nan")
    estimates: dict = field(default_factory=dict)
    ses: dict = field(default_factory=dict)
    policy_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def row(self, lag, parameter) -> McRow:
        for r in self.rows:
            if r.lag == lag and r.parameter == parameter:
                return r
        raise KeyError((lag, parameter))

    def mc_se(self, lag, parameter) -> float:
        """Monte Carlo standard error of the reported bias."""
        r = self.row(lag, parameter)
        return r.sd / np.sqrt(r.n_ok)


def _replicate_seed(master: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(0, rep))


def _run_replicate(args):
    cfg, settings, rep = args
    panel = generate_panel(cfg, rng=np.random.default_rng(_replicate_seed(cfg.seed, rep)))
    try:
        est = settings.estimator().fit(panel)
    except LagdoseError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"
    out = {k: (f.estimate, f.se) for k, f in est.lag_fits_.items()}
    out["weighted"] = (est.weighted_fit_.estimate, est.weighted_fit_.se)
    return rep, out, None


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("LAGDOSE_THREADS", "1") or 1)
    return max(1, int(threads))


def run_monte_carlo(
    cfg: DgpConfig,
    replicates: int,
    settings: EstimatorSettings | None = None,
    threads: int | None = None,
) -> McReport:
    """Fit ``replicates`` independent panels and summarise bias, SD, SE and coverage.

    Replicate ``r`` draws from ``SeedSequence(cfg.seed, spawn_key=(0, r))``,
    so each one can be reproduced alone. With ``settings.policy_test_size``
    set, each replicate's weighted-advantage regime is scored on one shared
    test panel observed to ``T + 3`` and averaged over ``t = 1..T``.
    """
    if replicates < 2:
        raise DataError("need at least 2 replicates")
    settings = settings or EstimatorSettings()
    w = settings.weights or LagWeights.uniform(settings.lags)
    settings = replace(settings, weights=w)
    threads = resolve_threads(threads)
    tasks = [(cfg, settings, r) for r in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replicate, tasks, chunksize=max(1, replicates // (4 * threads))))
    else:
        results = [_run_replicate(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    failures = [(rep, msg) for rep, _, msg in results if msg]
    ok = [out for _, out, msg in results if out is not None]
    for rep, msg in failures:
        log.warning("replicate %d failed: %s", rep, msg)

    param_names = ("alpha",) + tuple(
        f"beta[{name}]" for name in settings.fmap.feature_names(settings.spec.names)
    )
    truths = {k: true_feature_params(cfg, k, settings.spec, settings.fmap) for k in range(1, settings.lags + 1)}
    truths["weighted"] = combine_weighted([truths[k] for k in range(1, settings.lags + 1)], w)

    z = normal_quantile((1 + settings.level) / 2)

    rows, estimates, ses = [], {}, {}
    for lag in list(range(1, settings.lags + 1)) + ["weighted"]:
        truth = truths[lag].as_vector()
        if ok:
            est = np.stack([o[lag][0] for o in ok])
            se = np.stack([o[lag][1] for o in ok])
        else:
            est = se = np.empty((0, len(truth)))
        estimates[lag], ses[lag] = est, se
        hits = np.abs(est - truth) <= z * se
        for j, name in enumerate(param_names):
            m = len(est)
            rows.append(
                McRow(
                    lag,
                    name,
                    float(truth[j]),
                    float(est[:, j].mean() - truth[j]) if m else float("nan"),
                    float(est[:, j].std(ddof=1)) if m > 1 else float("nan"),
                    float(se[:, j].mean()) if m else float("nan"),
                    float(hits[:, j].mean()) if m else float("nan"),
                    m,
                )
            )

    report = McReport(rows, replicates, failures, estimates=estimates, ses=ses)
    if settings.policy_test_size and ok:
        test = generate_panel(
            cfg,
            n=settings.policy_test_size,
            T=cfg.T + 2,
            rng=np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,))),
        )
        truth_w = combine_weighted(
            [true_feature_params(cfg, k, TRUTH_SPEC, TRUTH_FMAP) for k in range(1, settings.lags + 1)], w
        )
        values = []
        for est in estimates["weighted"]:
            regime = DoseRegime(LagParams.from_vector(est), settings.fmap, settings.spec)
            values.append(evaluate_regime(regime, test, truth_w, TRUTH_SPEC, TRUTH_FMAP, t_max=cfg.T))
        report.policy_values = np.array(values)
        report.policy_mean = float(np.mean(values))
        report.policy_sd = float(np.std(values, ddof=1)) if len(values) > 1 else float("nan")
        report.optimal_value = evaluate_regime(
            DoseRegime(truth_w, TRUTH_FMAP, TRUTH_SPEC), test, truth_w, t_max=cfg.T
        )
    return report
