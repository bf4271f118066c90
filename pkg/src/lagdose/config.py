"""JSON experiment configuration shared by every CLI command.

Unknown keys are rejected. Every field has a default, so ``{}`` is a valid
configuration: the simulation design with ``S_t = X_t``, one lag and the
default bandwidth rule.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError
from .kernel import BandwidthRule
from .panel import (
    CurrentCovariate,
    FeatureMap,
    LaggedCovariate,
    LaggedDose,
    LeadCovariate,
    RollingMeanCovariate,
    SummarySpec,
)

__all__ = ["ExperimentConfig", "load_config", "DgpParams", "BandwidthConfig", "FeaturesConfig"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CurrentTerm(_Strict):
    type: Literal["current"]
    column: str

    def build(self):
        return CurrentCovariate(self.column)


class LaggedTerm(_Strict):
    type: Literal["lagged"]
    column: str
    lag: int = Field(1, ge=1)

    def build(self):
        return LaggedCovariate(self.column, self.lag)


class DoseLagTerm(_Strict):
    type: Literal["dose_lag"]
    lag: int = Field(1, ge=1)

    def build(self):
        return LaggedDose(self.lag)


class RollingMeanTerm(_Strict):
    type: Literal["rolling_mean"]
    column: str
    from_lag: int = Field(ge=0)
    to_lag: int = Field(ge=0)

    def build(self):
        return RollingMeanCovariate(self.column, self.from_lag, self.to_lag)


class LeadTerm(_Strict):
    type: Literal["lead"]
    column: str
    lead: int = Field(1, ge=1)
    allow_lookahead: bool = Field(False, description="must be true; reading ahead is opt-in")

    @model_validator(mode="after")
    def _opt_in(self):
        if not self.allow_lookahead:
            raise ValueError(f"lead term on {self.column!r} reads future values; set allow_lookahead to true")
        return self

    def build(self):
        return LeadCovariate(self.column, self.lead, self.allow_lookahead)


SummaryTerm = Annotated[
    Union[CurrentTerm, LaggedTerm, DoseLagTerm, RollingMeanTerm, LeadTerm],
    Field(discriminator="type"),
]


class FeaturesConfig(_Strict):
    intercept: bool = Field(True, description="prepend a constant 1 to f(S_t)")
    entries: list[Union[str, int]] | None = Field(
        None, description="summary term names or positions; null keeps every term"
    )

    def build(self) -> FeatureMap:
        return FeatureMap(self.intercept, tuple(self.entries) if self.entries is not None else None)


class BandwidthConfig(_Strict):
    c: float = Field(0.305, gt=0, description="lambda_j = c * n^-gamma * sd(S_j)")
    gamma: float = Field(1 / 3, gt=0)
    mode: Literal["per_time", "pooled"] = Field("per_time", description="smooth per t or over all (i, t)")

    def build(self) -> BandwidthRule:
        return BandwidthRule(self.c, self.gamma, self.mode)


class DgpParams(_Strict):
    """Simulation design; the defaults are the reference setting."""

    sigma: float = Field(0.5, gt=0, lt=1)
    theta1: float = 0.8
    theta2: float = 0.0
    eta1: float = -0.2
    eta2: float = 0.2
    tau1: float = 1.0
    tau2: float = -0.5
    beta0: float = 0.0
    beta1: float = 2.0
    T: int = Field(50, ge=1)
    n: int = Field(100, ge=1)


class SubjectRange(_Strict):
    """Half-open range ``[start, stop)`` of subject positions in file order."""

    start: int = Field(0, ge=0)
    stop: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.stop is not None and self.stop <= self.start:
            raise ValueError(f"empty subject range [{self.start}, {self.stop})")
        return self

    def indices(self, n: int) -> list[int]:
        stop = n if self.stop is None else self.stop
        if stop > n:
            raise ConfigError(f"subject range stops at {stop} but the panel has {n} subjects")
        return list(range(self.start, stop))


class GlucoseConfig(_Strict):
    bin_minutes: int = Field(30, ge=1)
    bins_per_day: int = Field(48, ge=2)
    simulate_days: int = Field(54, ge=1, description="days generated when bin-glucose has no --panel")


class ExperimentConfig(_Strict):
    summary: list[SummaryTerm] | None = Field(None, description="S_t terms; null uses every current covariate")
    features: FeaturesConfig = FeaturesConfig()
    lags: int = Field(1, ge=1, description="largest lag K")
    weights: list[float] | None = Field(None, description="lag weights; null is uniform")
    bandwidth: BandwidthConfig = BandwidthConfig()
    level: float = Field(0.95, gt=0, lt=1, description="confidence level")
    dose_bounds: Union[Literal["observed_max", "unbounded"], tuple[float, float]] = Field(
        "unbounded", description='"observed_max" is [0, largest dose in the panel file]'
    )
    t_range: Literal["maximal", "common"] = "maximal"
    leave_one_out: bool = False
    initial_dose: float | None = Field(None, description="dose assumed before t=1 for lagged-dose terms")
    seed: int = Field(0, ge=0, lt=2**64)
    replicates: int = Field(200, ge=2)
    policy_test_size: int = Field(0, ge=0, description="subjects in the mc policy test panel; 0 skips it")
    dgp: DgpParams = DgpParams()
    fit_subjects: SubjectRange | None = Field(None, description="subjects used for fitting; null is all")
    eval_subjects: SubjectRange | None = Field(None, description="subjects scored by suggest/evaluate")
    params_from: str | None = Field(None, description="fit output directory to reuse instead of refitting")
    glucose: GlucoseConfig = GlucoseConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.weights is not None:
            if len(self.weights) != self.lags:
                raise ValueError(f"{len(self.weights)} weights given for lags={self.lags}")
            if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        if isinstance(self.dose_bounds, tuple) and not self.dose_bounds[0] <= self.dose_bounds[1]:
            raise ValueError(f"dose_bounds {self.dose_bounds} has lo > hi")
        return self

    def summary_spec(self) -> SummarySpec | None:
        if self.summary is None:
            return None
        return SummarySpec(tuple(term.build() for term in self.summary))

    def feature_map(self) -> FeatureMap:
        return self.features.build()

    def bandwidth_rule(self) -> BandwidthRule:
        return self.bandwidth.build()

    def dgp_config(self):
        from .simulation import DgpConfig

        return DgpConfig(**self.dgp.model_dump(), seed=self.seed)

    def estimator_settings(self):
        from .panel import LagWeights
        from .simulation import COVARIATE, EstimatorSettings

        spec = self.summary_spec() or SummarySpec((CurrentCovariate(COVARIATE),))
        return EstimatorSettings(
            spec=spec,
            fmap=self.feature_map(),
            bandwidth=self.bandwidth_rule(),
            lags=self.lags,
            weights=LagWeights(tuple(self.weights)) if self.weights else None,
            level=self.level,
            t_range=self.t_range,
            policy_test_size=self.policy_test_size,
        )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config, raising :class:`ConfigError` on any problem."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from None
