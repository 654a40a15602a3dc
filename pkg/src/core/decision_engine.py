"""
Decision engine module: turns forecasts into allocation plans and audits the
realized over/under-provisioning against actual traffic
"""
import logging
from dataclasses import dataclass
from functools import partial
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.core.errors import (
    ConfigError, IncompatiblePolicy, InvalidProbability, ShapeMismatch, ValidationError,
)
from src.core.timeseries import is_number
from src.models.lstm_forecaster import PointForecast
from src.models.sff_forecaster import (
    GaussianForecast, SamplePaths, check_probability, quantile_closed_form,
)

logger = logging.getLogger('ntn_forecast.decision')

EXACT_TOLERANCE = 1e-9
POLICY_KINDS = ('point', 'quantile', 'headroom')


def default_probabilities() -> np.ndarray:
    """Percentile grid 0.01, 0.02, ..., 0.99"""
    return np.round(np.arange(1, 100) / 100.0, 2)


@dataclass(frozen=True)
class QuantileGrid:
    """Per-step quantiles: values[i, t] is the probabilities[i] quantile of step t"""
    probabilities: np.ndarray
    values: np.ndarray
    beam_id: str = ''
    origin_time: int = 0

    def __post_init__(self):
        probs = _check_probabilities(self.probabilities)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != probs.size:
            raise ShapeMismatch(
                f"Quantile values must be ({probs.size}, H), got {values.shape}"
            )
        if np.any(np.diff(values, axis=0) < 0):
            raise ValidationError("Quantile values must be non-decreasing in probability")
        probs.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'probabilities', probs)
        object.__setattr__(self, 'values', values)

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def lookup(self, p: float) -> np.ndarray:
        """
        Quantile row for p; when p is not on the grid the next higher grid
        probability is used (never allocates below the requested level)
        """
        p = check_probability(p)
        candidates = np.nonzero(self.probabilities >= p - 1e-12)[0]
        if candidates.size == 0:
            raise InvalidProbability(
                f"p={p} exceeds the largest grid probability {self.probabilities[-1]}"
            )
        return self.values[candidates[0]]


def _check_probabilities(probabilities) -> np.ndarray:
    probs = np.array(probabilities, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise InvalidProbability("Probability grid must be a non-empty 1-D list")
    if np.any(~((probs > 0) & (probs < 1))):
        raise InvalidProbability(f"Probabilities must lie in (0, 1), got {probs}")
    if np.any(np.diff(probs) <= 0):
        raise InvalidProbability("Probabilities must be strictly ascending")
    return probs


def ecdf_quantiles(paths: SamplePaths, probabilities=None, beam_id: str = '',
                   origin_time: int = 0) -> QuantileGrid:
    """
    Empirical quantiles of sample paths, step by step

    The p-quantile is the smallest sample s with ECDF(s) >= p, i.e. the
    ceil(p*n)-th order statistic; no interpolation.
    """
    probs = _check_probabilities(default_probabilities() if probabilities is None
                                 else probabilities)
    ordered = np.sort(paths.paths, axis=0)
    n = ordered.shape[0]
    ranks = np.clip(np.ceil(probs * n - 1e-9).astype(np.int64), 1, n)
    return QuantileGrid(probs, ordered[ranks - 1, :], beam_id, int(origin_time))


@dataclass(frozen=True)
class AllocationPolicy:
    """
    How many resources to allocate per step

    kinds: 'point' (the point/mean forecast), 'quantile' (the p-quantile),
    'headroom' (point forecast scaled by 1 + factor). Amounts are clamped at 0.
    """
    kind: str = 'point'
    p: Optional[float] = None
    factor: Optional[float] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"Unknown allocation policy {self.kind!r}; use one of {POLICY_KINDS}")
        if self.kind == 'quantile':
            if not is_number(self.p):
                raise ConfigError(f"quantile policy needs a numeric p, got {self.p!r}")
            check_probability(self.p)
        if self.kind == 'headroom' and not (is_number(self.factor) and self.factor >= 0):
            raise ConfigError(f"headroom factor must be >= 0, got {self.factor!r}")

    @classmethod
    def parse(cls, text: str) -> 'AllocationPolicy':
        """Parse 'point', 'quantile:0.9' or 'headroom:0.2'"""
        kind, _, arg = str(text).strip().partition(':')
        try:
            value = float(arg) if arg else None
        except ValueError as e:
            raise ConfigError(f"Bad policy argument in {text!r}") from e
        if kind == 'quantile':
            return cls('quantile', p=value)
        if kind == 'headroom':
            return cls('headroom', factor=value)
        if arg:
            raise ConfigError(f"Policy {kind!r} takes no argument: {text!r}")
        return cls(kind)

    @classmethod
    def from_value(cls, value: Union[str, dict]) -> 'AllocationPolicy':
        if isinstance(value, str):
            return cls.parse(value)
        if isinstance(value, dict):
            unknown = set(value) - {'kind', 'p', 'factor'}
            if unknown:
                raise ConfigError(f"Unknown policy key(s): {sorted(unknown)}")
            return cls(**value)
        raise ConfigError(f"Policy must be a string or an object, got {value!r}")

    @property
    def is_distributional(self) -> bool:
        return self.kind == 'quantile'

    def __str__(self):
        if self.kind == 'quantile':
            return f"quantile:{self.p:g}"
        if self.kind == 'headroom':
            return f"headroom:{self.factor:g}"
        return self.kind


@dataclass(frozen=True)
class AllocationPlan:
    """Per-step resource amounts (traffic-capacity units) for one beam"""
    beam_id: str
    origin_time: int
    amounts: np.ndarray
    policy: str = 'point'

    def __post_init__(self):
        amounts = np.array(self.amounts, dtype=np.float64)
        if amounts.ndim != 1 or not np.all(np.isfinite(amounts)) or np.any(amounts < 0):
            raise ValidationError("Allocation amounts must be finite and >= 0")
        amounts.setflags(write=False)
        object.__setattr__(self, 'amounts', amounts)

    @property
    def horizon(self) -> int:
        return self.amounts.size


Forecast = Union[GaussianForecast, PointForecast, QuantileGrid]


def decide_allocation(forecast: Forecast, policy: AllocationPolicy,
                      clamp_floor: float = 0.0) -> AllocationPlan:
    """
    Allocation plan for a forecast under a policy

    Quantile policies need a distributional forecast (Gaussian or a
    QuantileGrid); on a grid the point forecast is its median row.
    """
    if isinstance(forecast, GaussianForecast):
        point = forecast.mu
        quantile = partial(quantile_closed_form, forecast)
    elif isinstance(forecast, QuantileGrid):
        point = forecast.lookup(0.5)
        quantile = forecast.lookup
    elif isinstance(forecast, PointForecast):
        if policy.is_distributional:
            raise IncompatiblePolicy(
                f"Policy {policy} needs a distributional forecast, beam {forecast.beam_id!r} "
                "has a point forecast"
            )
        point, quantile = forecast.values, None
    else:
        raise IncompatiblePolicy(f"Cannot allocate from {type(forecast).__name__}")

    if policy.kind == 'quantile':
        amounts = quantile(policy.p)
    elif policy.kind == 'headroom':
        amounts = point * (1.0 + policy.factor)
    else:
        amounts = point

    amounts = np.maximum(np.asarray(amounts, dtype=np.float64), clamp_floor)
    return AllocationPlan(forecast.beam_id, forecast.origin_time, amounts, str(policy))


@dataclass(frozen=True)
class ProvisioningOutcome:
    """
    Over/under/exact step counts, rates over non-exact steps and volumes

    When every step is exact both rates are reported as 0.
    """
    over_count: int
    under_count: int
    exact_count: int
    over_rate: float
    under_rate: float
    over_volume: float
    under_volume: float

    @classmethod
    def from_counts(cls, over: int, under: int, exact: int,
                    over_volume: float = 0.0, under_volume: float = 0.0) -> 'ProvisioningOutcome':
        decided = over + under
        if decided:
            over_rate = over / decided
            # over_rate + under_rate == 1.0 exactly
            under_rate = 1.0 - over_rate
        else:
            over_rate = under_rate = 0.0
        return cls(int(over), int(under), int(exact), over_rate, under_rate,
                   float(over_volume), float(under_volume))

    @property
    def total(self) -> int:
        return self.over_count + self.under_count + self.exact_count

    def to_dict(self) -> dict:
        return {
            'over_count': self.over_count,
            'under_count': self.under_count,
            'exact_count': self.exact_count,
            'over_rate': self.over_rate,
            'under_rate': self.under_rate,
            'over_volume': self.over_volume,
            'under_volume': self.under_volume,
        }


def classify_steps(amounts, actual) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean masks (over, under, exact) of alloc - actual per step"""
    amounts = np.asarray(amounts, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if amounts.shape != actual.shape:
        raise ShapeMismatch(f"Allocation length {amounts.shape} != actual length {actual.shape}")
    diff = amounts - actual
    over = diff > EXACT_TOLERANCE
    under = diff < -EXACT_TOLERANCE
    return over, under, ~(over | under)


def account_provisioning(plan: AllocationPlan, actual) -> ProvisioningOutcome:
    """Audit a plan against the traffic that actually occurred"""
    actual = np.asarray(actual, dtype=np.float64)
    over, under, exact = classify_steps(plan.amounts, actual)
    diff = plan.amounts - actual
    return ProvisioningOutcome.from_counts(
        int(over.sum()), int(under.sum()), int(exact.sum()),
        float(np.sum(np.maximum(diff, 0.0))), float(np.sum(np.maximum(-diff, 0.0))),
    )


def merge_outcomes(outcomes: Iterable[ProvisioningOutcome]) -> ProvisioningOutcome:
    """Pool several audits into one"""
    over = under = exact = 0
    over_volume = under_volume = 0.0
    for o in outcomes:
        over += o.over_count
        under += o.under_count
        exact += o.exact_count
        over_volume += o.over_volume
        under_volume += o.under_volume
    return ProvisioningOutcome.from_counts(over, under, exact, over_volume, under_volume)


def allocation_table(plans: Sequence[AllocationPlan], actuals: Sequence) -> pd.DataFrame:
    """Rows `beam_id,origin_time,step,allocated,actual,verdict`; step counts from 1"""
    frames = []
    for plan, actual in zip(plans, actuals):
        over, under, _ = classify_steps(plan.amounts, actual)
        verdict = np.where(over, 'over', np.where(under, 'under', 'exact'))
        frames.append(pd.DataFrame({
            'beam_id': plan.beam_id,
            'origin_time': plan.origin_time,
            'step': np.arange(1, plan.horizon + 1),
            'allocated': plan.amounts,
            'actual': np.asarray(actual, dtype=np.float64),
            'verdict': verdict,
        }))
    if not frames:
        return pd.DataFrame(columns=['beam_id', 'origin_time', 'step',
                                     'allocated', 'actual', 'verdict'])
    return pd.concat(frames, ignore_index=True)


def percentile_column(p: float) -> str:
    """`p05` for whole percents, `p25.1` otherwise"""
    percent = 100.0 * p
    if abs(percent - round(percent)) < 1e-9:
        return f'p{int(round(percent)):02d}'
    return f'p{percent:.10g}'


def quantile_grid_table(grids: Sequence[QuantileGrid]) -> pd.DataFrame:
    """Rows `beam_id,origin_time,step,pXX...` of empirical quantiles; step counts from 1"""
    frames = []
    for grid in grids:
        names = [percentile_column(p) for p in grid.probabilities]
        if len(set(names)) != len(names):
            raise ValidationError(f"Grid probabilities {list(grid.probabilities)} "
                                  f"do not give distinct percentile columns")
        columns = {
            'beam_id': grid.beam_id,
            'origin_time': grid.origin_time,
            'step': np.arange(1, grid.horizon + 1),
        }
        for name, row in zip(names, grid.values):
            columns[name] = row
        frames.append(pd.DataFrame(columns))
    return pd.concat(frames, ignore_index=True)
