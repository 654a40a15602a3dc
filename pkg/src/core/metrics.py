"""
Metrics module: forecast errors, interval coverage and report assembly
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.core.decision_engine import AllocationPlan, ProvisioningOutcome, merge_outcomes
from src.core.errors import EmptyLog, ShapeMismatch
from src.models.lstm_forecaster import PointForecast
from src.models.sff_forecaster import GaussianForecast, check_probability, quantile_closed_form

logger = logging.getLogger('ntn_forecast.metrics')

COVERAGE_LEVELS = (0.5, 0.9)


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.size == 0:
        raise ShapeMismatch(
            f"Need equal non-empty lengths, got {pred.shape} and {actual.shape}"
        )
    return pred, actual


def mae(pred, actual) -> float:
    """Mean absolute error"""
    pred, actual = _pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def rmse(pred, actual) -> float:
    """Root mean squared error"""
    pred, actual = _pair(pred, actual)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def interval_bounds(f: GaussianForecast, level: float):
    """Central interval [q((1 - level)/2), q((1 + level)/2)] per step"""
    level = check_probability(level)
    return (quantile_closed_form(f, (1.0 - level) / 2.0),
            quantile_closed_form(f, (1.0 + level) / 2.0))


def interval_coverage(f: GaussianForecast, actual, level: float) -> float:
    """Fraction of actual values inside the central interval (bounds inclusive)"""
    actual = np.asarray(actual, dtype=np.float64)
    if actual.shape != f.mu.shape:
        raise ShapeMismatch(f"Actual length {actual.shape} != forecast horizon {f.mu.shape}")
    lower, upper = interval_bounds(f, level)
    return float(np.mean((actual >= lower) & (actual <= upper)))


@dataclass(frozen=True)
class MetricsRecord:
    """Pooled accuracy of one model; coverage only for probabilistic models"""
    model: str
    mae: float
    rmse: float
    coverage_50: Optional[float] = None
    coverage_90: Optional[float] = None

    def to_dict(self) -> dict:
        data = {'model': self.model, 'mae': self.mae, 'rmse': self.rmse}
        if self.coverage_50 is not None:
            data['coverage_50'] = self.coverage_50
            data['coverage_90'] = self.coverage_90
        return data


@dataclass(frozen=True)
class EvaluationRecord:
    """One (model, beam, origin) audit: forecast, plan, outcome and the truth"""
    model: str
    beam_id: str
    origin_time: int
    forecast: Union[GaussianForecast, PointForecast]
    plan: AllocationPlan
    outcome: ProvisioningOutcome
    actual: np.ndarray


@dataclass
class SummaryReport:
    records: List[MetricsRecord]
    provisioning: Dict[str, ProvisioningOutcome]
    per_beam: pd.DataFrame
    n_points: Dict[str, int]
    provisioning_per_beam: Dict[str, Dict[str, ProvisioningOutcome]] = field(default_factory=dict)

    def record(self, model: str) -> MetricsRecord:
        for r in self.records:
            if r.model == model:
                return r
        raise KeyError(model)

    def errors_table(self) -> pd.DataFrame:
        """Per-beam rows `model,beam_id,mae,rmse,over_rate,under_rate`"""
        return self.per_beam

    def to_dict(self) -> dict:
        """
        report.json layout:
          provisioning: {model: {over, under, over_count, ..., under_volume}}
          provisioning_per_beam: {model: {beam_id: {same fields as provisioning}}}
          metrics: {model: {mae, rmse, mae_beam_mean, rmse_beam_mean[, coverage_50, coverage_90]}}
          n_points: {model: pooled horizon points}
        """
        provisioning = {model: _outcome_entry(o) for model, o in self.provisioning.items()}
        provisioning_per_beam = {
            model: {beam_id: _outcome_entry(o) for beam_id, o in beams.items()}
            for model, beams in self.provisioning_per_beam.items()
        }

        metrics = {}
        for r in self.records:
            entry = r.to_dict()
            entry.pop('model')
            beams = self.per_beam[self.per_beam['model'] == r.model]
            entry['mae_beam_mean'] = float(beams['mae'].mean())
            entry['rmse_beam_mean'] = float(beams['rmse'].mean())
            metrics[r.model] = entry

        return {'provisioning': provisioning, 'provisioning_per_beam': provisioning_per_beam,
                'metrics': metrics, 'n_points': dict(self.n_points)}


def _outcome_entry(outcome: ProvisioningOutcome) -> dict:
    entry = outcome.to_dict()
    entry['over'] = outcome.over_rate
    entry['under'] = outcome.under_rate
    return entry


def summarize(entries: Sequence[EvaluationRecord]) -> SummaryReport:
    """
    Pool every (beam, origin) horizon point per model

    MAE/RMSE use the point forecast (the mean for Gaussian forecasts);
    coverage at 50% and 90% is computed for Gaussian forecasts only;
    provisioning counts are pooled across all audits of a model and,
    separately, across the audits of each of its beams.
    """
    if not entries:
        raise EmptyLog("Cannot summarize an empty simulation log")

    by_model = defaultdict(list)
    for e in entries:
        by_model[e.model].append(e)

    records, provisioning, by_beam, n_points, beam_rows = [], {}, {}, {}, []
    for model in sorted(by_model):
        items = by_model[model]
        pred = np.concatenate([e.forecast.point for e in items])
        actual = np.concatenate([np.asarray(e.actual, dtype=np.float64) for e in items])

        coverage = {}
        if all(isinstance(e.forecast, GaussianForecast) for e in items):
            for level in COVERAGE_LEVELS:
                inside = 0
                for e in items:
                    lower, upper = interval_bounds(e.forecast, level)
                    inside += int(np.sum((e.actual >= lower) & (e.actual <= upper)))
                coverage[level] = inside / actual.size

        records.append(MetricsRecord(model, mae(pred, actual), rmse(pred, actual),
                                     coverage.get(0.5), coverage.get(0.9)))
        provisioning[model] = merge_outcomes(e.outcome for e in items)
        n_points[model] = int(actual.size)

        per_beam = defaultdict(list)
        for e in items:
            per_beam[e.beam_id].append(e)
        by_beam[model] = {}
        for beam_id in sorted(per_beam):
            beam_items = per_beam[beam_id]
            bp = np.concatenate([e.forecast.point for e in beam_items])
            ba = np.concatenate([e.actual for e in beam_items])
            outcome = merge_outcomes(e.outcome for e in beam_items)
            by_beam[model][beam_id] = outcome
            beam_rows.append({'model': model, 'beam_id': beam_id,
                              'mae': mae(bp, ba), 'rmse': rmse(bp, ba),
                              'over_rate': outcome.over_rate, 'under_rate': outcome.under_rate})

    for r in records:
        logger.info(f"{r.model}: MAE {r.mae:.3f}, RMSE {r.rmse:.3f}, "
                    f"over {provisioning[r.model].over_rate:.2%} / "
                    f"under {provisioning[r.model].under_rate:.2%}")

    per_beam = pd.DataFrame(beam_rows, columns=['model', 'beam_id', 'mae', 'rmse',
                                                'over_rate', 'under_rate'])
    return SummaryReport(records, provisioning, per_beam, n_points, by_beam)
