"""
rApp simulator module to run the closed-loop forecasting workflow

Each evaluation day walks the workflow phases in order: monitoring collects
telemetry up to the origin, preprocessing cuts training windows, the analytic
engines (re)train and forecast, the decision engine turns forecasts into
allocation plans, the actuator applies them and the feedback phase audits
them against the traffic that actually occurred.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.artifact_writer import atomic_directory, write_csv, write_json
from src.core.config import SimConfig
from src.core.decision_engine import (
    QuantileGrid, account_provisioning, allocation_table, decide_allocation, ecdf_quantiles,
    quantile_grid_table,
)
from src.core.errors import ConfigError, InsufficientHistory
from src.core.metrics import EvaluationRecord, SummaryReport, summarize
from src.core.timeseries import HOURS_PER_DAY, Dataset, ForecastWindow, make_windows
from src.models.lstm_forecaster import (
    LSTMHyperParams, point_forecast_table, predict_lstm_batch, train_lstm,
)
from src.models.sff_forecaster import (
    GaussianForecast, SFFHyperParams, derive_seed, forecast_table, predict_sff_batch,
    sample_paths, train_sff,
)

logger = logging.getLogger('ntn_forecast.rapp')

PHASES = ('monitoring', 'preprocessing', 'training', 'prediction',
          'decision', 'actuation', 'feedback')
CASE_STUDY_MIN_BEAMS = 6
FULL_PERCENTILES = tuple(range(1, 100))

__all__ = [
    'AnalyticEngine', 'SFFEngine', 'LSTMEngine', 'RAppSimulator', 'SimConfig', 'SimLog',
    'build_engines', 'run_simulation', 'replay_case_study',
]


class AnalyticEngine:
    """
    A forecaster as seen by the simulator

    Subclasses set `name`, fit on training windows and forecast from the
    (N, C) matrix of contexts ending right before the origin.
    """
    name = ''
    probabilistic = False

    def __init__(self):
        self.training_logs: List[List[float]] = []

    def fit(self, windows: Sequence[ForecastWindow]):
        raise NotImplementedError

    def forecast(self, contexts: np.ndarray, beam_ids: Sequence[str], origin: int) -> list:
        raise NotImplementedError


class SFFEngine(AnalyticEngine):
    name = 'sff'
    probabilistic = True

    def __init__(self, hyper: SFFHyperParams, horizon: int):
        super().__init__()
        self.hyper = hyper
        self.horizon = horizon
        self.model = None

    def fit(self, windows):
        self.model = train_sff(windows, self.hyper, self.horizon)
        self.training_logs.append(list(self.model.training_log))

    def forecast(self, contexts, beam_ids, origin):
        return predict_sff_batch(self.model, contexts, beam_ids, [origin] * len(beam_ids))


class LSTMEngine(AnalyticEngine):
    name = 'lstm'

    def __init__(self, hyper: LSTMHyperParams, horizon: int):
        super().__init__()
        self.hyper = hyper
        self.horizon = horizon
        self.model = None

    def fit(self, windows):
        self.model = train_lstm(windows, self.hyper, self.horizon)
        self.training_logs.append(list(self.model.training_log))

    def forecast(self, contexts, beam_ids, origin):
        return predict_lstm_batch(self.model, contexts, beam_ids, [origin] * len(beam_ids))


def build_engines(cfg: SimConfig) -> List[AnalyticEngine]:
    engines = []
    for kind in cfg.models:
        if kind == 'sff':
            engines.append(SFFEngine(cfg.sff, cfg.horizon))
        else:
            engines.append(LSTMEngine(cfg.lstm, cfg.horizon))
    return engines


def forecast_frame(forecasts: Sequence) -> pd.DataFrame:
    """Forecast CSV rows: full percentile set for Gaussian forecasts, values otherwise"""
    if all(isinstance(f, GaussianForecast) for f in forecasts):
        return forecast_table(forecasts, FULL_PERCENTILES)
    return point_forecast_table(forecasts)


@dataclass
class SimLog:
    """Everything a simulation produced, in the order it was produced"""
    mode: str
    models: List[str]
    beam_ids: List[str]
    origins: List[int]
    horizon: int
    records: List[EvaluationRecord] = field(default_factory=list)
    grids: Dict[str, List[QuantileGrid]] = field(default_factory=dict)
    training_logs: Dict[str, List[List[float]]] = field(default_factory=dict)
    timings: Dict[str, dict] = field(default_factory=dict)

    def records_for(self, model: str) -> List[EvaluationRecord]:
        """Records of one model sorted by beam_id, then origin"""
        return sorted((r for r in self.records if r.model == model),
                      key=lambda r: (r.beam_id, r.origin_time))

    def grids_for(self, model: str) -> List[QuantileGrid]:
        return sorted(self.grids.get(model, []), key=lambda g: (g.beam_id, g.origin_time))

    def summary(self) -> SummaryReport:
        return summarize([r for m in self.models for r in self.records_for(m)])

    def report_dict(self, report: Optional[SummaryReport] = None) -> dict:
        report = report or self.summary()
        data = report.to_dict()
        data.update({
            'mode': self.mode,
            'beams': list(self.beam_ids),
            'origins': list(self.origins),
            'horizon': self.horizon,
            'models': list(self.models),
        })
        return data

    def save(self, out_dir) -> Path:
        """
        Write the log as a directory of CSV/JSON files

        Args:
            out_dir: Output directory; replaced only once every file is written

        Returns:
            Path to the output directory
        """
        report = self.summary()
        with atomic_directory(out_dir) as tmp:
            for model in self.models:
                records = self.records_for(model)
                write_csv(forecast_frame([r.forecast for r in records]),
                          tmp / f'forecasts_{model}.csv')
                write_csv(allocation_table([r.plan for r in records],
                                           [r.actual for r in records]),
                          tmp / f'allocations_{model}.csv')
                grids = self.grids_for(model)
                if grids:
                    write_csv(quantile_grid_table(grids), tmp / f'percentiles_{model}.csv')
                write_json({'runs': self.training_logs.get(model, [])},
                           tmp / f'training_{model}.json')
            write_csv(report.errors_table(), tmp / 'errors.csv')
            write_json(self.report_dict(report), tmp / 'report.json')
            write_json(self.timings, tmp / 'timings.json')
        return Path(out_dir)


class RAppSimulator:
    """
    Coordinates the rApp workflow over a multi-beam dataset, one evaluation
    day at a time
    """

    def __init__(self, cfg: SimConfig, dataset: Dataset,
                 engines: Optional[Sequence[AnalyticEngine]] = None):
        """
        Initialize the simulator

        Args:
            cfg: Simulation settings
            dataset: Full traffic history; the simulator only ever shows the
                engines samples before the current origin
            engines: Forecasters to run; built from cfg.models when omitted
        """
        self.cfg = cfg
        self.dataset = dataset
        self.engines = list(engines) if engines is not None else build_engines(cfg)
        names = [e.name for e in self.engines]
        if not names or len(set(names)) != len(names):
            raise ConfigError(f"Engine names must be unique and non-empty, got {names}")

        self.origins = self.eval_origins()
        self._check_history()

        self.log = SimLog(
            mode=cfg.mode,
            models=names,
            beam_ids=dataset.beam_ids,
            origins=self.origins,
            horizon=cfg.horizon,
            training_logs={name: [] for name in names},
            timings={phase: {'calls': 0} for phase in PHASES},
        )

    def eval_origins(self) -> List[int]:
        """One origin per evaluation day; the last horizon ends with the data"""
        last = self.dataset.end_time - self.cfg.horizon
        return [last - HOURS_PER_DAY * k for k in reversed(range(self.cfg.n_eval_days))]

    def _check_history(self):
        history = self.origins[0] - self.dataset.start_time
        needed = self.cfg.context_len + self.cfg.horizon
        if history < needed:
            raise InsufficientHistory(
                f"{history} h of history before the first evaluation origin "
                f"{self.origins[0]}; need at least {needed} h "
                f"(context {self.cfg.context_len} + horizon {self.cfg.horizon}) "
                f"for {self.cfg.n_eval_days} evaluation day(s)"
            )

    @contextmanager
    def _phase(self, name):
        entry = self.log.timings[name]
        entry['calls'] += 1
        started = time.perf_counter()
        try:
            yield
        finally:
            if self.cfg.record_wall_times:
                entry['seconds'] = entry.get('seconds', 0.0) + time.perf_counter() - started

    def _per_beam(self, fn, items):
        """Map fn over per-beam items, in parallel when configured; order preserved"""
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def needs_training(self, day: int) -> bool:
        if day == 0:
            return True
        return self.cfg.retrain_every is not None and day % self.cfg.retrain_every == 0

    # Workflow phases

    def collect_telemetry(self, origin: int) -> Dataset:
        """Monitoring: every sample with time < origin"""
        with self._phase('monitoring'):
            return self.dataset.slice_until(origin)

    def preprocess(self, telemetry: Dataset) -> List[ForecastWindow]:
        """Cut training windows from the telemetry"""
        with self._phase('preprocessing'):
            windows = make_windows(telemetry, self.cfg.context_len, self.cfg.horizon,
                                   self.cfg.train_stride)
        logger.info(f"Prepared {len(windows)} training windows from "
                    f"{telemetry.length} h x {len(telemetry)} beams")
        return windows

    def train(self, windows: Sequence[ForecastWindow]):
        for engine in self.engines:
            with self._phase('training'):
                engine.fit(windows)
            self.log.training_logs[engine.name] = list(engine.training_logs)

    def predict(self, telemetry: Dataset, origin: int, day: int) -> Dict[str, list]:
        """
        Forecast every beam from its last C telemetry hours

        Probabilistic forecasts are also sampled into an empirical 1st-99th
        percentile grid per beam.

        Returns:
            Dictionary mapping engine name to (forecast, grid or None) pairs
            sorted by beam_id
        """
        contexts = np.stack([s.values[-self.cfg.context_len:] for s in telemetry])
        beam_ids = telemetry.beam_ids
        day_seed = (self.cfg.seed + day) % 2 ** 64
        predictions = {}
        with self._phase('prediction'):
            for engine in self.engines:
                forecasts = engine.forecast(contexts, beam_ids, origin)
                grids = [None] * len(forecasts)
                if engine.probabilistic:
                    grids = self._per_beam(
                        lambda f: ecdf_quantiles(
                            sample_paths(f, self.cfg.n_paths, derive_seed(day_seed, f.beam_id)),
                            beam_id=f.beam_id, origin_time=origin,
                        ),
                        forecasts,
                    )
                    self.log.grids.setdefault(engine.name, []).extend(grids)
                predictions[engine.name] = list(zip(forecasts, grids))
        return predictions

    def decide(self, model: str, predictions: list) -> list:
        """Allocation plan per beam under the model's (possibly per-beam) policy"""
        use_grid = self.cfg.quantile_source == 'ecdf'

        def plan(item):
            forecast, grid = item
            policy = self.cfg.policy_for(model, forecast.beam_id)
            source = grid if (use_grid and grid is not None and policy.is_distributional) \
                else forecast
            return decide_allocation(source, policy)

        with self._phase('decision'):
            return self._per_beam(plan, predictions)

    def actuate(self, model: str, plans: list) -> list:
        """Apply plans; the O1 hand-off is a log record"""
        with self._phase('actuation'):
            for p in plans:
                logger.debug(f"O1 apply [{model}] beam {p.beam_id} origin {p.origin_time}: "
                             f"{p.policy}, total {float(p.amounts.sum()):.1f}")
        return plans

    def feedback(self, model: str, predictions: list, plans: list, origin: int):
        """Audit plans against realized traffic and append the records"""
        stop = origin + self.cfg.horizon

        def audit(pair):
            (forecast, _), plan = pair
            actual = self.dataset.get(plan.beam_id).between(origin, stop)
            return EvaluationRecord(model, plan.beam_id, origin, forecast, plan,
                                    account_provisioning(plan, actual), actual)

        with self._phase('feedback'):
            self.log.records.extend(self._per_beam(audit, list(zip(predictions, plans))))

    def run(self) -> SimLog:
        """
        Run every evaluation day

        Returns:
            SimLog with n_eval_days x n_beams x n_models records
        """
        n_days = len(self.origins)
        logger.info(f"Simulating {n_days} day(s) over {len(self.dataset)} beams with "
                    f"{', '.join(e.name for e in self.engines)} ({self.cfg.mode})")
        for day, origin in enumerate(self.origins):
            telemetry = self.collect_telemetry(origin)
            if self.needs_training(day):
                self.train(self.preprocess(telemetry))
            predictions = self.predict(telemetry, origin, day)
            for engine in self.engines:
                plans = self.decide(engine.name, predictions[engine.name])
                self.actuate(engine.name, plans)
                self.feedback(engine.name, predictions[engine.name], plans, origin)
            logger.info(f"Day {day + 1}/{n_days} (origin {origin}) done")
        return self.log


def run_simulation(cfg: SimConfig, dataset: Optional[Dataset] = None,
                   engines: Optional[Sequence[AnalyticEngine]] = None) -> SimLog:
    """
    Rolling closed-loop simulation (or the single-origin replay when
    cfg.mode is 'case_study')

    Args:
        cfg: Simulation settings
        dataset: Traffic history; loaded from cfg.data when omitted
        engines: Forecaster overrides, e.g. test doubles

    Returns:
        The simulation log
    """
    if dataset is None:
        dataset = cfg.data.load()
    if cfg.mode == 'case_study':
        return replay_case_study(cfg, dataset, engines)
    return RAppSimulator(cfg, dataset, engines).run()


def replay_case_study(cfg: SimConfig, dataset: Optional[Dataset] = None,
                      engines: Optional[Sequence[AnalyticEngine]] = None) -> SimLog:
    """
    Single-origin replay: the last `horizon` hours of every beam are held
    out, the preceding context is the input and everything before the
    origin is training history
    """
    if dataset is None:
        dataset = cfg.data.load()
    if len(dataset) < CASE_STUDY_MIN_BEAMS:
        raise InsufficientHistory(
            f"Case study needs at least {CASE_STUDY_MIN_BEAMS} beams, got {len(dataset)}"
        )
    cfg = replace(cfg, mode='case_study', n_eval_days=1, retrain_every=None)
    return RAppSimulator(cfg, dataset, engines).run()
