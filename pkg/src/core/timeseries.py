"""
Traffic time series module: data model, CSV ingestion, synthetic multi-beam
traffic generation, sliding-window extraction and per-window normalization
"""
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.artifact_writer import write_csv
from src.core.errors import (
    ConfigError, EmptyDataset, MisalignedSeries, MissingColumn, NegativeValue,
    NonFiniteValue, NonHourlyGap, UnequalSeriesLength, UnexpectedColumn,
    ValidationError, WindowTooLong,
)

logger = logging.getLogger('ntn_forecast.timeseries')

CSV_COLUMNS = ('timestamp', 'beam_id', 'traffic')
STD_FLOOR = 1e-6
HOURS_PER_DAY = 24
HOURS_PER_WEEK = 168

DEFAULT_CONTEXT_LEN = 168
DEFAULT_HORIZON = 24


def _frozen_array(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TrafficSeries:
    """Hourly traffic load of one beam, starting at `start_time` (epoch hours)"""
    beam_id: str
    start_time: int
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size < 1:
            raise EmptyDataset(f"Series for beam {self.beam_id!r} must hold at least one value")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(f"Series for beam {self.beam_id!r} contains non-finite values")
        if np.any(values < 0):
            raise NegativeValue(f"Series for beam {self.beam_id!r} contains negative traffic")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'start_time', int(self.start_time))

    def __len__(self):
        return self.values.size

    @property
    def end_time(self) -> int:
        """Epoch hour one past the last sample"""
        return self.start_time + len(self)

    def timestamps(self) -> np.ndarray:
        return np.arange(self.start_time, self.end_time, dtype=np.int64)

    def slice_until(self, t: int) -> 'TrafficSeries':
        """Samples strictly before epoch hour t"""
        n = t - self.start_time
        if n < 1:
            raise ValidationError(f"No samples of beam {self.beam_id!r} before hour {t}")
        return TrafficSeries(self.beam_id, self.start_time, self.values[:n])

    def between(self, start: int, stop: int) -> np.ndarray:
        """Values for epoch hours in [start, stop)"""
        lo, hi = start - self.start_time, stop - self.start_time
        if lo < 0 or hi > len(self) or hi <= lo:
            raise ValidationError(
                f"Hours [{start}, {stop}) outside series of beam {self.beam_id!r}"
            )
        return self.values[lo:hi]


@dataclass(frozen=True)
class Dataset:
    """Aligned hourly series, one per beam, sorted by beam_id"""
    series: Tuple[TrafficSeries, ...]

    def __post_init__(self):
        series = tuple(sorted(self.series, key=lambda s: s.beam_id))
        if not series:
            raise EmptyDataset("Dataset must contain at least one series")
        ids = [s.beam_id for s in series]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"Duplicate beam ids in dataset: {ids}")
        lengths = {len(s) for s in series}
        if len(lengths) != 1:
            raise UnequalSeriesLength(
                f"All beams must have the same length, got {sorted(lengths)}"
            )
        starts = {s.start_time for s in series}
        if len(starts) != 1:
            raise MisalignedSeries(f"All beams must share a start time, got {sorted(starts)}")
        object.__setattr__(self, 'series', series)

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def beam_ids(self) -> List[str]:
        return [s.beam_id for s in self.series]

    @property
    def length(self) -> int:
        return len(self.series[0])

    @property
    def start_time(self) -> int:
        return self.series[0].start_time

    @property
    def end_time(self) -> int:
        return self.series[0].end_time

    def get(self, beam_id: str) -> TrafficSeries:
        for s in self.series:
            if s.beam_id == beam_id:
                return s
        raise KeyError(beam_id)

    def slice_until(self, t: int) -> 'Dataset':
        """Telemetry visible at origin t: every sample with time < t"""
        return Dataset(tuple(s.slice_until(t) for s in self.series))


@dataclass(frozen=True)
class ForecastWindow:
    """A (context, horizon truth) pair cut from contiguous hours of one series"""
    beam_id: str
    context: np.ndarray
    horizon_truth: np.ndarray
    origin_time: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'context', _frozen_array(self.context))
        object.__setattr__(self, 'horizon_truth', _frozen_array(self.horizon_truth))


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValidationError(f"NormStats.std must be positive, got {self.std}")


@dataclass
class SyntheticSpec:
    """
    Parameters of the synthetic multi-beam traffic model

    value(t) = max(0, base_load + diurnal_amplitude*sin(2pi(t + phase)/24)
                   + weekly_amplitude*sin(2pi t/168) + AR(1) noise + bursts)

    `noise_std` is the stationary standard deviation of the AR(1) component.
    Bursts arrive as a Poisson process (`burst_rate` per day and beam) with
    exponentially distributed heights (mean `burst_scale`) decaying with time
    constant `burst_decay_hours`. When `phase_offsets` is None the per-beam
    diurnal phases are drawn uniformly from [0, 24) hours.
    """
    n_beams: int = 6
    n_days: int = 38
    base_load: float = 100.0
    diurnal_amplitude: float = 40.0
    weekly_amplitude: float = 10.0
    noise_ar_coeff: float = 0.6
    noise_std: float = 8.0
    burst_rate: float = 0.3
    burst_scale: float = 40.0
    burst_decay_hours: float = 3.0
    phase_offsets: Optional[List[float]] = None
    start_time: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ('base_load', 'diurnal_amplitude', 'weekly_amplitude', 'noise_ar_coeff',
                     'noise_std', 'burst_rate', 'burst_scale', 'burst_decay_hours'):
            if not is_number(getattr(self, name)):
                raise ConfigError(f"{name} must be a number, got {getattr(self, name)!r}")
        if not (isinstance(self.start_time, int) and not isinstance(self.start_time, bool)):
            raise ConfigError(f"start_time must be an integer, got {self.start_time!r}")
        if not (isinstance(self.n_beams, int) and self.n_beams >= 1):
            raise ConfigError(f"n_beams must be a positive integer, got {self.n_beams!r}")
        if not (isinstance(self.n_days, int) and self.n_days >= 1):
            raise ConfigError(f"n_days must be a positive integer, got {self.n_days!r}")
        if not self.base_load > 0:
            raise ConfigError(f"base_load must be > 0, got {self.base_load}")
        for name in ('diurnal_amplitude', 'weekly_amplitude', 'noise_std',
                     'burst_rate', 'burst_scale'):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.noise_ar_coeff < 1:
            raise ConfigError(f"noise_ar_coeff must lie in [0, 1), got {self.noise_ar_coeff}")
        if not self.burst_decay_hours > 0:
            raise ConfigError(f"burst_decay_hours must be > 0, got {self.burst_decay_hours}")
        if self.phase_offsets is not None and not (
                isinstance(self.phase_offsets, (list, tuple))
                and all(is_number(v) for v in self.phase_offsets)):
            raise ConfigError(f"phase_offsets must be a list of numbers, "
                              f"got {self.phase_offsets!r}")
        if self.phase_offsets is not None and len(self.phase_offsets) != self.n_beams:
            raise ConfigError(
                f"phase_offsets needs {self.n_beams} entries, got {len(self.phase_offsets)}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> 'SyntheticSpec':
        if not isinstance(data, dict):
            raise ConfigError(f"synthetic spec must be an object, got {type(data).__name__}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_csv(path) -> Dataset:
    """
    Load a `timestamp,beam_id,traffic` CSV file into a Dataset

    Args:
        path: Path to the CSV file. Timestamps are integer epoch hours or
            hour-aligned ISO-8601 strings.

    Returns:
        Dataset with one series per beam
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")

    logger.info(f"Loading traffic data: {path}")
    try:
        frame = pd.read_csv(path, dtype={'beam_id': str})
    except pd.errors.EmptyDataError as e:
        raise EmptyDataset(f"{path}: file is empty") from e

    columns = [c.strip() for c in frame.columns]
    missing = [c for c in CSV_COLUMNS if c not in columns]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    extra = [c for c in columns if c not in CSV_COLUMNS]
    if extra:
        raise UnexpectedColumn(f"{path}: unexpected column(s) {extra}")
    frame.columns = columns

    if frame.empty:
        raise EmptyDataset(f"{path}: no data rows")

    blank = frame['beam_id'].isna() | (frame['beam_id'].str.strip() == '')
    if blank.any():
        line = int(np.flatnonzero(blank.to_numpy())[0]) + 2
        raise ValidationError(f"{path}: missing beam_id on line {line}")

    frame['timestamp'] = _parse_timestamps(frame['timestamp'], path)
    traffic = pd.to_numeric(frame['traffic'], errors='coerce').to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(traffic)):
        raise NonFiniteValue(f"{path}: traffic column has missing or non-numeric values")
    if np.any(traffic < 0):
        raise NegativeValue(f"{path}: traffic column has negative values")
    frame['traffic'] = traffic

    frame = frame.sort_values(['beam_id', 'timestamp'], kind='mergesort')
    series = []
    for beam_id, group in frame.groupby('beam_id', sort=True):
        hours = group['timestamp'].to_numpy()
        steps = np.diff(hours)
        if np.any(steps != 1):
            bad = int(hours[1:][steps != 1][0])
            raise NonHourlyGap(f"{path}: beam {beam_id!r} is not hourly around hour {bad}")
        series.append(TrafficSeries(str(beam_id), int(hours[0]), group['traffic'].to_numpy()))

    dataset = Dataset(tuple(series))
    logger.info(f"Loaded {len(dataset)} beams x {dataset.length} hours")
    return dataset


def _parse_timestamps(column: pd.Series, path) -> np.ndarray:
    numeric = pd.to_numeric(column, errors='coerce')
    if numeric.notna().all():
        values = numeric.to_numpy(dtype=np.float64)
        if np.any(values != np.round(values)):
            raise ValidationError(f"{path}: integer epoch-hour timestamps expected")
        return values.astype(np.int64)

    try:
        parsed = pd.to_datetime(column, utc=True)
    except (ValueError, TypeError) as e:
        raise ValidationError(f"{path}: unparseable timestamps ({e})") from e
    if (parsed.dt.minute != 0).any() or (parsed.dt.second != 0).any():
        raise NonHourlyGap(f"{path}: ISO timestamps must be hour-aligned")
    epoch = pd.Timestamp(0, tz='UTC')
    return ((parsed - epoch) // pd.Timedelta(hours=1)).to_numpy(dtype=np.int64)


def save_csv(dataset: Dataset, path) -> Path:
    """
    Write a Dataset as a `timestamp,beam_id,traffic` CSV with integer epoch hours

    Returns:
        Path to the written file
    """
    frames = [
        pd.DataFrame({
            'timestamp': s.timestamps(),
            'beam_id': s.beam_id,
            'traffic': s.values,
        })
        for s in dataset
    ]
    return write_csv(pd.concat(frames, ignore_index=True), path)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """
    Generate a deterministic multi-beam hourly traffic dataset

    Args:
        spec: Traffic model parameters
        seed: Non-negative integer seed; identical (spec, seed) give identical data

    Returns:
        Dataset of spec.n_beams series with spec.n_days * 24 hours each
    """
    spec.validate()
    rng = np.random.default_rng(check_seed(seed))
    n_hours = spec.n_days * HOURS_PER_DAY
    t = np.arange(n_hours, dtype=np.float64)

    if spec.phase_offsets is None:
        phases = rng.uniform(0.0, HOURS_PER_DAY, size=spec.n_beams)
    else:
        phases = np.asarray(spec.phase_offsets, dtype=np.float64)

    weekly = spec.weekly_amplitude * np.sin(2 * np.pi * t / HOURS_PER_WEEK)
    innovation_std = spec.noise_std * math.sqrt(1.0 - spec.noise_ar_coeff ** 2)

    series = []
    for b in range(spec.n_beams):
        diurnal = spec.diurnal_amplitude * np.sin(2 * np.pi * (t + phases[b]) / HOURS_PER_DAY)

        shocks = rng.standard_normal(n_hours)
        noise = np.zeros(n_hours)
        # start in the stationary distribution
        noise[0] = spec.noise_std * shocks[0]
        for i in range(1, n_hours):
            noise[i] = spec.noise_ar_coeff * noise[i - 1] + innovation_std * shocks[i]

        bursts = np.zeros(n_hours)
        n_bursts = rng.poisson(spec.burst_rate * spec.n_days)
        onsets = rng.integers(0, n_hours, size=n_bursts)
        heights = rng.exponential(spec.burst_scale, size=n_bursts)
        for onset, height in zip(onsets, heights):
            lag = t[onset:] - onset
            bursts[onset:] += height * np.exp(-lag / spec.burst_decay_hours)

        values = np.maximum(0.0, spec.base_load + diurnal + weekly + noise + bursts)
        series.append(TrafficSeries(f"beam_{b}", spec.start_time, values))

    dataset = Dataset(tuple(series))
    logger.info(f"Generated synthetic dataset: {spec.n_beams} beams x {n_hours} hours (seed {seed})")
    return dataset


def make_windows(ds: Dataset, context_len: int = DEFAULT_CONTEXT_LEN,
                 horizon: int = DEFAULT_HORIZON, stride: int = 1) -> List[ForecastWindow]:
    """
    Cut every series into (context, horizon truth) windows

    Windows of each series start at offsets 0, stride, 2*stride, ...; a series
    of length T yields floor((T - C - H) / stride) + 1 windows.
    """
    for name, value in (('context_len', context_len), ('horizon', horizon), ('stride', stride)):
        if not (isinstance(value, (int, np.integer)) and value >= 1):
            raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    total = context_len + horizon
    if total > ds.length:
        raise WindowTooLong(
            f"context_len + horizon = {total} exceeds series length {ds.length}"
        )

    windows = []
    for s in ds:
        for offset in range(0, ds.length - total + 1, stride):
            windows.append(ForecastWindow(
                beam_id=s.beam_id,
                context=s.values[offset:offset + context_len],
                horizon_truth=s.values[offset + context_len:offset + total],
                origin_time=s.start_time + offset + context_len,
            ))
    return windows


def window_arrays(windows: Sequence[ForecastWindow]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack windows into (N, C) context and (N, H) truth matrices"""
    contexts = np.stack([w.context for w in windows])
    truths = np.stack([w.horizon_truth for w in windows])
    return contexts, truths


def normalize(context) -> Tuple[np.ndarray, NormStats]:
    """
    Standardize a context window with its own sample statistics

    The sample standard deviation (n - 1 denominator) is floored at 1e-6 so
    constant contexts stay finite.
    """
    x = np.asarray(context, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("normalize expects a non-empty 1-D context")
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if std < STD_FLOOR:
        logger.debug("Context is (near) constant, std floored")
    stats = NormStats(mean, max(std, STD_FLOOR))
    return (x - stats.mean) / stats.std, stats


def normalize_batch(contexts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise `normalize` for an (N, C) matrix; returns (normalized, means, stds)"""
    contexts = np.asarray(contexts, dtype=np.float64)
    means = contexts.mean(axis=1)
    if contexts.shape[1] > 1:
        stds = np.maximum(contexts.std(axis=1, ddof=1), STD_FLOOR)
    else:
        stds = np.full(contexts.shape[0], STD_FLOOR)
    return (contexts - means[:, None]) / stds[:, None], means, stds


def denormalize(values, stats: NormStats) -> np.ndarray:
    """Map normalized values back to traffic units"""
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def is_number(value) -> bool:
    return isinstance(value, (int, float, np.number)) and not isinstance(value, (bool, np.bool_))


def is_count(value, allow_zero: bool = False) -> bool:
    """True for a (numpy) integer >= 1, or >= 0 with allow_zero; never for bools"""
    return (isinstance(value, (int, np.integer)) and not isinstance(value, bool)
            and value >= (0 if allow_zero else 1))


def check_seed(seed) -> int:
    """Return seed as an int, or raise ConfigError unless it is an integer in [0, 2**64)"""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)
