"""
Deterministic LSTM baseline forecaster

The normalized context is fed one scalar per step; the final hidden state
goes through an affine head emitting all H normalized predictions at once.
Trained with mean squared error. Point forecasts only: no quantiles.
"""
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import List, Sequence

import numpy as np
import pandas as pd

from src.core.artifact_writer import read_json, write_json
from src.core.errors import ConfigError, ShapeMismatch, TrainingDiverged, ValidationError
from src.core.timeseries import (
    ForecastWindow, check_seed, is_count, is_number, normalize, normalize_batch,
)
from src.models.nn_core import (
    AdamState, LSTMConfig, ParamStore, adam_step, checkpoint_dict, clip_global_norm,
    init_params, lstm_backward, lstm_forward, parse_checkpoint,
)
from src.models.sff_forecaster import NORM_POLICY, training_arrays, minibatches

logger = logging.getLogger('ntn_forecast.models.lstm')


@dataclass(frozen=True)
class PointForecast:
    """H point predictions in traffic units for one beam and origin"""
    beam_id: str
    origin_time: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValidationError("Point forecast values must be a finite 1-D array")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def horizon(self) -> int:
        return self.values.size

    @property
    def point(self) -> np.ndarray:
        return self.values


@dataclass
class LSTMHyperParams:
    seed: int
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    hidden_dim: int = 64
    clip_norm: float = 10.0

    def __post_init__(self):
        check_seed(self.seed)
        if not is_count(self.epochs, allow_zero=True):
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not is_count(self.batch_size):
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not is_count(self.hidden_dim):
            raise ConfigError(f"hidden_dim must be a positive integer, got {self.hidden_dim!r}")
        for name in ('lr', 'clip_norm'):
            if not (is_number(getattr(self, name)) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be a number > 0, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, data: dict) -> 'LSTMHyperParams':
        if not isinstance(data, dict):
            raise ConfigError(f"LSTM hyperparameters must be an object, got {type(data).__name__}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown LSTM hyperparameter(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LSTMModel:
    config: LSTMConfig
    params: ParamStore
    context_len: int
    horizon: int
    hyper: LSTMHyperParams
    training_log: List[float] = field(default_factory=list)
    norm_policy: str = NORM_POLICY

    def predict(self, context, beam_id='', origin_time=0) -> PointForecast:
        return predict_lstm(self, context, beam_id, origin_time)

    def save(self, path):
        meta = {
            'context_len': self.context_len,
            'horizon': self.horizon,
            'norm_policy': self.norm_policy,
            'hyper': self.hyper.to_dict(),
        }
        data = checkpoint_dict('lstm', self.config, self.params, self.hyper.seed,
                               self.training_log, meta)
        logger.info(f"Saving LSTM checkpoint: {path}")
        return write_json(data, path)

    @classmethod
    def load(cls, path) -> 'LSTMModel':
        config, params, _, training_log, meta = parse_checkpoint(read_json(path), 'lstm')
        return cls(config, params, meta['context_len'], meta['horizon'],
                   LSTMHyperParams.from_dict(meta['hyper']), training_log, meta['norm_policy'])


def mse_loss(pred, truth) -> float:
    """Mean of squared differences"""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"Prediction shape {pred.shape} != truth shape {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def mse_loss_and_grad(params: ParamStore, contexts: np.ndarray, targets: np.ndarray):
    """
    Mean squared error of the LSTM head on normalized data, with BPTT gradients

    Args:
        params: LSTM parameters (input dim 1, head dim H)
        contexts: (B, C) normalized contexts
        targets: (B, H) normalized horizon truth
    """
    sequence = contexts.T[:, :, None]
    _, out, cache = lstm_forward(params, sequence)
    loss = mse_loss(out, targets)
    grad_out = 2.0 * (out - targets) / targets.size
    return loss, lstm_backward(params, cache, grad_out)


def train_lstm(windows: Sequence[ForecastWindow], hyper: LSTMHyperParams,
               horizon: int) -> LSTMModel:
    """
    Train the LSTM baseline on windows pooled across beams

    Same per-window normalization as the SFF model; Adam with global-norm
    clipping; deterministic in hyper.seed.
    """
    contexts, targets = training_arrays(windows, horizon)
    n, context_len = contexts.shape

    config = LSTMConfig(1, hyper.hidden_dim, horizon)
    params = init_params(config, hyper.seed)
    state = AdamState.initial(params, lr=hyper.lr)
    rng = np.random.default_rng([hyper.seed, 1])

    logger.info(f"Training LSTM on {n} windows (C={context_len}, H={horizon}) "
                f"for {hyper.epochs} epochs")
    training_log = []
    for epoch in range(hyper.epochs):
        total = 0.0
        for idx in minibatches(rng, n, hyper.batch_size):
            loss, grads = mse_loss_and_grad(params, contexts[idx], targets[idx])
            if not math.isfinite(loss) or not grads.is_finite():
                raise TrainingDiverged(f"LSTM loss became non-finite in epoch {epoch}")
            grads, _ = clip_global_norm(grads, hyper.clip_norm)
            params, state = adam_step(params, grads, state)
            total += loss * idx.size
        training_log.append(total / n)
        logger.debug(f"LSTM epoch {epoch + 1}/{hyper.epochs}: mean MSE {training_log[-1]:.5f}")

    if training_log:
        logger.info(f"LSTM training finished: MSE {training_log[0]:.4f} -> {training_log[-1]:.4f}")
    return LSTMModel(config, params, context_len, horizon, hyper, training_log)


def predict_lstm(model: LSTMModel, context, beam_id: str = '',
                 origin_time: int = 0) -> PointForecast:
    """Denormalized H-step point forecast for one context window"""
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 1 or context.size != model.context_len:
        raise ShapeMismatch(
            f"Context must have {model.context_len} values, got shape {context.shape}"
        )
    if not np.all(np.isfinite(context)):
        raise ValidationError("Context contains non-finite values")
    x, stats = normalize(context)
    _, out, _ = lstm_forward(model.params, x[:, None])
    return PointForecast(beam_id, int(origin_time), out * stats.std + stats.mean)


def predict_lstm_batch(model: LSTMModel, contexts, beam_ids: Sequence[str],
                       origin_times: Sequence[int]) -> List[PointForecast]:
    """Vectorized predict_lstm over an (N, C) matrix of contexts"""
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[1] != model.context_len:
        raise ShapeMismatch(f"Contexts must be (N, {model.context_len}), got {contexts.shape}")
    if not len(beam_ids) == len(origin_times) == contexts.shape[0]:
        raise ShapeMismatch(f"{contexts.shape[0]} contexts need as many beam ids and origin times, "
                            f"got {len(beam_ids)} and {len(origin_times)}")
    x, means, stds = normalize_batch(contexts)
    _, out, _ = lstm_forward(model.params, x.T[:, :, None])
    values = out * stds[:, None] + means[:, None]
    return [PointForecast(b, int(t), values[i])
            for i, (b, t) in enumerate(zip(beam_ids, origin_times))]


def point_forecast_table(forecasts: Sequence[PointForecast]) -> pd.DataFrame:
    """Rows `beam_id,origin_time,step,value`; step counts hours ahead from 1"""
    frames = [
        pd.DataFrame({
            'beam_id': f.beam_id,
            'origin_time': f.origin_time,
            'step': np.arange(1, f.horizon + 1),
            'value': f.values,
        })
        for f in forecasts
    ]
    return pd.concat(frames, ignore_index=True)


def point_forecasts_from_table(frame: pd.DataFrame) -> List[PointForecast]:
    missing = {'beam_id', 'origin_time', 'step', 'value'} - set(frame.columns)
    if missing:
        raise ValidationError(f"Forecast table lacks column(s) {sorted(missing)}")
    forecasts = []
    for (beam_id, origin), group in frame.groupby(['beam_id', 'origin_time'], sort=True):
        group = group.sort_values('step')
        forecasts.append(PointForecast(str(beam_id), int(origin), group['value'].to_numpy()))
    return forecasts
