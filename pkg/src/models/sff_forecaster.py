"""
Simple feed-forward (SFF) probabilistic forecaster

An MLP maps a normalized context window to per-step Gaussian parameters
(mu, sigma) for the whole horizon at once and is trained by minimizing the
Gaussian negative log-likelihood. Forecasts yield closed-form quantiles and
Monte-Carlo sample paths.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.artifact_writer import read_json, write_json
from src.core.errors import (
    ConfigError, EmptyTrainingSet, InvalidProbability, NonPositiveSigma,
    ShapeMismatch, TrainingDiverged, ValidationError,
)
from src.core.timeseries import (
    ForecastWindow, check_seed, is_count, is_number, normalize, normalize_batch, window_arrays,
)
from src.models.nn_core import (
    AdamState, MLPConfig, ParamStore, adam_step, checkpoint_dict, clip_global_norm,
    init_params, mlp_backward, mlp_forward, parse_checkpoint,
)

logger = logging.getLogger('ntn_forecast.models.sff')

SIGMA_FLOOR = 1e-4
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
NORM_POLICY = 'per_window'
TABLE_PERCENTILES = (1, 5, 25, 50, 75, 95, 99)


def softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def gaussian_nll(mu, sigma, y):
    """
    Negative log-likelihood 0.5*ln(2*pi*sigma^2) + (y - mu)^2 / (2*sigma^2)

    Works element-wise on arrays.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nll = HALF_LOG_2PI + np.log(sigma) + (y - mu) ** 2 / (2.0 * sigma ** 2)
    return float(nll) if nll.ndim == 0 else nll


# Standard normal inverse CDF: rational approximation (relative error ~1e-9)
# refined by one Halley step on erfc, giving close to machine precision.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549671010135196e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _tail(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def check_probability(p) -> float:
    try:
        p = float(p)
    except (TypeError, ValueError) as e:
        raise InvalidProbability(f"Probability must be a number, got {p!r}") from e
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"Probability must lie in (0, 1), got {p}")
    return p


def inverse_normal_cdf(p: float) -> float:
    """z such that P(Z <= z) = p for a standard normal Z"""
    p = check_probability(p)
    if p < _P_LOW:
        x = _tail(math.sqrt(-2.0 * math.log(p)))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x = num / den
    else:
        x = -_tail(math.sqrt(-2.0 * math.log1p(-p)))

    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def derive_seed(seed: int, beam_id: str) -> int:
    """Per-beam seed: seed XOR a stable 64-bit hash of the beam id"""
    digest = hashlib.blake2b(beam_id.encode('utf-8'), digest_size=8).digest()
    return (check_seed(seed) ^ int.from_bytes(digest, 'big')) & (2 ** 64 - 1)


@dataclass(frozen=True)
class GaussianForecast:
    """Per-step Gaussian (mu, sigma) in traffic units for one beam and origin"""
    beam_id: str
    origin_time: int
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        sigma = np.array(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or mu.shape != sigma.shape:
            raise ShapeMismatch(f"mu {mu.shape} and sigma {sigma.shape} must be equal 1-D")
        if np.any(~(sigma > 0)):
            raise NonPositiveSigma(f"Forecast for beam {self.beam_id!r} has sigma <= 0")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, 'mu', mu)
        object.__setattr__(self, 'sigma', sigma)

    @property
    def horizon(self) -> int:
        return self.mu.size

    @property
    def point(self) -> np.ndarray:
        """The mean, used as the point forecast"""
        return self.mu

    def quantile(self, p: float) -> np.ndarray:
        return quantile_closed_form(self, p)


@dataclass(frozen=True)
class SamplePaths:
    """n x H matrix of sampled trajectories"""
    paths: np.ndarray
    seed: int

    def __post_init__(self):
        paths = np.array(self.paths, dtype=np.float64)
        if paths.ndim != 2 or paths.shape[0] < 1:
            raise ShapeMismatch(f"Sample paths must be an (n >= 1, H) matrix, got {paths.shape}")
        paths.setflags(write=False)
        object.__setattr__(self, 'paths', paths)

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> int:
        return self.paths.shape[1]


@dataclass
class SFFHyperParams:
    seed: int
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    hidden_dims: Tuple[int, ...] = (64, 64)
    clip_norm: float = 10.0
    val_fraction: float = 0.1
    patience: int = 20

    def __post_init__(self):
        check_seed(self.seed)
        if not (isinstance(self.hidden_dims, (list, tuple)) and self.hidden_dims
                and all(is_count(d) for d in self.hidden_dims)):
            raise ConfigError(f"hidden_dims must be a non-empty list of positive integers, "
                              f"got {self.hidden_dims!r}")
        self.hidden_dims = tuple(self.hidden_dims)
        if not is_count(self.epochs, allow_zero=True):
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not is_count(self.batch_size):
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        for name in ('lr', 'clip_norm'):
            if not (is_number(getattr(self, name)) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be a number > 0, got {getattr(self, name)!r}")
        if not (is_number(self.val_fraction) and 0 <= self.val_fraction < 1):
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction!r}")
        if not is_count(self.patience):
            raise ConfigError(f"patience must be a positive integer, got {self.patience!r}")

    @classmethod
    def from_dict(cls, data: dict) -> 'SFFHyperParams':
        if not isinstance(data, dict):
            raise ConfigError(f"SFF hyperparameters must be an object, got {type(data).__name__}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown SFF hyperparameter(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['hidden_dims'] = list(self.hidden_dims)
        return data


@dataclass
class SFFModel:
    """Trained SFF network plus everything needed to forecast with it"""
    config: MLPConfig
    params: ParamStore
    context_len: int
    horizon: int
    hyper: SFFHyperParams
    training_log: List[float] = field(default_factory=list)
    norm_policy: str = NORM_POLICY
    validation_log: List[float] = field(default_factory=list)

    def predict(self, context, beam_id='', origin_time=0) -> GaussianForecast:
        return predict_sff(self, context, beam_id, origin_time)

    def save(self, path):
        meta = {
            'context_len': self.context_len,
            'horizon': self.horizon,
            'norm_policy': self.norm_policy,
            'hyper': self.hyper.to_dict(),
            'validation_log': [float(v) for v in self.validation_log],
        }
        data = checkpoint_dict('sff', self.config, self.params, self.hyper.seed,
                               self.training_log, meta)
        logger.info(f"Saving SFF checkpoint: {path}")
        return write_json(data, path)

    @classmethod
    def load(cls, path) -> 'SFFModel':
        config, params, _, training_log, meta = parse_checkpoint(read_json(path), 'sff')
        return cls(config, params, meta['context_len'], meta['horizon'],
                   SFFHyperParams.from_dict(meta['hyper']), training_log, meta['norm_policy'],
                   list(meta.get('validation_log', [])))


def _split_head(out: np.ndarray, horizon: int):
    return out[..., :horizon], out[..., horizon:]


def nll_loss_and_grad(params: ParamStore, contexts: np.ndarray,
                      targets: np.ndarray) -> Tuple[float, ParamStore]:
    """
    Mean Gaussian NLL over batch and horizon for normalized data, with gradients

    Args:
        params: SFF network parameters (output dim 2H)
        contexts: (B, C) normalized contexts
        targets: (B, H) normalized horizon truth
    """
    horizon = targets.shape[1]
    out, cache = mlp_forward(params, contexts)
    mu, raw = _split_head(out, horizon)
    sigma = softplus(raw) + SIGMA_FLOOR
    resid = targets - mu
    n = targets.size
    loss = float(np.mean(HALF_LOG_2PI + np.log(sigma) + resid ** 2 / (2.0 * sigma ** 2)))

    d_mu = -resid / sigma ** 2 / n
    d_sigma = (1.0 / sigma - resid ** 2 / sigma ** 3) / n
    grad_out = np.concatenate([d_mu, d_sigma * _sigmoid(raw)], axis=1)
    return loss, mlp_backward(params, cache, grad_out)


def training_arrays(windows: Sequence[ForecastWindow], horizon: int):
    if not windows:
        raise EmptyTrainingSet("No training windows")
    try:
        contexts, truths = window_arrays(windows)
    except ValueError as e:
        raise ShapeMismatch(f"Training windows have inconsistent lengths: {e}") from e
    if truths.shape[1] != horizon:
        raise ShapeMismatch(f"Window horizon {truths.shape[1]} != requested horizon {horizon}")
    contexts_n, means, stds = normalize_batch(contexts)
    truths_n = (truths - means[:, None]) / stds[:, None]
    return contexts_n, truths_n


def minibatches(rng, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def split_validation(windows: Sequence[ForecastWindow], fraction: float,
                     horizon: int) -> Tuple[List[ForecastWindow], List[ForecastWindow]]:
    """
    Hold out the windows with the most recent origins for validation

    The last ceil(fraction * #origins) origins form the validation set.
    Training keeps only windows whose horizon ends before the first
    validation origin, so no training target overlaps a validation target.

    Returns:
        (training windows, validation windows); validation is empty when
        fraction is 0 or the split would leave nothing to train on
    """
    origins = sorted({w.origin_time for w in windows})
    n_val = math.ceil(fraction * len(origins))
    if n_val == 0 or n_val >= len(origins):
        return list(windows), []
    cutoff = origins[-n_val]
    train = [w for w in windows if w.origin_time + horizon <= cutoff]
    if not train:
        return list(windows), []
    return train, [w for w in windows if w.origin_time >= cutoff]


def mean_nll(params: ParamStore, contexts: np.ndarray, targets: np.ndarray) -> float:
    out, _ = mlp_forward(params, contexts)
    mu, raw = _split_head(out, targets.shape[1])
    sigma = softplus(raw) + SIGMA_FLOOR
    return float(np.mean(HALF_LOG_2PI + np.log(sigma) + (targets - mu) ** 2 / (2.0 * sigma ** 2)))


def train_sff(windows: Sequence[ForecastWindow], hyper: SFFHyperParams,
              horizon: int) -> SFFModel:
    """
    Train an SFF model on windows pooled across beams

    Each window is normalized with its own context statistics (target
    included); training minimizes the mean Gaussian NLL with Adam and
    global-norm gradient clipping. Deterministic in hyper.seed.

    With hyper.val_fraction > 0 the most recent windows are held out (see
    split_validation). Training stops once the validation NLL has not
    improved for hyper.patience epochs, and the parameters from the best
    validation epoch are returned; hyper.epochs is the cap.

    Args:
        windows: Training windows, all with the same context length
        hyper: Training hyperparameters
        horizon: Forecast horizon H

    Returns:
        Trained SFFModel with per-epoch mean NLL in training_log and, when
        a validation set was held out, validation NLL in validation_log
    """
    train_windows, val_windows = split_validation(windows, hyper.val_fraction, horizon)
    contexts, targets = training_arrays(train_windows, horizon)
    n, context_len = contexts.shape
    if val_windows:
        val_contexts, val_targets = training_arrays(val_windows, horizon)
    elif hyper.val_fraction > 0:
        logger.warning(f"Too few origins to hold out validation windows; "
                       f"training SFF for all {hyper.epochs} epochs")

    config = MLPConfig(context_len, hyper.hidden_dims, 2 * horizon)
    params = init_params(config, hyper.seed)
    state = AdamState.initial(params, lr=hyper.lr)
    rng = np.random.default_rng([hyper.seed, 1])

    logger.info(f"Training SFF on {n} windows ({len(val_windows)} held out, "
                f"C={context_len}, H={horizon}) for up to {hyper.epochs} epochs")
    training_log, validation_log = [], []
    best_params, best_epoch = params, 0
    for epoch in range(hyper.epochs):
        total = 0.0
        for idx in minibatches(rng, n, hyper.batch_size):
            loss, grads = nll_loss_and_grad(params, contexts[idx], targets[idx])
            if not math.isfinite(loss) or not grads.is_finite():
                raise TrainingDiverged(f"SFF loss became non-finite in epoch {epoch}")
            grads, _ = clip_global_norm(grads, hyper.clip_norm)
            params, state = adam_step(params, grads, state)
            total += loss * idx.size
        training_log.append(total / n)
        logger.debug(f"SFF epoch {epoch + 1}/{hyper.epochs}: mean NLL {training_log[-1]:.5f}")
        if not val_windows:
            best_params = params
            continue

        validation_log.append(mean_nll(params, val_contexts, val_targets))
        if validation_log[-1] < min(validation_log[:-1], default=math.inf):
            best_params, best_epoch = params, epoch + 1
        elif epoch + 1 - best_epoch >= hyper.patience:
            logger.info(f"SFF validation NLL stalled; stopping after epoch {epoch + 1}")
            break

    if training_log:
        logger.info(f"SFF training finished: NLL {training_log[0]:.4f} -> {training_log[-1]:.4f}")
    if validation_log and best_epoch:
        logger.info(f"Keeping SFF parameters from epoch {best_epoch} "
                    f"(validation NLL {validation_log[best_epoch - 1]:.4f})")
    return SFFModel(config, best_params, context_len, horizon, hyper, training_log,
                    validation_log=validation_log)


def _check_context(model, context) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 1 or context.size != model.context_len:
        raise ShapeMismatch(
            f"Context must have {model.context_len} values, got shape {context.shape}"
        )
    if not np.all(np.isfinite(context)):
        raise ValidationError("Context contains non-finite values")
    return context


def predict_sff(model: SFFModel, context, beam_id: str = '',
                origin_time: int = 0) -> GaussianForecast:
    """
    Gaussian forecast for one context window, in traffic units

    Args:
        model: Trained SFFModel
        context: The C most recent hourly values
        beam_id: Beam the context belongs to
        origin_time: Epoch hour of the first forecast step
    """
    context = _check_context(model, context)
    x, stats = normalize(context)
    out, _ = mlp_forward(model.params, x)
    mu_n, raw = _split_head(out, model.horizon)
    sigma_n = softplus(raw) + SIGMA_FLOOR
    return GaussianForecast(beam_id, int(origin_time),
                            mu_n * stats.std + stats.mean, sigma_n * stats.std)


def predict_sff_batch(model: SFFModel, contexts, beam_ids: Sequence[str],
                      origin_times: Sequence[int]) -> List[GaussianForecast]:
    """Vectorized predict_sff over an (N, C) matrix of contexts"""
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[1] != model.context_len:
        raise ShapeMismatch(f"Contexts must be (N, {model.context_len}), got {contexts.shape}")
    if not len(beam_ids) == len(origin_times) == contexts.shape[0]:
        raise ShapeMismatch(f"{contexts.shape[0]} contexts need as many beam ids and origin times, "
                            f"got {len(beam_ids)} and {len(origin_times)}")
    x, means, stds = normalize_batch(contexts)
    out, _ = mlp_forward(model.params, x)
    mu_n, raw = _split_head(out, model.horizon)
    mu = mu_n * stds[:, None] + means[:, None]
    sigma = (softplus(raw) + SIGMA_FLOOR) * stds[:, None]
    return [GaussianForecast(b, int(t), mu[i], sigma[i])
            for i, (b, t) in enumerate(zip(beam_ids, origin_times))]


def quantile_closed_form(f: GaussianForecast, p: float) -> np.ndarray:
    """Per-step quantile mu + z(p) * sigma"""
    z = inverse_normal_cdf(p)
    return f.mu + z * f.sigma


def sample_paths(f: GaussianForecast, n: int, seed: int) -> SamplePaths:
    """
    Draw n independent trajectories, step t ~ Normal(mu_t, sigma_t)

    Standard normals come from the Box-Muller transform of uniforms drawn
    from a seeded PCG64 generator.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValidationError(f"Number of sample paths must be >= 1, got {n!r}")
    rng = np.random.default_rng(check_seed(seed))
    total = n * f.horizon
    pairs = (total + 1) // 2
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:total]
    return SamplePaths(f.mu + f.sigma * z.reshape(n, f.horizon), int(seed))


def forecast_table(forecasts: Sequence[GaussianForecast],
                   percentiles: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Rows `beam_id,origin_time,step,mu,sigma,pXX...`; step counts hours ahead from 1

    Args:
        forecasts: Forecasts to tabulate
        percentiles: Integer percentiles to include (defaults to 1,5,25,50,75,95,99;
            pass range(1, 100) for the full 1st-99th set)
    """
    percentiles = TABLE_PERCENTILES if percentiles is None else tuple(percentiles)
    z = {p: inverse_normal_cdf(p / 100.0) for p in percentiles}
    frames = []
    for f in forecasts:
        columns = {
            'beam_id': f.beam_id,
            'origin_time': f.origin_time,
            'step': np.arange(1, f.horizon + 1),
            'mu': f.mu,
            'sigma': f.sigma,
        }
        for p in percentiles:
            columns[f'p{p:02d}'] = f.mu + z[p] * f.sigma
        frames.append(pd.DataFrame(columns))
    return pd.concat(frames, ignore_index=True)


def forecasts_from_table(frame: pd.DataFrame) -> List[GaussianForecast]:
    """Rebuild GaussianForecasts from a forecast table"""
    missing = {'beam_id', 'origin_time', 'step', 'mu', 'sigma'} - set(frame.columns)
    if missing:
        raise ValidationError(f"Forecast table lacks column(s) {sorted(missing)}")
    forecasts = []
    for (beam_id, origin), group in frame.groupby(['beam_id', 'origin_time'], sort=True):
        group = group.sort_values('step')
        forecasts.append(GaussianForecast(str(beam_id), int(origin),
                                          group['mu'].to_numpy(), group['sigma'].to_numpy()))
    return forecasts
