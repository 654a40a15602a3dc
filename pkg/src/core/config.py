"""
Configuration module: strict JSON configs for simulations and CLI runs

Unknown keys are rejected at every level; missing keys take their defaults.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from src.core.artifact_writer import read_json
from src.core.decision_engine import AllocationPolicy
from src.core.errors import ConfigError, IncompatiblePolicy
from src.core.timeseries import (
    DEFAULT_CONTEXT_LEN, DEFAULT_HORIZON, Dataset, SyntheticSpec, check_seed,
    generate_synthetic, load_csv,
)
from src.models.lstm_forecaster import LSTMHyperParams
from src.models.sff_forecaster import SFFHyperParams

logger = logging.getLogger('ntn_forecast.config')

MODEL_KINDS = ('sff', 'lstm')
SIM_MODES = ('rolling', 'case_study')
QUANTILE_SOURCES = ('ecdf', 'closed_form')


def reject_unknown(data: dict, allowed, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def _object(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(value).__name__}")
    return value


def _hyper_fields(data: dict, model: str) -> dict:
    """The model's hyperparameter object, seeded from the run seed"""
    return {'seed': data['seed'], **_object(data[model], model)}


def _positive_int(value, name, allow_zero=False):
    low = 0 if allow_zero else 1
    if isinstance(value, bool) or not isinstance(value, int) or value < low:
        raise ConfigError(f"{name} must be an integer >= {low}, got {value!r}")
    return value


@dataclass
class DataSource:
    """Either a synthetic spec plus its seed, or a CSV path"""
    synthetic: Optional[SyntheticSpec] = None
    seed: Optional[int] = None
    csv: Optional[str] = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ConfigError("data: give exactly one of 'synthetic' or 'csv'")
        if self.synthetic is not None:
            if self.seed is None:
                raise ConfigError("data: a synthetic source needs an explicit 'seed'")
            check_seed(self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> 'DataSource':
        reject_unknown(data, ('synthetic', 'seed', 'csv'), 'data')
        spec = data.get('synthetic')
        if data.get('csv') is not None and not isinstance(data['csv'], str):
            raise ConfigError(f"data.csv must be a path string, got {data['csv']!r}")
        return cls(
            synthetic=SyntheticSpec.from_dict(spec) if spec is not None else None,
            seed=data.get('seed'),
            csv=data.get('csv'),
        )

    def to_dict(self) -> dict:
        if self.csv is not None:
            return {'csv': self.csv}
        return {'synthetic': self.synthetic.to_dict(), 'seed': self.seed}

    def load(self) -> Dataset:
        if self.csv is not None:
            return load_csv(self.csv)
        return generate_synthetic(self.synthetic, self.seed)


@dataclass
class SimConfig:
    """
    Closed-loop simulation settings

    The last `n_eval_days` days are evaluated, one origin per day; each
    origin's horizon ends 24 h after the previous one, the last one at the
    end of the data. Models are trained on everything before the first
    origin and, with `retrain_every`, retrained on all data seen so far every
    that many evaluation days.
    """
    data: DataSource
    seed: int
    models: Tuple[str, ...] = MODEL_KINDS
    context_len: int = DEFAULT_CONTEXT_LEN
    horizon: int = DEFAULT_HORIZON
    train_stride: int = 1
    policies: Dict[str, AllocationPolicy] = field(default_factory=dict)
    policy_overrides: Dict[str, Dict[str, AllocationPolicy]] = field(default_factory=dict)
    n_eval_days: int = 1
    retrain_every: Optional[int] = None
    mode: str = 'rolling'
    n_paths: int = 1000
    quantile_source: str = 'ecdf'
    sff: Optional[SFFHyperParams] = None
    lstm: Optional[LSTMHyperParams] = None
    workers: int = 1
    record_wall_times: bool = False

    def __post_init__(self):
        check_seed(self.seed)
        self.models = tuple(self.models)
        if not self.models or len(set(self.models)) != len(self.models) \
                or any(m not in MODEL_KINDS for m in self.models):
            raise ConfigError(f"models must be a non-empty subset of {MODEL_KINDS}, got {self.models}")
        for name in ('context_len', 'horizon', 'train_stride', 'n_eval_days', 'n_paths', 'workers'):
            _positive_int(getattr(self, name), name)
        if self.retrain_every is not None:
            _positive_int(self.retrain_every, 'retrain_every')
        if self.mode not in SIM_MODES:
            raise ConfigError(f"mode must be one of {SIM_MODES}, got {self.mode!r}")
        if self.quantile_source not in QUANTILE_SOURCES:
            raise ConfigError(f"quantile_source must be one of {QUANTILE_SOURCES}")
        if not isinstance(self.record_wall_times, bool):
            raise ConfigError(
                f"record_wall_times must be true or false, got {self.record_wall_times!r}"
            )

        for model in list(self.policies) + list(self.policy_overrides):
            if model not in self.models:
                raise ConfigError(f"Policy given for model {model!r} which is not simulated")
        self.policies = {m: self.policies.get(m, AllocationPolicy()) for m in self.models}
        for model, overrides in self.policy_overrides.items():
            for beam_id, policy in overrides.items():
                self._check_compatible(model, policy, f"policy_overrides.{model}.{beam_id}")
        for model, policy in self.policies.items():
            self._check_compatible(model, policy, f"policies.{model}")

        if self.sff is None:
            self.sff = SFFHyperParams(seed=self.seed)
        if self.lstm is None:
            self.lstm = LSTMHyperParams(seed=self.seed)

    @staticmethod
    def _check_compatible(model, policy, where):
        if model == 'lstm' and policy.is_distributional:
            raise IncompatiblePolicy(f"{where}: {policy} needs a probabilistic model")

    def policy_for(self, model: str, beam_id: str) -> AllocationPolicy:
        return self.policy_overrides.get(model, {}).get(
            beam_id, self.policies.get(model, AllocationPolicy()))

    @classmethod
    def from_dict(cls, data: dict) -> 'SimConfig':
        reject_unknown(data, cls.__dataclass_fields__, 'config')
        if 'data' not in data or 'seed' not in data:
            raise ConfigError("config: 'data' and 'seed' are required")
        kwargs = dict(data)
        kwargs['data'] = DataSource.from_dict(data['data'])
        kwargs['policies'] = {
            m: AllocationPolicy.from_value(p)
            for m, p in _object(data.get('policies', {}), 'policies').items()
        }
        kwargs['policy_overrides'] = {
            m: {b: AllocationPolicy.from_value(p)
                for b, p in _object(beams, f"policy_overrides.{m}").items()}
            for m, beams in _object(data.get('policy_overrides', {}), 'policy_overrides').items()
        }
        if data.get('sff') is not None:
            kwargs['sff'] = SFFHyperParams.from_dict(_hyper_fields(data, 'sff'))
        if data.get('lstm') is not None:
            kwargs['lstm'] = LSTMHyperParams.from_dict(_hyper_fields(data, 'lstm'))
        if 'models' in data:
            models = data['models']
            if not (isinstance(models, list) and all(isinstance(m, str) for m in models)):
                raise ConfigError(f"models must be a list of model names, got {models!r}")
            kwargs['models'] = tuple(models)
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"config: {e}") from e

    def to_dict(self) -> dict:
        return {
            'data': self.data.to_dict(),
            'seed': self.seed,
            'models': list(self.models),
            'context_len': self.context_len,
            'horizon': self.horizon,
            'train_stride': self.train_stride,
            'policies': {m: str(p) for m, p in self.policies.items()},
            'policy_overrides': {
                m: {b: str(p) for b, p in beams.items()}
                for m, beams in self.policy_overrides.items()
            },
            'n_eval_days': self.n_eval_days,
            'retrain_every': self.retrain_every,
            'mode': self.mode,
            'n_paths': self.n_paths,
            'quantile_source': self.quantile_source,
            'sff': self.sff.to_dict(),
            'lstm': self.lstm.to_dict(),
            'workers': self.workers,
            'record_wall_times': self.record_wall_times,
        }


@dataclass
class RunConfig:
    """A CLI run: simulation settings plus the output directory"""
    sim: SimConfig
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        reject_unknown(data, set(SimConfig.__dataclass_fields__) | {'output_dir'}, 'config')
        data = dict(data)
        output_dir = data.pop('output_dir', None)
        return cls(SimConfig.from_dict(data), output_dir)

    @classmethod
    def from_file(cls, path) -> 'RunConfig':
        return cls.from_dict(read_config(path))


@dataclass
class TrainConfig:
    """Settings for training a single model outside a simulation"""
    seed: int
    context_len: int = DEFAULT_CONTEXT_LEN
    horizon: int = DEFAULT_HORIZON
    train_stride: int = 1
    sff: Optional[SFFHyperParams] = None
    lstm: Optional[LSTMHyperParams] = None

    def __post_init__(self):
        check_seed(self.seed)
        for name in ('context_len', 'horizon', 'train_stride'):
            _positive_int(getattr(self, name), name)
        if self.sff is None:
            self.sff = SFFHyperParams(seed=self.seed)
        if self.lstm is None:
            self.lstm = LSTMHyperParams(seed=self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        reject_unknown(data, cls.__dataclass_fields__, 'train config')
        if 'seed' not in data:
            raise ConfigError("train config: 'seed' is required")
        kwargs = dict(data)
        if data.get('sff') is not None:
            kwargs['sff'] = SFFHyperParams.from_dict(_hyper_fields(data, 'sff'))
        if data.get('lstm') is not None:
            kwargs['lstm'] = LSTMHyperParams.from_dict(_hyper_fields(data, 'lstm'))
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"train config: {e}") from e

    @classmethod
    def from_file(cls, path, seed: Optional[int] = None) -> 'TrainConfig':
        """Load a train config; an explicit seed overrides the file's"""
        data = {} if path is None else _object(read_config(path), str(path))
        if seed is not None:
            data['seed'] = seed
        return cls.from_dict(data)


def read_config(path) -> dict:
    path = Path(path)
    logger.info(f"Loading config: {path}")
    try:
        return read_json(path)
    except ValueError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


CONFIG_HELP = """\
Run config (JSON object; unknown keys are rejected):
  data              {"synthetic": {SyntheticSpec fields}, "seed": N} or {"csv": "path"}
  seed              integer, seeds training, sampling and everything else
  models            subset of ["sff", "lstm"]               (default both)
  context_len       hours of context                        (default 168)
  horizon           hours ahead                             (default 24)
  train_stride      hours between training windows          (default 1)
  policies          {"sff": "quantile:0.9", "lstm": "point"}  (default point)
  policy_overrides  {"sff": {"beam_3": "quantile:0.99"}}
  n_eval_days       evaluated days                          (default 1)
  retrain_every     retrain cadence in days, or null        (default null)
  mode              "rolling" or "case_study"               (default rolling)
  n_paths           sample paths behind the ECDF            (default 1000)
  quantile_source   "ecdf" or "closed_form"                 (default ecdf)
  sff               {epochs, batch_size, lr, hidden_dims, clip_norm,
                     val_fraction, patience}        (early stopping on held-out windows)
  lstm              {epochs, batch_size, lr, hidden_dim, clip_norm}
  workers           threads for per-beam decisions          (default 1)
  record_wall_times add wall-clock seconds to timings.json   (default false)
  output_dir        output directory for `simulate`
"""
