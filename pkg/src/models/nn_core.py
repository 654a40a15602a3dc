"""
Minimal neural network toolkit in numpy: dense ReLU networks, an LSTM with
backpropagation through time, the Adam optimizer and a finite-difference
gradient checker

All arrays are float64. Forward passes accept a single example or a batch with
a leading batch axis; backward passes return gradients summed over the batch.
"""
import logging
from dataclasses import dataclass, asdict
from typing import Callable, Dict, Iterator, Optional, Tuple, Union

import numpy as np

from src.core.errors import ConfigError, EmptySequence, ShapeMismatch
from src.core.timeseries import check_seed

logger = logging.getLogger('ntn_forecast.models.nn_core')


class ParamStore:
    """
    Named float64 arrays (weight matrices and bias vectors)

    Value semantics: constructing or copying a store copies its arrays, and
    the public API never mutates a store in place.
    """

    def __init__(self, arrays: Dict[str, np.ndarray]):
        self._arrays = {
            name: np.array(value, dtype=np.float64, copy=True)
            for name, value in arrays.items()
        }

    def __getitem__(self, name) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __repr__(self):
        shapes = ', '.join(f"{k}{v.shape}" for k, v in self._arrays.items())
        return f"ParamStore({shapes})"

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def copy(self) -> 'ParamStore':
        return ParamStore(self._arrays)

    def zeros_like(self) -> 'ParamStore':
        return ParamStore({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> 'ParamStore':
        return ParamStore({k: fn(v) for k, v in self._arrays.items()})

    def check_aligned(self, other: 'ParamStore', what='gradients'):
        if self.shapes != other.shapes or self.names() != other.names():
            raise ShapeMismatch(f"{what} do not match parameters: {other!r} vs {self!r}")

    def equals(self, other: 'ParamStore') -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[k], other[k]) for k in self))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._arrays.values())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(v * v) for v in self._arrays.values())))

    def to_dict(self) -> dict:
        """Flat row-major arrays with their shapes, for JSON checkpoints"""
        return {
            k: {'shape': list(v.shape), 'data': v.ravel().tolist()}
            for k, v in self._arrays.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ParamStore':
        arrays = {}
        for name, entry in data.items():
            flat = np.asarray(entry['data'], dtype=np.float64)
            shape = tuple(entry['shape'])
            if flat.size != int(np.prod(shape, dtype=np.int64)):
                raise ShapeMismatch(f"Parameter {name!r}: {flat.size} values for shape {shape}")
            arrays[name] = flat.reshape(shape)
        return cls(arrays)


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    activation: str = 'relu'

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if not all(isinstance(d, (int, np.integer)) and d >= 1 for d in dims):
            raise ConfigError(f"MLP dimensions must be positive integers, got {dims}")
        if self.activation != 'relu':
            raise ConfigError(f"Unsupported activation: {self.activation!r}")

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['hidden_dims'] = list(self.hidden_dims)
        data['kind'] = 'mlp'
        return data


@dataclass(frozen=True)
class LSTMConfig:
    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self):
        dims = (self.input_dim, self.hidden_dim, self.output_dim)
        if not all(isinstance(d, (int, np.integer)) and d >= 1 for d in dims):
            raise ConfigError(f"LSTM dimensions must be positive integers, got {dims}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['kind'] = 'lstm'
        return data


def config_from_dict(data: dict) -> Union[MLPConfig, LSTMConfig]:
    data = dict(data)
    kind = data.pop('kind', None)
    if kind == 'mlp':
        return MLPConfig(**data)
    if kind == 'lstm':
        return LSTMConfig(**data)
    raise ConfigError(f"Unknown network kind: {kind!r}")


def _glorot(rng, rows, cols) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_params(config: Union[MLPConfig, LSTMConfig], seed: int) -> ParamStore:
    """
    Glorot-uniform weights and zero biases, deterministic in `seed`

    LSTM parameters: W_x (4H, D), W_h (4H, H), b (4H) in gate order
    input, forget, candidate, output, with the forget-gate bias set to 1;
    plus the output head W_out (O, H), b_out (O).
    """
    rng = np.random.default_rng(check_seed(seed))

    if isinstance(config, MLPConfig):
        arrays = {}
        dims = config.layer_dims
        for layer in range(len(dims) - 1):
            arrays[f'W{layer}'] = _glorot(rng, dims[layer + 1], dims[layer])
            arrays[f'b{layer}'] = np.zeros(dims[layer + 1])
        return ParamStore(arrays)

    if isinstance(config, LSTMConfig):
        h = config.hidden_dim
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0
        return ParamStore({
            'W_x': _glorot(rng, 4 * h, config.input_dim),
            'W_h': _glorot(rng, 4 * h, h),
            'b': bias,
            'W_out': _glorot(rng, config.output_dim, h),
            'b_out': np.zeros(config.output_dim),
        })

    raise ConfigError(f"Unsupported network config: {config!r}")


# Dense network

def _mlp_layers(params: ParamStore) -> int:
    n = 0
    while f'W{n}' in params:
        n += 1
    return n


def mlp_forward(params: ParamStore, x) -> Tuple[np.ndarray, dict]:
    """
    Affine/ReLU network; the output layer is linear

    Args:
        params: Parameters from init_params(MLPConfig)
        x: Input vector (input_dim,) or batch (B, input_dim)

    Returns:
        Output with the same leading shape as x, and the cache for mlp_backward
    """
    x = np.asarray(x, dtype=np.float64)
    n_layers = _mlp_layers(params)
    if x.ndim not in (1, 2) or x.shape[-1] != params['W0'].shape[1]:
        raise ShapeMismatch(
            f"MLP expects input dim {params['W0'].shape[1]}, got shape {x.shape}"
        )
    batched = x.ndim == 2
    a = x if batched else x[None, :]

    inputs, pre = [], []
    for layer in range(n_layers):
        z = a @ params[f'W{layer}'].T + params[f'b{layer}']
        inputs.append(a)
        pre.append(z)
        a = np.maximum(z, 0.0) if layer < n_layers - 1 else z

    cache = {'inputs': inputs, 'pre': pre, 'batched': batched}
    return (a if batched else a[0]), cache


def mlp_backward(params: ParamStore, cache: dict, grad_y) -> ParamStore:
    """Exact gradients of <grad_y, y> for every parameter, summed over the batch"""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    dz = grad_y if cache['batched'] else grad_y[None, :]
    if dz.shape != cache['pre'][-1].shape:
        raise ShapeMismatch(
            f"grad_y shape {grad_y.shape} does not match network output {cache['pre'][-1].shape}"
        )

    grads = {}
    for layer in reversed(range(len(cache['pre']))):
        grads[f'W{layer}'] = dz.T @ cache['inputs'][layer]
        grads[f'b{layer}'] = dz.sum(axis=0)
        if layer > 0:
            dz = (dz @ params[f'W{layer}']) * (cache['pre'][layer - 1] > 0)

    return ParamStore({name: grads[name] for name in params})


# LSTM

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _as_sequence(sequence, input_dim) -> Tuple[np.ndarray, bool]:
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 0:
        raise ShapeMismatch("LSTM input must be a sequence, got a scalar")
    if seq.size == 0 or seq.shape[0] == 0:
        raise EmptySequence("LSTM input sequence is empty")
    if seq.ndim == 1 and input_dim == 1:
        seq = seq[:, None]
    if seq.ndim == 2:
        seq, batched = seq[:, None, :], False
    elif seq.ndim == 3:
        batched = True
    else:
        raise ShapeMismatch(f"Unsupported LSTM input shape {seq.shape}")
    if seq.shape[2] != input_dim:
        raise ShapeMismatch(f"LSTM expects input dim {input_dim}, got {seq.shape[2]}")
    return seq, batched


def lstm_forward(params: ParamStore, sequence) -> Tuple[np.ndarray, np.ndarray, dict]:
    """
    Run the LSTM recurrence from zero state and apply the output head to h_T

    Args:
        params: Parameters from init_params(LSTMConfig)
        sequence: (T, D) steps, or (T, B, D) for a batch; a 1-D sequence is
            accepted when D == 1

    Returns:
        Hidden states (T, H) or (T, B, H), output W_out h_T + b_out, and the cache
    """
    seq, batched = _as_sequence(sequence, params['W_x'].shape[1])
    n_steps, batch = seq.shape[0], seq.shape[1]
    h_dim = params['W_h'].shape[1]

    # input projections for every step at once; only the recurrence is sequential
    xz = seq @ params['W_x'].T + params['b']
    h = np.zeros((batch, h_dim))
    c = np.zeros((batch, h_dim))
    steps = []
    hs = np.empty((n_steps, batch, h_dim))
    for t in range(n_steps):
        z = xz[t] + h @ params['W_h'].T
        s = _sigmoid(z)
        i, f, o = s[:, :h_dim], s[:, h_dim:2 * h_dim], s[:, 3 * h_dim:]
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        steps.append((c_prev, i, f, g, o, tanh_c))
        hs[t] = h

    out = h @ params['W_out'].T + params['b_out']
    cache = {'seq': seq, 'hs': hs, 'steps': steps, 'h_last': h, 'batched': batched}
    if batched:
        return hs, out, cache
    return hs[:, 0, :], out[0], cache


def lstm_backward(params: ParamStore, cache: dict, grad_out) -> ParamStore:
    """Backpropagation through time of <grad_out, output>, summed over the batch"""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    d_out = grad_out if cache['batched'] else grad_out[None, :]
    expected = (cache['h_last'].shape[0], params['W_out'].shape[0])
    if d_out.shape != expected:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} does not match output {expected}")

    h_dim = params['W_h'].shape[1]
    grads = {name: np.zeros_like(params[name]) for name in params}
    grads['W_out'] = d_out.T @ cache['h_last']
    grads['b_out'] = d_out.sum(axis=0)

    steps = cache['steps']
    dzs = np.empty((len(steps), d_out.shape[0], 4 * h_dim))
    dh = d_out @ params['W_out']
    dc = np.zeros_like(dh)
    for t in reversed(range(len(steps))):
        c_prev, i, f, g, o, tanh_c = steps[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c ** 2)
        dz = dzs[t]
        dz[:, :h_dim] = dc * g * i * (1.0 - i)
        dz[:, h_dim:2 * h_dim] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * h_dim:3 * h_dim] = dc * i * (1.0 - g ** 2)
        dz[:, 3 * h_dim:] = do * o * (1.0 - o)
        dh = dz @ params['W_h']
        dc = dc * f

    hs = cache['hs']
    h_prev = np.concatenate([np.zeros_like(hs[:1]), hs[:-1]])
    grads['W_x'] = np.einsum('tbg,tbd->gd', dzs, cache['seq'])
    grads['W_h'] = np.einsum('tbg,tbh->gh', dzs, h_prev)
    grads['b'] = dzs.sum(axis=(0, 1))
    return ParamStore(grads)


# Optimization

@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates, step counter and hyperparameters"""
    m: ParamStore
    v: ParamStore
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(cls, params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> 'AdamState':
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)


def adam_step(params: ParamStore, grads: ParamStore,
              state: AdamState) -> Tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update; returns new (params, state)"""
    params.check_aligned(grads)
    params.check_aligned(state.m, 'Adam moments')

    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name in params:
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        new_params[name] = params[name] - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[name], new_v[name] = m, v

    new_state = AdamState(ParamStore(new_m), ParamStore(new_v), t,
                          state.lr, state.beta1, state.beta2, state.eps)
    return ParamStore(new_params), new_state


def clip_global_norm(grads: ParamStore, max_norm: float) -> Tuple[ParamStore, float]:
    """Rescale gradients so their joint L2 norm is at most max_norm"""
    norm = grads.global_norm()
    if norm > max_norm:
        scale = max_norm / norm
        return grads.map(lambda g: g * scale), norm
    return grads, norm


# Verification

LossAndGrad = Callable[[ParamStore], Tuple[float, ParamStore]]


def grad_check(loss_fn: LossAndGrad, params: ParamStore, eps: float = 1e-5,
               max_coords_per_param: Optional[int] = None, seed: int = 0) -> float:
    """
    Compare analytic gradients with central finite differences

    Args:
        loss_fn: Pure function params -> (scalar loss, analytic gradient store)
        params: Point at which to check
        eps: Finite-difference step
        max_coords_per_param: Check at most this many randomly chosen
            coordinates per array (all coordinates when None)
        seed: Seed for the coordinate sample

    Returns:
        Maximum relative error |a - n| / max(|a|, |n|, 1e-8) over checked coordinates
    """
    _, analytic = loss_fn(params)
    params.check_aligned(analytic)
    rng = np.random.default_rng(seed)

    worst = 0.0
    for name in params:
        coords = np.arange(params[name].size)
        if max_coords_per_param is not None and coords.size > max_coords_per_param:
            coords = np.sort(rng.choice(coords, size=max_coords_per_param, replace=False))
        for flat_index in coords:
            index = np.unravel_index(flat_index, params[name].shape)
            plus, minus = params.copy(), params.copy()
            plus._arrays[name][index] += eps
            minus._arrays[name][index] -= eps
            numeric = (loss_fn(plus)[0] - loss_fn(minus)[0]) / (2.0 * eps)
            a = analytic[name][index]
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)

    logger.debug(f"Gradient check over {params.size} parameters: max rel error {worst:.3e}")
    return float(worst)


# Checkpoints

CHECKPOINT_FIELDS = ('model', 'network', 'params', 'seed', 'training_log', 'meta')


def checkpoint_dict(model: str, config, params: ParamStore, seed: int,
                    training_log, meta: dict) -> dict:
    """JSON checkpoint: {model, network, params, seed, training_log, meta}"""
    return {
        'model': model,
        'network': config.to_dict(),
        'params': params.to_dict(),
        'seed': int(seed),
        'training_log': [float(v) for v in training_log],
        'meta': meta,
    }


def parse_checkpoint(data: dict, model: str):
    """Validate a checkpoint dict; returns (config, params, seed, training_log, meta)"""
    missing = [k for k in CHECKPOINT_FIELDS if k not in data]
    if missing:
        raise ConfigError(f"Checkpoint is missing field(s) {missing}")
    if data['model'] != model:
        raise ConfigError(f"Checkpoint holds a {data['model']!r} model, expected {model!r}")
    config = config_from_dict(data['network'])
    params = ParamStore.from_dict(data['params'])
    expected = init_params(config, 0).shapes
    if params.shapes != expected:
        raise ShapeMismatch(f"Checkpoint parameter shapes {params.shapes} do not match {expected}")
    return config, params, data['seed'], list(data['training_log']), data['meta']
