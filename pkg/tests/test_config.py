import json

import pytest

from src.core.config import (
    DataSource, RunConfig, SimConfig, TrainConfig, read_config, reject_unknown,
)
from src.core.decision_engine import AllocationPolicy
from src.core.errors import ConfigError, IncompatiblePolicy
from src.core.timeseries import SyntheticSpec

BASE = {'data': {'synthetic': {'n_beams': 2, 'n_days': 3}, 'seed': 1}, 'seed': 4}


def with_keys(**extra):
    return {**BASE, **extra}


class TestSimConfig:
    def test_defaults(self):
        cfg = SimConfig.from_dict(BASE)
        assert cfg.models == ('sff', 'lstm')
        assert (cfg.context_len, cfg.horizon, cfg.n_paths) == (168, 24, 1000)
        assert cfg.policies == {'sff': AllocationPolicy(), 'lstm': AllocationPolicy()}
        assert cfg.sff.seed == 4 and cfg.lstm.seed == 4
        assert cfg.lstm.epochs == 100

    @pytest.mark.parametrize('data', [
        with_keys(learning_rate=0.1),
        with_keys(data={'synthetic': {'n_beams': 2}, 'seed': 1, 'path': 'x'}),
        with_keys(data={'synthetic': {'n_beams': 2, 'noise': 1.0}, 'seed': 1}),
        with_keys(sff={'epochs': 2, 'dropout': 0.1}),
        with_keys(policies={'sff': {'kind': 'quantile', 'p': 0.9, 'q': 1}}),
    ])
    def test_unknown_keys(self, data):
        with pytest.raises(ConfigError):
            SimConfig.from_dict(data)

    @pytest.mark.parametrize('data', [
        {'seed': 1},
        {'data': BASE['data']},
        with_keys(data={'seed': 1}),
        with_keys(data={'synthetic': {}}),
        with_keys(data={'synthetic': {}, 'seed': 1, 'csv': 'a.csv'}),
        with_keys(models=[]),
        with_keys(models=['sff', 'sff']),
        with_keys(models=['arima']),
        with_keys(horizon=0),
        with_keys(context_len=True),
        with_keys(retrain_every=0),
        with_keys(mode='online'),
        with_keys(quantile_source='kde'),
        with_keys(policies={'lstm': 'median'}),
        with_keys(models=['sff'], policies={'lstm': 'point'}),
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            SimConfig.from_dict(data)

    @pytest.mark.parametrize('data', [
        with_keys(policies='point'),
        with_keys(policies=['point']),
        with_keys(policies={'sff': 3}),
        with_keys(policies={'sff': {'kind': 'quantile', 'p': '0.9'}}),
        with_keys(policies={'sff': {'kind': 'headroom', 'factor': '0.2'}}),
        with_keys(policy_overrides={'sff': 'quantile:0.9'}),
        with_keys(policy_overrides=[1]),
        with_keys(sff={'lr': '0.01'}),
        with_keys(sff=[1]),
        with_keys(lstm='fast'),
        with_keys(lstm={'hidden_dim': '64'}),
        with_keys(data={'synthetic': {'base_load': '100'}, 'seed': 1}),
        with_keys(data={'synthetic': [1], 'seed': 1}),
        with_keys(data={'csv': 7}),
        with_keys(data='traffic.csv'),
        with_keys(models='sff'),
        with_keys(models=[['sff']]),
        with_keys(n_paths='1000'),
        with_keys(record_wall_times='yes'),
        {'data': BASE['data'], 'seed': '4'},
    ])
    def test_wrong_value_types(self, data):
        with pytest.raises(ConfigError):
            SimConfig.from_dict(data)

    def test_quantile_policy_needs_probabilistic_model(self):
        with pytest.raises(IncompatiblePolicy):
            SimConfig.from_dict(with_keys(policies={'lstm': 'quantile:0.9'}))
        with pytest.raises(IncompatiblePolicy):
            SimConfig.from_dict(with_keys(policy_overrides={'lstm': {'beam_0': 'quantile:0.5'}}))

    def test_policy_for(self):
        cfg = SimConfig.from_dict(with_keys(
            policies={'sff': 'quantile:0.9'},
            policy_overrides={'sff': {'beam_1': 'headroom:0.3'}},
        ))
        assert cfg.policy_for('sff', 'beam_0') == AllocationPolicy('quantile', p=0.9)
        assert cfg.policy_for('sff', 'beam_1') == AllocationPolicy('headroom', factor=0.3)
        assert cfg.policy_for('lstm', 'beam_1') == AllocationPolicy()
        assert cfg.policy_for('oracle', 'beam_1') == AllocationPolicy()

    def test_to_dict_reloads(self):
        cfg = SimConfig.from_dict(with_keys(
            models=['sff'], policies={'sff': 'quantile:0.95'}, n_eval_days=2, retrain_every=1,
            sff={'epochs': 3, 'hidden_dims': [4, 4]},
        ))
        assert SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_data_source(self):
        source = DataSource.from_dict({'synthetic': {'n_beams': 1, 'n_days': 2}, 'seed': 3})
        assert source.synthetic == SyntheticSpec(n_beams=1, n_days=2)
        assert source.load().length == 48


class TestRunConfig:
    def test_output_dir(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps(with_keys(output_dir='out')))
        run_cfg = RunConfig.from_file(path)
        assert run_cfg.output_dir == 'out'
        assert run_cfg.sim.seed == 4

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text('{not json')
        with pytest.raises(ConfigError):
            read_config(path)


class TestTrainConfig:
    def test_seed_override(self, tmp_path):
        path = tmp_path / 'train.json'
        path.write_text(json.dumps({'seed': 1, 'horizon': 6, 'sff': {'epochs': 5}}))
        cfg = TrainConfig.from_file(path, seed=9)
        assert cfg.seed == 9 and cfg.sff.seed == 9
        assert cfg.sff.epochs == 5
        assert cfg.horizon == 6

    def test_seed_only(self):
        cfg = TrainConfig.from_file(None, seed=2)
        assert cfg.context_len == 168
        assert cfg.lstm.seed == 2

    def test_seed_required(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_file(None)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({'seed': 1, 'n_paths': 10})

    @pytest.mark.parametrize('data', [
        {'seed': 1, 'sff': [1]},
        {'seed': 1, 'lstm': {'lr': 'fast'}},
        {'seed': 1, 'horizon': 2.5},
    ])
    def test_wrong_value_types(self, data):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(data)

    def test_file_must_hold_object(self, tmp_path):
        path = tmp_path / 'train.json'
        path.write_text('[1, 2]')
        with pytest.raises(ConfigError):
            TrainConfig.from_file(path, seed=1)


def test_reject_unknown_needs_object():
    with pytest.raises(ConfigError):
        reject_unknown(['a'], ('a',), 'data')
