import hypothesis
import numpy as np
import pytest

from src.core.config import DataSource, SimConfig
from src.core.rapp_sim import AnalyticEngine
from src.core.timeseries import SyntheticSpec, generate_synthetic
from src.models.lstm_forecaster import LSTMHyperParams, PointForecast
from src.models.sff_forecaster import SFFHyperParams

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("ci")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow accuracy benchmarks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class OracleEngine(AnalyticEngine):
    """Forecasts the true future: a perfect-information test double"""
    name = 'oracle'

    def __init__(self, dataset, horizon):
        super().__init__()
        self.dataset = dataset
        self.horizon = horizon

    def fit(self, windows):
        self.training_logs.append([])

    def forecast(self, contexts, beam_ids, origin):
        return [PointForecast(b, origin, self.dataset.get(b).between(origin, origin + self.horizon))
                for b in beam_ids]


@pytest.fixture
def oracle_engine():
    return OracleEngine


@pytest.fixture
def small_spec():
    return SyntheticSpec(n_beams=2, n_days=6)


@pytest.fixture
def small_dataset(small_spec):
    return generate_synthetic(small_spec, seed=7)


@pytest.fixture
def tiny_sff():
    return SFFHyperParams(seed=3, epochs=2, batch_size=16, hidden_dims=(8,))


@pytest.fixture
def tiny_lstm():
    return LSTMHyperParams(seed=3, epochs=2, batch_size=16, hidden_dim=4)


@pytest.fixture
def sim_config_factory(tiny_sff, tiny_lstm):
    """SimConfig over a small synthetic source with tiny models"""
    def make(**overrides):
        values = dict(
            data=DataSource(synthetic=SyntheticSpec(n_beams=6, n_days=6), seed=11),
            seed=5,
            context_len=24,
            horizon=12,
            train_stride=6,
            n_paths=200,
            sff=tiny_sff,
            lstm=tiny_lstm,
        )
        values.update(overrides)
        return SimConfig(**values)
    return make
