import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.core.decision_engine import (
    AllocationPlan, AllocationPolicy, ProvisioningOutcome, QuantileGrid, account_provisioning,
    allocation_table, classify_steps, decide_allocation, default_probabilities, ecdf_quantiles,
    merge_outcomes, quantile_grid_table,
)
from src.core.errors import (
    ConfigError, IncompatiblePolicy, InvalidProbability, ShapeMismatch, ValidationError,
)
from src.models.lstm_forecaster import PointForecast
from src.models.sff_forecaster import GaussianForecast, SamplePaths, sample_paths

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
non_negative = st.floats(0, 1e3, allow_nan=False, allow_infinity=False)


class TestECDF:
    def test_four_samples(self):
        paths = SamplePaths(np.array([[3.0], [1.0], [4.0], [2.0]]), seed=0)
        grid = ecdf_quantiles(paths, [0.25, 0.5, 0.99])
        np.testing.assert_array_equal(grid.values[:, 0], [1.0, 2.0, 4.0])

    def test_single_sample(self):
        paths = SamplePaths(np.array([[7.0, 8.0]]), seed=0)
        grid = ecdf_quantiles(paths)
        assert np.all(grid.values[:, 0] == 7.0)
        assert np.all(grid.values[:, 1] == 8.0)

    def test_default_grid(self):
        probs = default_probabilities()
        assert probs.size == 99
        assert probs[0] == 0.01 and probs[-1] == 0.99

    def test_matches_closed_form(self):
        f = GaussianForecast('b', 0, [0.0], [1.0])
        probs = [0.05, 0.25, 0.5, 0.75, 0.95]
        grid = ecdf_quantiles(sample_paths(f, 10000, seed=42), probs)
        for p, row in zip(probs, grid.values):
            assert abs(row[0] - f.quantile(p)[0]) < 0.05

    @pytest.mark.parametrize('probs', [[0.0, 0.5], [0.5, 1.0], [0.6, 0.4], []])
    def test_invalid_probabilities(self, probs):
        paths = SamplePaths(np.zeros((3, 1)), seed=0)
        with pytest.raises(InvalidProbability):
            ecdf_quantiles(paths, probs)

    @given(samples=arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)),
                          elements=finite))
    def test_monotone_in_p(self, samples):
        grid = ecdf_quantiles(SamplePaths(samples, seed=0))
        assert np.all(np.diff(grid.values, axis=0) >= 0)

    def test_lookup_rounds_up(self):
        grid = QuantileGrid([0.5, 0.9], [[1.0], [2.0]])
        np.testing.assert_array_equal(grid.lookup(0.5), [1.0])
        np.testing.assert_array_equal(grid.lookup(0.6), [2.0])
        with pytest.raises(InvalidProbability):
            grid.lookup(0.95)

    def test_grid_must_be_monotone(self):
        with pytest.raises(ValidationError):
            QuantileGrid([0.1, 0.9], [[2.0], [1.0]])

    def test_grid_table(self):
        grid = ecdf_quantiles(SamplePaths(np.arange(20.0).reshape(10, 2), seed=0),
                              beam_id='b', origin_time=4)
        frame = quantile_grid_table([grid])
        assert list(frame.columns[:3]) == ['beam_id', 'origin_time', 'step']
        assert 'p01' in frame.columns and 'p99' in frame.columns
        assert len(frame) == 2

    def test_grid_table_fractional_percents(self):
        grid = QuantileGrid([0.25, 0.251, 0.5], [[1.0], [2.0], [3.0]])
        frame = quantile_grid_table([grid])
        assert list(frame.columns[3:]) == ['p25', 'p25.1', 'p50']
        assert list(frame.iloc[0, 3:]) == [1.0, 2.0, 3.0]

    def test_grid_table_rejects_indistinct_columns(self):
        grid = QuantileGrid([0.25, 0.25 + 1e-13], [[1.0], [2.0]])
        with pytest.raises(ValidationError):
            quantile_grid_table([grid])


class TestPolicy:
    @pytest.mark.parametrize('text, expected', [
        ('point', AllocationPolicy('point')),
        ('quantile:0.9', AllocationPolicy('quantile', p=0.9)),
        ('headroom:0.2', AllocationPolicy('headroom', factor=0.2)),
    ])
    def test_parse(self, text, expected):
        policy = AllocationPolicy.parse(text)
        assert policy == expected
        assert str(policy) == text

    @pytest.mark.parametrize('text', ['median', 'quantile', 'quantile:1.5', 'headroom:-1',
                                      'quantile:abc', 'point:3'])
    def test_parse_rejects(self, text):
        with pytest.raises((ConfigError, InvalidProbability)):
            AllocationPolicy.parse(text)

    def test_from_dict(self):
        assert AllocationPolicy.from_value({'kind': 'quantile', 'p': 0.95}).p == 0.95
        with pytest.raises(ConfigError):
            AllocationPolicy.from_value({'kind': 'point', 'extra': 1})


class TestDecide:
    def test_point_pass_through(self):
        plan = decide_allocation(PointForecast('b', 0, [10.0, 20.0]), AllocationPolicy())
        np.testing.assert_array_equal(plan.amounts, [10.0, 20.0])

    def test_gaussian_quantile(self):
        f = GaussianForecast('b', 0, [100.0, 100.0], [10.0, 10.0])
        plan = decide_allocation(f, AllocationPolicy('quantile', p=0.9))
        np.testing.assert_allclose(plan.amounts, [112.81552] * 2, atol=1e-5)
        assert plan.policy == 'quantile:0.9'

    def test_gaussian_point_uses_mean(self):
        f = GaussianForecast('b', 0, [5.0, 6.0], [1.0, 3.0])
        np.testing.assert_array_equal(decide_allocation(f, AllocationPolicy()).amounts, [5.0, 6.0])

    def test_headroom(self):
        plan = decide_allocation(PointForecast('b', 0, [10.0, 20.0]),
                                 AllocationPolicy('headroom', factor=0.5))
        np.testing.assert_allclose(plan.amounts, [15.0, 30.0])

    def test_clamp_negative(self):
        plan = decide_allocation(PointForecast('b', 0, [-5.0, 3.0]), AllocationPolicy())
        np.testing.assert_array_equal(plan.amounts, [0.0, 3.0])

    def test_quantile_on_point_forecast(self):
        with pytest.raises(IncompatiblePolicy):
            decide_allocation(PointForecast('b', 0, [1.0]), AllocationPolicy('quantile', p=0.9))

    def test_quantile_on_grid(self):
        grid = QuantileGrid([0.5, 0.9], [[1.0, 2.0], [3.0, 4.0]], beam_id='b', origin_time=7)
        plan = decide_allocation(grid, AllocationPolicy('quantile', p=0.9))
        np.testing.assert_array_equal(plan.amounts, [3.0, 4.0])
        assert (plan.beam_id, plan.origin_time) == ('b', 7)

    @given(p=st.floats(0.01, 0.99), q=st.floats(0.01, 0.99))
    def test_higher_quantile_never_allocates_less(self, p, q):
        f = GaussianForecast('b', 0, [50.0, 80.0, 0.0], [5.0, 20.0, 1.0])
        lo = decide_allocation(f, AllocationPolicy('quantile', p=min(p, q))).amounts
        hi = decide_allocation(f, AllocationPolicy('quantile', p=max(p, q))).amounts
        assert np.all(lo <= hi)


class TestAccounting:
    def test_mixed(self):
        plan = AllocationPlan('b', 0, [10.0, 20.0, 30.0])
        outcome = account_provisioning(plan, [12.0, 18.0, 30.0])
        assert (outcome.over_count, outcome.under_count, outcome.exact_count) == (1, 1, 1)
        assert outcome.over_rate == 0.5 and outcome.under_rate == 0.5
        assert outcome.over_volume == pytest.approx(2.0)
        assert outcome.under_volume == pytest.approx(2.0)

    def test_all_exact(self):
        outcome = account_provisioning(AllocationPlan('b', 0, [1.0, 2.0]), [1.0, 2.0])
        assert outcome.exact_count == 2
        assert outcome.over_rate == 0.0 and outcome.under_rate == 0.0
        assert outcome.over_volume == 0.0 and outcome.under_volume == 0.0

    def test_within_tolerance_is_exact(self):
        outcome = account_provisioning(AllocationPlan('b', 0, [1.0]), [1.0 + 1e-12])
        assert outcome.exact_count == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            account_provisioning(AllocationPlan('b', 0, [1.0, 2.0]), [1.0])

    @settings(max_examples=1000)
    @given(data=st.lists(st.tuples(non_negative, non_negative), min_size=1, max_size=48))
    def test_partition_and_rate_sum(self, data):
        alloc, actual = map(np.array, zip(*data))
        outcome = account_provisioning(AllocationPlan('b', 0, alloc), actual)
        assert outcome.total == len(data)
        if outcome.over_count + outcome.under_count:
            assert outcome.over_rate + outcome.under_rate == 1.0
        over, under, exact = classify_steps(alloc, actual)
        assert np.all(over.astype(int) + under.astype(int) + exact.astype(int) == 1)

    def test_merge(self):
        a = ProvisioningOutcome.from_counts(3, 1, 0, 5.0, 1.0)
        b = ProvisioningOutcome.from_counts(0, 2, 2, 0.0, 4.0)
        merged = merge_outcomes([a, b])
        assert (merged.over_count, merged.under_count, merged.exact_count) == (3, 3, 2)
        assert merged.over_rate == 0.5
        assert merged.under_volume == 5.0

    def test_allocation_table(self):
        plans = [AllocationPlan('b', 4, [1.0, 5.0, 2.0])]
        frame = allocation_table(plans, [[2.0, 4.0, 2.0]])
        assert list(frame['verdict']) == ['under', 'over', 'exact']
        assert list(frame['step']) == [1, 2, 3]

    def test_plan_rejects_negative(self):
        with pytest.raises(ValidationError):
            AllocationPlan('b', 0, [-1.0])


@pytest.mark.parametrize('p', [0.5, 0.9, 0.99])
def test_quantile_allocation_hits_risk_target(p):
    n = 5000
    f = GaussianForecast('b', 0, np.full(n, 100.0), np.full(n, 10.0))
    plan = decide_allocation(f, AllocationPolicy('quantile', p=p))
    draws = np.random.default_rng(42).normal(100.0, 10.0, n)
    outcome = account_provisioning(plan, draws)
    assert abs(outcome.under_count / n - (1 - p)) <= 0.03
