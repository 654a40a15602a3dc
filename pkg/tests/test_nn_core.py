import numpy as np
import pytest

from src.core.errors import ConfigError, EmptySequence, ShapeMismatch
from src.models.nn_core import (
    AdamState, LSTMConfig, MLPConfig, ParamStore, adam_step, checkpoint_dict, clip_global_norm,
    grad_check, init_params, lstm_backward, lstm_forward, mlp_backward, mlp_forward,
    parse_checkpoint,
)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def mlp_sum_loss(x, weights):
    """Loss <weights, y> so the analytic gradient is mlp_backward(weights)"""
    def loss_fn(params):
        y, cache = mlp_forward(params, x)
        return float(np.sum(weights * y)), mlp_backward(params, cache, weights)
    return loss_fn


def lstm_sum_loss(sequence, weights):
    def loss_fn(params):
        _, out, cache = lstm_forward(params, sequence)
        return float(np.sum(weights * out)), lstm_backward(params, cache, weights)
    return loss_fn


class TestParamStore:
    def test_value_semantics(self):
        source = {'w': np.ones(3)}
        store = ParamStore(source)
        source['w'][0] = 5.0
        assert store['w'][0] == 1.0
        copy = store.copy()
        copy['w'][1] = 7.0
        assert store['w'][1] == 1.0

    def test_dict_round_trip(self):
        store = init_params(MLPConfig(3, (4,), 2), seed=1)
        assert ParamStore.from_dict(store.to_dict()).equals(store)

    def test_bad_shape_in_dict(self):
        with pytest.raises(ShapeMismatch):
            ParamStore.from_dict({'w': {'shape': [2, 2], 'data': [1.0, 2.0]}})

    def test_global_norm(self):
        store = ParamStore({'a': [3.0], 'b': [4.0]})
        assert store.global_norm() == pytest.approx(5.0)


class TestInit:
    def test_deterministic(self):
        config = MLPConfig(5, (7, 3), 2)
        assert init_params(config, 9).equals(init_params(config, 9))
        assert not init_params(config, 9).equals(init_params(config, 10))

    def test_mlp_biases_zero_and_weights_bounded(self):
        config = MLPConfig(5, (7, 3), 2)
        params = init_params(config, 0)
        dims = config.layer_dims
        for layer in range(len(dims) - 1):
            assert np.all(params[f'b{layer}'] == 0.0)
            limit = np.sqrt(6.0 / (dims[layer] + dims[layer + 1]))
            assert np.all(np.abs(params[f'W{layer}']) <= limit)
            assert params[f'W{layer}'].shape == (dims[layer + 1], dims[layer])

    def test_lstm_forget_bias(self):
        params = init_params(LSTMConfig(2, 3, 4), 0)
        np.testing.assert_array_equal(params['b'], [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        assert np.all(params['b_out'] == 0.0)
        assert params['W_x'].shape == (12, 2)
        assert params['W_h'].shape == (12, 3)
        assert params['W_out'].shape == (4, 3)

    def test_unsupported_activation(self):
        with pytest.raises(ConfigError):
            MLPConfig(2, (2,), 1, activation='tanh')


class TestMLP:
    def test_zero_network(self):
        params = init_params(MLPConfig(3, (4,), 2), 0).map(np.zeros_like)
        y, _ = mlp_forward(params, [1.0, -2.0, 3.0])
        np.testing.assert_array_equal(y, [0.0, 0.0])

    def test_output_bias(self):
        params = init_params(MLPConfig(3, (4,), 2), 0).map(np.zeros_like)
        arrays = dict(params.items())
        arrays['b1'] = np.array([1.5, -2.0])
        y, _ = mlp_forward(ParamStore(arrays), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(y, [1.5, -2.0])

    def test_relu_kills_negative(self):
        params = ParamStore({'W0': [[1.0]], 'b0': [0.0], 'W1': [[1.0]], 'b1': [0.0]})
        y, _ = mlp_forward(params, [-3.0])
        np.testing.assert_array_equal(y, [0.0])

    def test_batch_matches_single(self):
        params = init_params(MLPConfig(4, (5,), 3), 2)
        x = np.random.default_rng(0).normal(size=(6, 4))
        batch, _ = mlp_forward(params, x)
        for i in range(6):
            single, _ = mlp_forward(params, x[i])
            np.testing.assert_allclose(batch[i], single)

    def test_wrong_input_dim(self):
        params = init_params(MLPConfig(4, (5,), 3), 2)
        with pytest.raises(ShapeMismatch):
            mlp_forward(params, np.ones(3))

    @pytest.mark.parametrize('x', [np.float64(1.0), np.ones((2, 2, 4))])
    def test_rejects_scalar_and_rank_three(self, x):
        params = init_params(MLPConfig(4, (5,), 3), 2)
        with pytest.raises(ShapeMismatch):
            mlp_forward(params, x)

    def test_zero_upstream_gradient(self):
        params = init_params(MLPConfig(4, (5,), 3), 2)
        _, cache = mlp_forward(params, np.ones(4))
        grads = mlp_backward(params, cache, np.zeros(3))
        assert all(np.all(g == 0.0) for _, g in grads.items())

    def test_linear_layer_closed_form(self):
        params = ParamStore({'W0': [[1.0, 2.0], [3.0, 4.0]], 'b0': [0.5, -0.5]})
        x = np.array([2.0, -1.0])
        grad_y = np.array([0.3, -0.7])
        _, cache = mlp_forward(params, x)
        grads = mlp_backward(params, cache, grad_y)
        np.testing.assert_allclose(grads['b0'], grad_y)
        np.testing.assert_allclose(grads['W0'], np.outer(grad_y, x))

    def test_backward_shape_mismatch(self):
        params = init_params(MLPConfig(4, (5,), 3), 2)
        _, cache = mlp_forward(params, np.ones(4))
        with pytest.raises(ShapeMismatch):
            mlp_backward(params, cache, np.ones(2))

    @pytest.mark.parametrize('seed', [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(MLPConfig(5, (6, 4), 3), seed)
        loss_fn = mlp_sum_loss(rng.normal(size=(4, 5)), rng.normal(size=(4, 3)))
        assert grad_check(loss_fn, params) < 1e-4


class TestLSTM:
    def test_zero_parameters(self):
        params = init_params(LSTMConfig(2, 3, 2), 0).map(np.zeros_like)
        hs, out, _ = lstm_forward(params, np.ones((5, 2)))
        np.testing.assert_array_equal(hs, np.zeros((5, 3)))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_single_step_by_hand(self):
        params = ParamStore({
            'W_x': [[0.5], [-0.3], [0.8], [0.2]],
            'W_h': [[0.1], [0.1], [0.1], [0.1]],
            'b': [0.0, 1.0, 0.0, -0.1],
            'W_out': [[2.0]],
            'b_out': [0.25],
        })
        x = 0.7
        # zero initial state: the forget gate multiplies c_0 = 0
        i, g, o = sigmoid(0.5 * x), np.tanh(0.8 * x), sigmoid(0.2 * x - 0.1)
        c = i * g
        h = o * np.tanh(c)
        hs, out, _ = lstm_forward(params, [x])
        assert hs[0, 0] == pytest.approx(h, abs=1e-12)
        assert out[0] == pytest.approx(2.0 * h + 0.25, abs=1e-12)

    def test_two_steps_by_hand(self):
        params = ParamStore({
            'W_x': [[0.5], [-0.3], [0.8], [0.2]],
            'W_h': [[0.4], [0.1], [-0.6], [0.3]],
            'b': [0.1, 1.0, 0.0, -0.1],
            'W_out': [[1.5]],
            'b_out': [-0.2],
        })
        h = c = 0.0
        for x in (1.2, -0.4):
            i = sigmoid(0.5 * x + 0.4 * h + 0.1)
            f = sigmoid(-0.3 * x + 0.1 * h + 1.0)
            g = np.tanh(0.8 * x - 0.6 * h)
            o = sigmoid(0.2 * x + 0.3 * h - 0.1)
            c = f * c + i * g
            h = o * np.tanh(c)
        _, out, _ = lstm_forward(params, [1.2, -0.4])
        assert out[0] == pytest.approx(1.5 * h - 0.2, abs=1e-12)

    def test_deterministic(self):
        params = init_params(LSTMConfig(1, 4, 3), 5)
        seq = np.linspace(-1, 1, 7)
        _, a, _ = lstm_forward(params, seq)
        _, b, _ = lstm_forward(params, seq)
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_single(self):
        params = init_params(LSTMConfig(2, 3, 2), 1)
        seqs = np.random.default_rng(1).normal(size=(4, 3, 2))
        _, batch_out, _ = lstm_forward(params, seqs)
        for b in range(3):
            _, single, _ = lstm_forward(params, seqs[:, b, :])
            np.testing.assert_allclose(batch_out[b], single)

    def test_empty_sequence(self):
        params = init_params(LSTMConfig(1, 2, 1), 0)
        with pytest.raises(EmptySequence):
            lstm_forward(params, np.zeros((0, 1)))

    def test_wrong_input_dim(self):
        params = init_params(LSTMConfig(2, 2, 1), 0)
        with pytest.raises(ShapeMismatch):
            lstm_forward(params, np.zeros((3, 3)))

    def test_scalar_input(self):
        params = init_params(LSTMConfig(1, 2, 1), 0)
        with pytest.raises(ShapeMismatch):
            lstm_forward(params, 1.5)

    def test_zero_upstream_gradient(self):
        params = init_params(LSTMConfig(1, 3, 2), 0)
        _, _, cache = lstm_forward(params, [0.1, 0.2, 0.3])
        grads = lstm_backward(params, cache, np.zeros(2))
        assert all(np.all(g == 0.0) for _, g in grads.items())

    def test_recurrent_gradients_ignore_head_bias(self):
        params = init_params(LSTMConfig(1, 3, 2), 0)
        arrays = dict(params.items())
        arrays['b_out'] = np.array([3.0, -1.0])
        shifted = ParamStore(arrays)
        grad_out = np.array([0.5, -0.25])
        seq = [0.1, -0.2, 0.3]
        a = lstm_backward(params, lstm_forward(params, seq)[2], grad_out)
        b = lstm_backward(shifted, lstm_forward(shifted, seq)[2], grad_out)
        for name in ('W_x', 'W_h', 'b', 'W_out'):
            np.testing.assert_array_equal(a[name], b[name])

    @pytest.mark.parametrize('seed', [0, 1])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(LSTMConfig(2, 4, 3), seed)
        loss_fn = lstm_sum_loss(rng.normal(size=(3, 2, 2)), rng.normal(size=(2, 3)))
        assert grad_check(loss_fn, params) < 1e-4


class TestAdam:
    def test_zero_gradient(self):
        params = ParamStore({'w': [1.0, -2.0]})
        state = AdamState.initial(params)
        new_params, new_state = adam_step(params, params.zeros_like(), state)
        assert new_params.equals(params)
        assert new_state.t == 1

    def test_first_step_moves_by_lr(self):
        params = ParamStore({'w': [0.0]})
        state = AdamState.initial(params, lr=1e-3)
        new_params, _ = adam_step(params, ParamStore({'w': [5.0]}), state)
        assert new_params['w'][0] == pytest.approx(-1e-3, rel=1e-6)

    def test_pure(self):
        params = ParamStore({'w': [0.5, 0.1]})
        grads = ParamStore({'w': [0.2, -0.3]})
        state = AdamState.initial(params)
        a, sa = adam_step(params, grads, state)
        b, sb = adam_step(params, grads, state)
        assert a.equals(b) and sa.m.equals(sb.m) and sa.v.equals(sb.v)
        assert state.t == 0
        assert params['w'][0] == 0.5

    def test_misaligned_gradients(self):
        params = ParamStore({'w': [0.0]})
        with pytest.raises(ShapeMismatch):
            adam_step(params, ParamStore({'w': [1.0, 2.0]}), AdamState.initial(params))


class TestClipAndCheck:
    def test_clip(self):
        grads = ParamStore({'a': [3.0], 'b': [4.0]})
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        assert clipped.global_norm() == pytest.approx(1.0)
        unchanged, _ = clip_global_norm(grads, 10.0)
        assert unchanged.equals(grads)

    def test_quadratic(self):
        def loss_fn(p):
            w = p['w']
            return float(np.sum(w ** 2)), ParamStore({'w': 2 * w})
        assert grad_check(loss_fn, ParamStore({'w': [3.0]})) < 1e-9

    def test_constant(self):
        def loss_fn(p):
            return 4.0, p.zeros_like()
        assert grad_check(loss_fn, ParamStore({'w': [1.0, 2.0]})) == 0.0

    def test_detects_wrong_gradient(self):
        def loss_fn(p):
            w = p['w']
            return float(np.sum(w ** 2)), ParamStore({'w': 3 * w})
        assert grad_check(loss_fn, ParamStore({'w': [1.0]})) > 0.1

    def test_coordinate_sampling(self):
        def loss_fn(p):
            w = p['w']
            return float(np.sum(w ** 3)), ParamStore({'w': 3 * w ** 2})
        params = ParamStore({'w': np.linspace(0.5, 2.0, 50)})
        assert grad_check(loss_fn, params, max_coords_per_param=5) < 1e-6


class TestCheckpoint:
    def test_round_trip(self):
        config = MLPConfig(3, (4,), 2)
        params = init_params(config, 4)
        data = checkpoint_dict('sff', config, params, 4, [1.0, 0.5], {'k': 1})
        config2, params2, seed, log, meta = parse_checkpoint(data, 'sff')
        assert config2 == config
        assert params2.equals(params)
        assert (seed, log, meta) == (4, [1.0, 0.5], {'k': 1})

    def test_wrong_kind(self):
        config = LSTMConfig(1, 2, 1)
        data = checkpoint_dict('lstm', config, init_params(config, 0), 0, [], {})
        with pytest.raises(ConfigError):
            parse_checkpoint(data, 'sff')
