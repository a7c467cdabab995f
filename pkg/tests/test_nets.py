"""Dense net unit tests: construction, forward, gradients, updates.

The gradient checks compare analytic backprop against central finite
differences; the forward check compares against a deliberately naive
re-evaluation written here.
"""

import numpy as np
import pytest

from gdqn.errors import ConfigError, NumericError, ShapeError
from gdqn.nets import (DenseNet, OptimizerState, apply_update, forward,
                       forward_batch, init_net, q_loss_and_grad, sync_target)


def naive_forward(net, x):
    """Independent re-evaluation with explicit loops."""
    a = [float(v) for v in x]
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for row in range(w.shape[0]):
            acc = float(b[row])
            for col in range(w.shape[1]):
                acc += float(w[row, col]) * a[col]
            out.append(acc)
        if layer != len(net.weights) - 1:
            out = [max(0.0, v) for v in out]
        a = out
    return np.array(a)


def numeric_grad(net, inputs, actions, targets, h=1e-5):
    """Central finite differences on every parameter."""
    def loss_at():
        return q_loss_and_grad(net, inputs, actions, targets)[0]

    grads = []
    for params in (net.weights, net.biases):
        layer_grads = []
        for p in params:
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = loss_at()
                p[idx] = orig - h
                down = loss_at()
                p[idx] = orig
                g[idx] = (up - down) / (2 * h)
            layer_grads.append(g)
        grads.append(layer_grads)
    return grads


def preactivations(net, x):
    a = np.asarray(x, dtype=float)
    pres = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ a + b
        pres.append(z)
        a = np.maximum(z, 0.0) if i != len(net.weights) - 1 else z
    return pres


class TestInit:
    def test_default_architecture_shapes(self):
        net = init_net([4, 64, 64, 3], np.random.default_rng(7))
        assert [w.shape for w in net.weights] == [(64, 4), (64, 64), (3, 64)]
        assert all(np.all(b == 0.0) for b in net.biases)

    def test_single_affine_layer(self):
        net = init_net([1, 1], np.random.default_rng(0))
        assert net.weights[0].shape == (1, 1)
        assert net.biases[0].shape == (1,)
        assert net.biases[0][0] == 0.0

    def test_deterministic_given_seed(self):
        a = init_net([5, 8, 2], np.random.default_rng(123))
        b = init_net([5, 8, 2], np.random.default_rng(123))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_fan_in_bound(self):
        net = init_net([100, 50, 2], np.random.default_rng(5))
        assert np.abs(net.weights[0]).max() <= 1 / np.sqrt(100)
        assert np.abs(net.weights[1]).max() <= 1 / np.sqrt(50)

    @pytest.mark.parametrize("dims", [[], [3], [0, 4], [4, 0, 2]])
    def test_invalid_dims_rejected(self, dims):
        with pytest.raises(ConfigError):
            init_net(dims, np.random.default_rng(0))


class TestForward:
    def test_all_zero_net(self):
        net = init_net([3, 4, 2], np.random.default_rng(0))
        for w in net.weights:
            w[:] = 0.0
        assert np.array_equal(forward(net, [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_affine_identity(self):
        net = DenseNet([1, 1], [np.array([[2.0]])], [np.array([3.0])])
        assert forward(net, np.array([1.0])) == pytest.approx([5.0])

    def test_matches_naive_reimplementation(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            net = init_net([6, 5, 4, 3], rng)
            x = rng.normal(size=6)
            np.testing.assert_allclose(forward(net, x), naive_forward(net, x),
                                       rtol=0, atol=1e-12)

    def test_forward_batch_agrees_with_single(self):
        rng = np.random.default_rng(3)
        net = init_net([4, 8, 2], rng)
        xs = rng.normal(size=(5, 4))
        batch = forward_batch(net, xs)
        for i in range(5):
            np.testing.assert_allclose(batch[i], forward(net, xs[i]), atol=1e-12)

    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(11)
        net = init_net([4, 8, 2], rng)
        x = rng.normal(size=4)
        assert np.array_equal(forward(net, x), forward(net, x))

    def test_shape_mismatch(self):
        net = init_net([4, 2], np.random.default_rng(0))
        with pytest.raises(ShapeError):
            forward(net, np.zeros(5))


class TestQLoss:
    def test_zero_loss_zero_grads_at_fit(self):
        rng = np.random.default_rng(1)
        net = init_net([3, 4, 2], rng)
        x = rng.normal(size=(1, 3))
        target = forward(net, x[0])[1]
        loss, grads = q_loss_and_grad(net, x, [1], [target])
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads.d_weights)
        assert all(np.all(g == 0.0) for g in grads.d_biases)

    def test_mean_semantics_under_duplication(self):
        rng = np.random.default_rng(2)
        net = init_net([3, 4, 2], rng)
        xs = rng.normal(size=(4, 3))
        acts = np.array([0, 1, 0, 1])
        tds = rng.normal(size=4)
        loss1, g1 = q_loss_and_grad(net, xs, acts, tds)
        loss2, g2 = q_loss_and_grad(net, np.tile(xs, (2, 1)), np.tile(acts, 2),
                                    np.tile(tds, 2))
        assert loss1 == pytest.approx(loss2, rel=1e-12)
        for a, b in zip(g1.d_weights, g2.d_weights):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_loss_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            net = init_net([3, 5, 2], rng)
            xs = rng.normal(size=(4, 3))
            loss, _ = q_loss_and_grad(net, xs, rng.integers(0, 2, 4),
                                      rng.normal(size=4))
            assert loss >= 0.0

    def test_action_out_of_range(self):
        net = init_net([2, 3], np.random.default_rng(0))
        with pytest.raises(IndexError):
            q_loss_and_grad(net, np.zeros((1, 2)), [3], [0.0])

    def test_unselected_actions_get_no_gradient(self):
        # with a single linear layer the output-weight gradient rows are
        # attributable action by action
        net = DenseNet([2, 3], [np.zeros((3, 2))], [np.zeros(3)])
        _, grads = q_loss_and_grad(net, np.array([[1.0, 2.0]]), [1], [1.0])
        assert np.all(grads.d_weights[0][0] == 0.0)
        assert np.all(grads.d_weights[0][2] == 0.0)
        assert np.any(grads.d_weights[0][1] != 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        net = init_net([4, 6, 5, 3], rng)
        xs = rng.normal(size=(3, 4))
        acts = rng.integers(0, 3, size=3)
        tds = rng.normal(size=3)
        # keep away from ReLU kinks so the numeric derivative is clean
        for x in xs:
            for z in preactivations(net, x)[:-1]:
                assert np.all(np.abs(z) > 1e-3)
        _, analytic = q_loss_and_grad(net, xs, acts, tds)
        numeric_w, numeric_b = numeric_grad(net, xs, acts, tds)
        for a, nmr in zip(analytic.d_weights, numeric_w):
            np.testing.assert_allclose(a, nmr, rtol=1e-4, atol=1e-8)
        for a, nmr in zip(analytic.d_biases, numeric_b):
            np.testing.assert_allclose(a, nmr, rtol=1e-4, atol=1e-8)

    def test_clipped_td_error_zeroes_gradient_beyond_clip(self):
        net = DenseNet([1, 1], [np.array([[1.0]])], [np.array([0.0])])
        # Q = 2, target = 10: unclipped error 8, clipped error 1, zero grad
        loss, grads = q_loss_and_grad(net, np.array([[2.0]]), [0], [10.0],
                                      clip_td_error=True)
        assert loss == 1.0
        assert np.all(grads.d_weights[0] == 0.0)


class TestUpdates:
    def test_plain_sgd_arithmetic(self):
        net = DenseNet([1, 1], [np.array([[1.0]])], [np.array([0.0])])
        opt = OptimizerState.for_net(net, rule="sgd", lr=0.1)
        grads_set = q_loss_and_grad(net, np.array([[1.0]]), [0], [0.0])[1]
        grads_set.d_weights[0][:] = 0.5
        grads_set.d_biases[0][:] = 0.0
        apply_update(net, grads_set, opt)
        assert net.weights[0][0, 0] == pytest.approx(0.95)

    def test_zero_gradient_keeps_parameters(self):
        rng = np.random.default_rng(0)
        net = init_net([2, 3, 2], rng)
        before = [w.copy() for w in net.weights]
        opt = OptimizerState.for_net(net)
        from gdqn.nets import GradientSet
        zeros = GradientSet([np.zeros_like(w) for w in net.weights],
                            [np.zeros_like(b) for b in net.biases])
        apply_update(net, zeros, opt)
        for w, prev in zip(net.weights, before):
            assert np.array_equal(w, prev)

    def test_deterministic_updates(self):
        def one(seed):
            rng = np.random.default_rng(seed)
            net = init_net([2, 3, 2], rng)
            opt = OptimizerState.for_net(net)
            _, grads = q_loss_and_grad(net, rng.normal(size=(2, 2)), [0, 1],
                                       [1.0, -1.0])
            apply_update(net, grads, opt)
            return net
        a, b = one(5), one(5)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_nan_gradient_rejected(self):
        net = init_net([2, 2], np.random.default_rng(0))
        opt = OptimizerState.for_net(net)
        _, grads = q_loss_and_grad(net, np.ones((1, 2)), [0], [1.0])
        grads.d_weights[0][0, 0] = np.nan
        before = net.weights[0].copy()
        with pytest.raises(NumericError):
            apply_update(net, grads, opt)
        assert np.array_equal(net.weights[0], before)

    def test_parameters_stay_finite(self):
        rng = np.random.default_rng(8)
        net = init_net([3, 8, 2], rng)
        opt = OptimizerState.for_net(net)
        for _ in range(200):
            xs = rng.normal(size=(4, 3))
            _, grads = q_loss_and_grad(net, xs, rng.integers(0, 2, 4),
                                       rng.normal(size=4) * 10)
            apply_update(net, grads, opt)
        assert all(np.all(np.isfinite(w)) for w in net.weights)
        assert all(np.all(np.isfinite(b)) for b in net.biases)


class TestSyncTarget:
    def test_copy_is_isolated(self):
        rng = np.random.default_rng(1)
        net = init_net([2, 4, 2], rng)
        x = rng.normal(size=2)
        target = sync_target(net)
        before = forward(target, x).copy()
        net.weights[0][:] += 1.0
        assert np.array_equal(forward(target, x), before)
        assert not np.array_equal(forward(net, x), before)

    def test_outputs_equal_right_after_sync(self):
        rng = np.random.default_rng(2)
        net = init_net([3, 4, 2], rng)
        target = sync_target(net)
        x = rng.normal(size=3)
        assert np.array_equal(forward(net, x), forward(target, x))

    def test_repeated_sync_idempotent(self):
        net = init_net([2, 2], np.random.default_rng(3))
        t1 = sync_target(net)
        t2 = sync_target(net)
        for a, b in zip(t1.weights, t2.weights):
            assert np.array_equal(a, b)
