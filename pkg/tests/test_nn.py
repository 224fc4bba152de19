import numpy as np
import pytest

from invq import nn


def random_config(rng):
    depth = rng.integers(1, 4)
    sizes = [int(rng.integers(1, 8))] + [int(rng.integers(2, 12)) for _ in range(depth)]
    return sizes, int(rng.integers(1, 20))


def mse_loss(x, actions, targets):
    def loss(p):
        out, cache = nn.forward_cache(p, x)
        value, g = nn.mse_on_actions(out, actions, targets)
        return value, nn.backward(p, x, g, cache)
    return loss


def ce_loss(x, actions):
    def loss(p):
        out, cache = nn.forward_cache(p, x)
        value, g = nn.cross_entropy(out, actions)
        return value, nn.backward(p, x, g, cache)
    return loss


class TestForward:
    def test_zero_params(self):
        p = nn.init_mlp([3, 4, 2], seed=0)
        z = p.zeros_like()
        np.testing.assert_array_equal(nn.forward(z, [1.0, -2.0, 3.0]), 0.0)

    def test_identity_layer(self):
        p = nn.MlpParams([np.eye(3)], [np.zeros(3)])
        np.testing.assert_array_equal(nn.forward(p, [1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])

    def test_dead_rectifiers_leave_bias_path(self):
        w1 = np.array([[1.0, -1.0], [1.0, -1.0]])
        b1 = np.array([-10.0, -10.0])
        w2 = np.array([[2.0], [3.0]])
        p = nn.MlpParams([w1, w2], [b1, np.array([0.5])])
        # pre-activations (-9.5, -10.5) are both negative
        np.testing.assert_array_equal(nn.forward(p, [0.2, 0.3]), [0.5])

    def test_batch_matches_single(self):
        p = nn.init_mlp([4, 8, 3], seed=1)
        x = np.random.default_rng(0).normal(size=(5, 4))
        np.testing.assert_allclose(nn.forward(p, x)[2], nn.forward(p, x[2]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.forward(nn.init_mlp([4, 2], seed=0), np.zeros(3))

    def test_init_deterministic(self):
        a, b = nn.init_mlp([5, 7, 2], seed=3), nn.init_mlp([5, 7, 2], seed=3)
        np.testing.assert_array_equal(a.flat(), b.flat())
        assert a.sizes == [5, 7, 2]


class TestBackward:
    def test_zero_upstream(self):
        p = nn.init_mlp([3, 5, 2], seed=0)
        g = nn.backward(p, np.ones((4, 3)), np.zeros((4, 2)))
        assert np.all(g.flat() == 0.0)

    def test_linear_mse_closed_form(self):
        rng = np.random.default_rng(2)
        p = nn.init_mlp([3, 2], seed=2)
        x, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        _, g_out = nn.mse(nn.forward(p, x), y)
        g = nn.backward(p, x, g_out)
        pred = x @ p.weights[0] + p.biases[0]
        np.testing.assert_allclose(g.weights[0], x.T @ (pred - y) * 2 / 6, atol=1e-14)

    def test_linear_quadratic_gradcheck(self):
        rng = np.random.default_rng(3)
        p = nn.init_mlp([4, 3], seed=0)
        x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 3))

        def loss(q):
            value, g = nn.mse(nn.forward(q, x), y)
            return value, nn.backward(q, x, g)
        assert nn.gradient_check(p, loss, step=1e-5).max_rel_error <= 1e-8

    def test_random_mlps_match_finite_differences(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            sizes, m = random_config(rng)
            p = nn.init_mlp(sizes, seed=trial)
            x = rng.normal(size=(m, sizes[0]))
            actions = rng.integers(0, sizes[-1], size=m)
            loss = mse_loss(x, actions, rng.normal(size=m)) if trial % 2 else ce_loss(x, actions)
            res = nn.gradient_check(p, loss, step=1e-5, seed=trial,
                                    pattern=lambda q: nn.activation_pattern(q, x))
            assert res.n_checked >= min(200, p.flat().size) - res.n_excluded
            assert res.max_rel_error <= 1e-4, (sizes, res.max_rel_error)

    def test_kink_is_excluded(self):
        # a hidden unit sitting exactly at zero pre-activation
        w1 = np.array([[1.0]])
        p = nn.MlpParams([w1, np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])
        x = np.zeros((1, 1))

        def loss(q):
            out, cache = nn.forward_cache(q, x)
            value, g = nn.mse(out, np.array([[1.0]]))
            return value, nn.backward(q, x, g, cache)
        res = nn.gradient_check(p, loss, pattern=lambda q: nn.activation_pattern(q, x))
        assert res.n_excluded >= 1

    def test_step_validation(self):
        with pytest.raises(ValueError):
            nn.gradient_check(nn.init_mlp([2, 2], 0), lambda q: (0.0, q.zeros_like()), step=0)


class TestAdam:
    def test_zero_gradient(self):
        p = nn.init_mlp([3, 2], seed=0)
        st = nn.AdamState.for_params(p)
        st.v[0][:] = 1.0  # zero first moment, non-zero second moment
        p2, st2 = nn.adam_step(p, p.zeros_like(), st, lr=0.1)
        np.testing.assert_array_equal(p2.flat(), p.flat())
        np.testing.assert_allclose(st2.v[0], 0.999)
        assert st2.step == 1 and st.step == 0

    def test_first_step_magnitude(self):
        p = nn.init_mlp([3, 2], seed=0)
        g = p.zeros_like()
        g.weights[0][:] = np.random.default_rng(0).normal(size=g.weights[0].shape)
        p2, _ = nn.adam_step(p, g, nn.AdamState.for_params(p), lr=0.01)
        delta = p.weights[0] - p2.weights[0]
        np.testing.assert_allclose(delta, 0.01 * np.sign(g.weights[0]), rtol=1e-6)

    def test_pure(self):
        p = nn.init_mlp([3, 2], seed=0)
        g = nn.init_mlp([3, 2], seed=1)
        st = nn.AdamState.for_params(p)
        a = nn.adam_step(p, g, st, lr=0.01)
        b = nn.adam_step(p, g, st, lr=0.01)
        np.testing.assert_array_equal(a[0].flat(), b[0].flat())
        assert a[1].step == b[1].step == 1


class TestPolyak:
    def test_endpoints(self):
        t, o = nn.init_mlp([3, 2], 0), nn.init_mlp([3, 2], 1)
        np.testing.assert_array_equal(nn.polyak_update(t, o, 1.0).flat(), o.flat())
        np.testing.assert_array_equal(nn.polyak_update(t, o, 0.0).flat(), t.flat())

    def test_half(self):
        t = nn.init_mlp([2, 2], 0).zeros_like()
        o = t.copy()
        o.assign_flat(np.full(o.flat().size, 2.0))
        np.testing.assert_array_equal(nn.polyak_update(t, o, 0.5).flat(), 1.0)

    @pytest.mark.parametrize("tau", [0.01, 0.3, 0.9])
    def test_contraction(self, tau):
        t, o = nn.init_mlp([4, 6, 2], 0), nn.init_mlp([4, 6, 2], 1)
        before = np.linalg.norm(t.flat() - o.flat())
        after = np.linalg.norm(nn.polyak_update(t, o, tau).flat() - o.flat())
        assert after == pytest.approx((1 - tau) * before, rel=1e-12)

    def test_tau_range(self):
        with pytest.raises(ValueError):
            nn.polyak_update(nn.init_mlp([2, 2], 0), nn.init_mlp([2, 2], 1), 1.5)


def test_softmax_and_cross_entropy():
    z = np.array([[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(nn.softmax(z).sum(1), 1.0, atol=1e-12)
    assert nn.softmax(z)[0, 0] > 0.999
    value, _ = nn.cross_entropy(z[1:], np.array([2]))
    assert value == pytest.approx(np.log(3))


def test_checkpoint_roundtrip(tmp_path):
    p = nn.init_mlp([3, 5, 2], seed=9)
    nn.save_params(p, tmp_path / "p.json")
    q = nn.load_params(tmp_path / "p.json")
    assert q.flat().tobytes() == p.flat().tobytes()
    with pytest.raises(ValueError):
        nn.params_from_dict({"schema": 99, "layers": []})
