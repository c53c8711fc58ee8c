import numpy as np
import pytest

from barrier_shaping.errors import ConfigurationError, DataError, UsageError
from barrier_shaping.nn import Adam, Mlp, load_checkpoint, polyak_update, save_checkpoint


def numeric_param_grads(net, x, out_grad, step=1e-5):
    """Central differences of sum(net(x) * out_grad) w.r.t. every parameter."""
    grads = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + step
            plus = np.sum(net(x) * out_grad)
            p[i] = old - step
            minus = np.sum(net(x) * out_grad)
            p[i] = old
            g[i] = (plus - minus) / (2 * step)
        grads.append(g)
    return grads


def numeric_input_grad(net, x, out_grad, step=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (np.sum(net(xp) * out_grad) - np.sum(net(xm) * out_grad)) / (2 * step)
    return g


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def assert_gradients_match(net, x, out_grad, tol=1e-4):
    _, cache = net.forward(x)
    grads, dx = net.backward(cache, out_grad)
    for analytic, numeric in zip(grads, numeric_param_grads(net, x, out_grad)):
        assert max_rel_error(analytic, numeric) <= tol
    assert max_rel_error(dx, numeric_input_grad(net, x, out_grad)) <= tol


class TestForward:
    def test_zero_network(self):
        net = Mlp([3, 4, 2])
        np.testing.assert_array_equal(net(np.ones(3)), np.zeros(2))

    def test_single_affine_layer(self):
        net = Mlp([1, 1])
        net.weights[0][...] = [[2.0]]
        net.biases[0][...] = [1.0]
        np.testing.assert_array_equal(net([3.0]), [7.0])

    def test_tanh_output_range(self):
        net = Mlp([2, 8, 1], output="tanh", output_low=-10, output_high=10, rng=np.random.default_rng(0))
        net.weights[-1] *= 1000
        out = net(np.random.default_rng(1).normal(scale=100, size=(500, 2)))
        assert np.all(np.abs(out) <= 10.0)

    def test_asymmetric_tanh_box(self):
        net = Mlp([1, 1], output="tanh", output_low=[0.0], output_high=[4.0])
        np.testing.assert_allclose(net([0.0]), [2.0])

    def test_batch_and_vector_agree(self):
        net = Mlp([3, 5, 2], rng=np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_allclose(net(x)[2], net(x[2]), rtol=1e-15)

    def test_forward_is_pure(self):
        net = Mlp([3, 5, 2], rng=np.random.default_rng(0))
        before = net.get_flat().copy()
        net(np.ones(3))
        np.testing.assert_array_equal(net.get_flat(), before)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            Mlp([3, 2])(np.ones(4))

    def test_final_scale(self):
        a = Mlp([3, 4, 2], rng=np.random.default_rng(0))
        b = Mlp([3, 4, 2], rng=np.random.default_rng(0), final_scale=0.01)
        np.testing.assert_allclose(b.weights[-1], 0.01 * a.weights[-1])
        np.testing.assert_array_equal(b.weights[0], a.weights[0])

    def test_init_bounds(self):
        net = Mlp([16, 9, 1], rng=np.random.default_rng(0))
        assert np.all(np.abs(net.weights[0]) <= 0.25)
        assert np.all(np.abs(net.weights[1]) <= 1 / 3)


class TestBackward:
    def test_zero_output_grad(self):
        net = Mlp([3, 5, 2], rng=np.random.default_rng(0))
        _, cache = net.forward(np.ones(3))
        grads, dx = net.backward(cache, np.zeros(2))
        assert all(np.all(g == 0) for g in grads) and np.all(dx == 0)

    def test_linear_input_grad(self):
        net = Mlp([3, 2], rng=np.random.default_rng(0))
        _, cache = net.forward(np.ones(3))
        g = np.array([0.3, -1.2])
        _, dx = net.backward(cache, g)
        np.testing.assert_allclose(dx, net.weights[0] @ g)

    def test_two_layer_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = Mlp([3, 6, 2], rng=rng)
        x = rng.normal(size=(5, 3))
        assert_gradients_match(net, x, rng.normal(size=(5, 2)))

    def test_tanh_head_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        net = Mlp([3, 6, 6, 2], output="tanh", output_low=[-2, 0], output_high=[2, 5], rng=rng)
        x = rng.normal(size=(4, 3))
        assert_gradients_match(net, x, rng.normal(size=(4, 2)))

    @pytest.mark.parametrize("sizes,output", [
        ([4, 256, 256, 1], "tanh"),   # CartPole actor
        ([5, 256, 256, 1], "identity"),  # CartPole critic
        ([2, 256, 256, 1], "tanh"),   # Pendulum actor
        ([3, 256, 256, 1], "identity"),  # Pendulum critic
        ([4, 64, 64, 1], "tanh"),     # CartPole actor, experiment configs
        ([5, 64, 64, 1], "identity"),  # CartPole critic, experiment configs
    ])
    def test_td3_architectures(self, sizes, output):
        rng = np.random.default_rng(sum(sizes))
        net = Mlp(sizes, output=output, output_low=-2.0, output_high=2.0, rng=rng)
        x = rng.normal(size=(2, sizes[0]))
        out_grad = rng.normal(size=(2, 1))
        _, cache = net.forward(x)
        grads, dx = net.backward(cache, out_grad)
        # full finite differences over 66k+ parameters is slow; check a random subset of entries of every tensor
        step = 1e-5
        for p, g in zip(net.params, grads):
            flat_idx = rng.choice(p.size, size=min(p.size, 40), replace=False)
            for k in flat_idx:
                i = np.unravel_index(k, p.shape)
                old = p[i]
                p[i] = old + step
                plus = np.sum(net(x) * out_grad)
                p[i] = old - step
                minus = np.sum(net(x) * out_grad)
                p[i] = old
                num = (plus - minus) / (2 * step)
                assert abs(g[i] - num) / max(abs(g[i]) + abs(num), 1e-6) <= 1e-4
        assert max_rel_error(dx, numeric_input_grad(net, x, out_grad)) <= 1e-4

    def test_stale_cache(self):
        net = Mlp([2, 3, 1], rng=np.random.default_rng(0))
        _, cache = net.forward(np.ones(2))
        opt = Adam(net)
        grads, _ = net.backward(cache, np.ones(1))
        opt.step(net, grads)
        with pytest.raises(UsageError):
            net.backward(cache, np.ones(1))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        net = Mlp([2, 3, 1], rng=np.random.default_rng(0))
        before = net.get_flat().copy()
        opt = Adam(net)
        opt.step(net, [np.zeros_like(p) for p in net.params])
        np.testing.assert_array_equal(net.get_flat(), before)
        assert opt.t == 1

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g^2 -> step = -lr * g / (|g| + eps)
        for g in [0.3, -2.0, 1e-6]:
            p = [np.array([1.0])]
            Adam(p, lr=0.01).step(p, [np.array([g])])
            assert p[0][0] == pytest.approx(1.0 - 0.01 * g / (abs(g) + 1e-8), abs=1e-15)

    def test_second_step_closed_form(self):
        p = [np.array([0.0])]
        opt = Adam(p, lr=0.1)
        opt.step(p, [np.array([1.0])])
        opt.step(p, [np.array([-1.0])])
        m = 0.9 * 0.1 - 0.1
        v = 0.999 * 0.001 + 0.001
        expected = -0.1 * 1.0 / (1 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        assert p[0][0] == pytest.approx(expected, abs=1e-14)

    def test_deterministic(self):
        def run():
            net = Mlp([2, 3, 1], rng=np.random.default_rng(0))
            opt = Adam(net)
            g = [np.full_like(p, 0.5) for p in net.params]
            opt.step(net, g)
            opt.step(net, g)
            return net.get_flat()

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        p = [np.zeros(3)]
        with pytest.raises(ConfigurationError):
            Adam(p).step(p, [np.zeros(2)])

    def test_hygiene_over_many_steps(self):
        rng = np.random.default_rng(0)
        net = Mlp([3, 8, 2], rng=rng)
        opt = Adam(net, lr=1e-3)
        for _ in range(10_000):
            opt.step(net, [rng.uniform(-1, 1, size=p.shape) for p in net.params])
        assert np.all(np.isfinite(net.get_flat()))

    def test_descends_quadratic(self):
        p = [np.array([3.0, -2.0])]
        opt = Adam(p, lr=0.05)
        for _ in range(2000):
            opt.step(p, [2 * p[0]])
        assert np.all(np.abs(p[0]) < 1e-2)


class TestPolyak:
    def test_tau_one_copies(self):
        src = Mlp([2, 3, 1], rng=np.random.default_rng(0))
        tgt = Mlp([2, 3, 1], rng=np.random.default_rng(1))
        polyak_update(tgt, src, 1.0)
        np.testing.assert_array_equal(tgt.get_flat(), src.get_flat())

    def test_scalar_arithmetic(self):
        src, tgt = Mlp([1, 1]), Mlp([1, 1])
        src.weights[0][...] = 1.0
        polyak_update(tgt, src, 0.005)
        assert tgt.weights[0][0, 0] == pytest.approx(0.005, abs=1e-18)

    def test_geometric_convergence(self):
        src = Mlp([2, 3, 1], rng=np.random.default_rng(0))
        tgt = Mlp([2, 3, 1])
        d0 = np.max(np.abs(src.get_flat()))
        for _ in range(100):
            polyak_update(tgt, src, 0.1)
        gap = np.max(np.abs(tgt.get_flat() - src.get_flat()))
        assert gap == pytest.approx(d0 * 0.9 ** 100, rel=1e-9)

    def test_architecture_mismatch(self):
        with pytest.raises(ConfigurationError):
            polyak_update(Mlp([2, 3, 1]), Mlp([2, 4, 1]), 0.5)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        a = Mlp([3, 4, 1], output="tanh", output_low=-2, output_high=2, rng=np.random.default_rng(0))
        b = Mlp([4, 5, 1], rng=np.random.default_rng(1))
        path = save_checkpoint(tmp_path / "x.ckpt", {"actor": a, "critic": b}, {"seed": 3})
        nets, meta = load_checkpoint(path)
        assert meta == {"seed": 3}
        np.testing.assert_array_equal(nets["actor"].get_flat(), a.get_flat())
        np.testing.assert_array_equal(nets["critic"].get_flat(), b.get_flat())
        assert nets["actor"].same_architecture(a)

    def test_documented_layout(self, tmp_path):
        net = Mlp([2, 1])
        net.weights[0][...] = [[1.5], [-2.0]]
        net.biases[0][...] = [0.25]
        path = save_checkpoint(tmp_path / "x.ckpt", {"n": net})
        raw = path.read_bytes()
        assert raw.startswith(b"BSCKPT1\n")
        blob = raw.split(b"\n", 2)[2]
        np.testing.assert_array_equal(np.frombuffer(blob, dtype="<f8"), [1.5, -2.0, 0.25])

    def test_truncated_file(self, tmp_path):
        path = save_checkpoint(tmp_path / "x.ckpt", {"n": Mlp([2, 3])})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            load_checkpoint(path)
