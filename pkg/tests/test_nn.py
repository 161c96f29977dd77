import numpy as np
import pytest

from imvc.nn import SIGMA_MIN, Adam, Mlp, load_mlp, save_mlp, sigmoid, softplus


def fd_param_grads(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over a flat param list."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.ravel()
        gf = g.ravel()
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = loss_fn()
            flat[j] = old - h
            lm = loss_fn()
            flat[j] = old
            gf[j] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def max_rel_err(analytic, numeric):
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        for x, y in zip(ga.ravel(), gn.ravel()):
            worst = max(worst, rel_err(x, y))
    return worst


def has_kink_margin(net, X, margin=1e-3):
    """True when every hidden pre-activation sits clear of the ReLU kink."""
    h = X
    for l in range(net.n_layers - 1):
        a = h @ net.weights[l] + net.biases[l]
        if np.abs(a).min() < margin:
            return False
        h = np.maximum(a, 0.0)
    return True


def make_instance(seed, heads, dims=(4, 7, 5)):
    rng = np.random.default_rng(seed)
    out_dim = sum(w for _, w in heads)
    for bump in range(50):
        net = Mlp([*dims, out_dim], heads=heads, seed=seed + 100 * bump)
        X = rng.standard_normal((6, dims[0]))
        if has_kink_margin(net, X):
            return net, X
    raise AssertionError("could not find a kink-free instance")


class TestForward:
    def test_zero_net_identity_head(self):
        net = Mlp([3, 4, 2])
        for w in net.weights:
            w[...] = 0.0
        Y, _ = net.forward(np.random.default_rng(0).standard_normal((5, 3)))
        np.testing.assert_array_equal(Y, np.zeros((5, 2)))

    def test_single_linear_identity(self):
        net = Mlp([3, 3])
        net.weights[0][...] = np.eye(3)
        X = np.random.default_rng(1).standard_normal((4, 3))
        Y, _ = net.forward(X)
        np.testing.assert_allclose(Y, X)

    def test_matches_independent_evaluation(self):
        # second, straightforward layer-by-layer evaluation
        net = Mlp([4, 3, 2], seed=7)
        X = np.random.default_rng(2).standard_normal((6, 4))
        Y, _ = net.forward(X)
        h = np.maximum(X @ net.weights[0] + net.biases[0], 0.0)
        expected = h @ net.weights[1] + net.biases[1]
        np.testing.assert_allclose(Y, expected, rtol=0, atol=0)

    def test_head_slicing(self):
        net = Mlp([2, 6], heads=(("identity", 2), ("softplus", 2), ("logistic", 2)))
        X = np.random.default_rng(3).standard_normal((5, 2))
        Y, cache = net.forward(X)
        a = cache[1]
        np.testing.assert_allclose(Y[:, :2], a[:, :2])
        np.testing.assert_allclose(Y[:, 2:4], softplus(a[:, 2:4]) + SIGMA_MIN)
        np.testing.assert_allclose(Y[:, 4:], sigmoid(a[:, 4:]))

    def test_softplus_head_floor(self):
        net = Mlp([2, 2], heads=(("softplus", 2),))
        X = np.array([[-1e6, 1e-12], [0.0, -50.0]])
        net.weights[0][...] = np.eye(2)
        Y, _ = net.forward(X)
        assert (Y >= SIGMA_MIN).all()
        assert np.isfinite(Y).all()

    def test_dim_mismatch_raises(self):
        net = Mlp([3, 2])
        with pytest.raises(ValueError):
            net.forward(np.zeros((4, 5)))

    def test_param_count(self):
        net = Mlp([4, 7, 5, 3])
        assert net.n_params == (4 + 1) * 7 + (7 + 1) * 5 + (5 + 1) * 3


class TestBackward:
    def test_zero_grad_out(self):
        net = Mlp([3, 4, 2], seed=1)
        X = np.random.default_rng(4).standard_normal((5, 3))
        _, cache = net.forward(X)
        grads, dX = net.backward(cache, np.zeros((5, 2)))
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(dX, 0.0)

    def test_linear_squared_loss_closed_form(self):
        # single linear layer, L = ||XW - T||^2 / n  =>  dW = 2 X^T (XW-T)/n
        rng = np.random.default_rng(5)
        net = Mlp([3, 2], seed=2)
        X = rng.standard_normal((8, 3))
        T = rng.standard_normal((8, 2))
        Y, cache = net.forward(X)
        grads, _ = net.backward(cache, 2.0 * (Y - T) / 8)
        expected = 2.0 * X.T @ (X @ net.weights[0] + net.biases[0] - T) / 8
        np.testing.assert_allclose(grads[0], expected, rtol=1e-12)

    @pytest.mark.parametrize(
        "heads",
        [
            (("identity", 3),),
            (("softplus", 3),),
            (("logistic", 3),),
            (("identity", 2), ("softplus", 2), ("logistic", 1)),
        ],
        ids=["identity", "softplus", "logistic", "mixed"],
    )
    def test_finite_difference_every_head(self, heads):
        net, X = make_instance(11, heads)
        rng = np.random.default_rng(12)
        T = rng.standard_normal((X.shape[0], sum(w for _, w in heads)))

        def loss():
            Y, _ = net.forward(X)
            return float(((Y - T) ** 2).sum())

        Y, cache = net.forward(X)
        analytic, _ = net.backward(cache, 2.0 * (Y - T))
        numeric = fd_param_grads(loss, net.parameters())
        assert max_rel_err(analytic, numeric) <= 1e-4

    def test_input_gradient_finite_difference(self):
        net, X = make_instance(13, (("identity", 2), ("softplus", 2)))
        T = np.random.default_rng(14).standard_normal((X.shape[0], 4))
        Y, cache = net.forward(X)
        _, dX = net.backward(cache, 2.0 * (Y - T))
        h = 1e-5
        num = np.zeros_like(X)
        for i in range(X.shape[0]):
            for j in range(X.shape[1]):
                old = X[i, j]
                X[i, j] = old + h
                lp = float(((net.forward(X)[0] - T) ** 2).sum())
                X[i, j] = old - h
                lm = float(((net.forward(X)[0] - T) ** 2).sum())
                X[i, j] = old
                num[i, j] = (lp - lm) / (2 * h)
        assert max_rel_err([dX], [num]) <= 1e-4


class TestAdam:
    def test_zero_grads_no_update(self):
        net = Mlp([3, 2], seed=3)
        params = net.parameters()
        before = [p.copy() for p in params]
        opt = Adam(params, lr=0.1)
        opt.step(params, [np.zeros_like(p) for p in params])
        for b, p in zip(before, params):
            np.testing.assert_array_equal(b, p)

    def test_first_step_magnitude(self):
        # bias-corrected first step with constant gradient moves ~lr
        w = np.array([0.0, 0.0])
        g = np.array([3.7, -0.2])
        opt = Adam([w], lr=0.05)
        opt.step([w], [g])
        np.testing.assert_allclose(np.abs(w), 0.05, rtol=1e-3)

    def test_quadratic_bowl_converges(self):
        w = np.array([1.0, 1.0])
        opt = Adam([w], lr=0.05)
        for _ in range(500):
            opt.step([w], [2.0 * w])
        assert np.linalg.norm(w) < 1e-2

    def test_deterministic_trajectory(self):
        def run():
            net = Mlp([4, 5, 2], seed=9)
            params = net.parameters()
            opt = Adam(params, lr=1e-2)
            rng = np.random.default_rng(42)
            X = rng.standard_normal((10, 4))
            T = rng.standard_normal((10, 2))
            for _ in range(20):
                Y, cache = net.forward(X)
                grads, _ = net.backward(cache, 2.0 * (Y - T) / 10)
                opt.step(params, grads)
            return [p.copy() for p in params]

        a, b = run(), run()
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_checkpoint_roundtrip(tmp_path):
    net = Mlp([4, 6, 3], heads=(("identity", 1), ("softplus", 2)), seed=21)
    path = tmp_path / "net.json"
    save_mlp(net, path)
    back = load_mlp(path)
    X = np.random.default_rng(6).standard_normal((5, 4))
    np.testing.assert_array_equal(net.forward(X)[0], back.forward(X)[0])


def test_checkpoint_magic_enforced(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"magic": "something-else"}')
    with pytest.raises(ValueError):
        load_mlp(path)
