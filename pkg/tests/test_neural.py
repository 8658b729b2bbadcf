import numpy as np
import pytest

from s2ac.core import DimensionError, finite_diff_grad, finite_diff_jacobian
from s2ac.neural import (
    LOG_STD_MAX,
    AdamState,
    CheckpointError,
    GaussianHead,
    MlpNetwork,
    QNetwork,
    adam_step,
    polyak_update,
)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


@pytest.mark.parametrize("act", ["relu", "elu"])
def test_parameter_gradient_matches_finite_differences(act, rng, np_rng):
    net = MlpNetwork.initialized([3, 7, 5, 2], rng, act)
    x = np_rng.normal(size=(4, 3))
    up = np_rng.normal(size=(4, 2))
    grad, gin = net.backward(x, up)

    def loss(p):
        return float(np.sum(up * MlpNetwork(net.sizes, act, p).forward(x)))

    assert rel_err(grad, finite_diff_grad(loss, net.params, h=1e-6)) <= 1e-4
    fd_in = finite_diff_grad(lambda z: float(np.sum(up * net.forward(z.reshape(4, 3)))), x.ravel(), h=1e-6)
    assert rel_err(gin.ravel(), fd_in) <= 1e-4
    np.testing.assert_allclose(net.input_grad(x, up), gin, rtol=1e-12)


def test_input_hvp_and_hessian_match_finite_differences(rng, np_rng):
    net = MlpNetwork.initialized([3, 6, 6, 1], rng, "elu")
    x = np_rng.normal(size=3)
    hess = net.input_hessian(x[None])[0]
    fd = finite_diff_jacobian(lambda z: net.input_grad(z[None], 1.0)[0], x, h=1e-6)
    assert rel_err(hess, fd) <= 1e-4
    v = np_rng.normal(size=3)
    np.testing.assert_allclose(net.input_hvp(x[None], 1.0, v)[0], hess @ v, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(hess, hess.T, atol=1e-12)


def test_relu_hessian_vanishes(rng, np_rng):
    net = MlpNetwork.initialized([2, 5, 1], rng, "relu")
    assert np.all(net.input_hessian(np_rng.normal(size=(3, 2))) == 0.0)


def test_forward_keeps_leading_axes(rng, np_rng):
    net = MlpNetwork.initialized([2, 4, 3], rng)
    x = np_rng.normal(size=(5, 6, 2))
    out = net.forward(x)
    assert out.shape == (5, 6, 3)
    np.testing.assert_allclose(out[2, 3], net.forward(x[2, 3][None])[0])


def test_construction_errors(rng):
    with pytest.raises(DimensionError):
        MlpNetwork([3])
    with pytest.raises(DimensionError):
        MlpNetwork([2, 2], params=np.zeros(3))
    with pytest.raises(ValueError):
        MlpNetwork([2, 2], activation="tanh")
    with pytest.raises(DimensionError):
        MlpNetwork.initialized([2, 3], rng).forward(np.zeros((1, 4)))


def test_initialization_bounds(rng):
    net = MlpNetwork.initialized([4, 16, 1], rng)
    (w1, b1), (w2, b2) = net.layers()
    assert np.all(np.abs(w1) <= 0.5) and np.all(np.abs(b1) <= 0.5)
    assert np.all(np.abs(w2) <= 0.25)


def test_checkpoint_round_trip(tmp_path, rng):
    net = MlpNetwork.initialized([3, 5, 2], rng, "elu")
    net.save(tmp_path / "n.bin")
    back = MlpNetwork.load(tmp_path / "n.bin")
    assert back.sizes == net.sizes and back.activation == "elu"
    np.testing.assert_array_equal(back.params, net.params)
    raw = (tmp_path / "n.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        MlpNetwork.load(tmp_path / "short.bin")
    (tmp_path / "junk.bin").write_bytes(b"{nope\n")
    with pytest.raises(CheckpointError):
        MlpNetwork.load(tmp_path / "junk.bin")


def test_adam_first_step_moves_by_lr():
    state = AdamState(3, lr=0.1)
    new, state2 = adam_step(state, np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(new, [-0.1, 0.1, 0.0], atol=1e-6)
    assert state2.step == 1 and state.step == 0
    with pytest.raises(DimensionError):
        adam_step(state, np.zeros(2), np.zeros(2))


def test_adam_minimizes_quadratic():
    p, state = np.array([3.0, -2.0]), AdamState(2, lr=0.05)
    for _ in range(2000):
        p, state = adam_step(state, p, 2.0 * p)
    assert np.max(np.abs(p)) < 1e-2


def test_polyak():
    np.testing.assert_allclose(polyak_update(np.zeros(2), np.ones(2), 0.25), [0.25, 0.25])
    np.testing.assert_array_equal(polyak_update(np.ones(2), np.zeros(2), 0.0), np.ones(2))
    with pytest.raises(ValueError):
        polyak_update(np.zeros(2), np.ones(2), 1.5)


def test_gaussian_head_reparameterization_gradient(rng, np_rng):
    head = GaussianHead.initialized(2, 2, [6], rng, "elu")
    s = np_rng.normal(size=(3, 2))
    xi = np_rng.normal(size=(3, 4, 2))
    w = np_rng.normal(size=(3, 4, 2))

    def objective(p):
        h = GaussianHead(MlpNetwork(head.net.sizes, "elu", p), 2)
        a, _, log_std = h.sample(s, xi)
        return float(np.sum(w * a) + np.sum(log_std))

    a, mu, log_std = head.sample(s, xi)
    assert a.shape == (3, 4, 2)
    grad_mu = w.sum(axis=1)
    grad_ls = np.sum(w * xi, axis=1) * np.exp(log_std) + 1.0
    assert rel_err(head.backward(s, grad_mu, grad_ls), finite_diff_grad(objective, head.params, h=1e-6)) <= 1e-4


def test_gaussian_head_clamps_log_std(rng):
    head = GaussianHead.initialized(1, 1, [3], rng)
    (w1, b1), (w2, b2) = head.net.layers()
    b2[1] = 50.0
    _, log_std = head.mean_log_std(np.zeros((1, 1)))
    assert log_std[0, 0] == LOG_STD_MAX
    g = head.backward(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))
    assert np.all(g == 0.0)


def test_q_network_clipping(rng, np_rng):
    q = QNetwork.initialized(2, 2, [8], rng, "elu", action_bounds=(-1.0, 1.0))
    s = np_rng.normal(size=(1, 2))
    np.testing.assert_allclose(q.value(s, np.array([[3.0, 0.2]])), q.value(s, np.array([[1.0, 0.2]])))
    g = q.action_grad(s, np.array([[3.0, 0.2]]))
    assert g[0, 0] == 0.0 and g[0, 1] != 0.0
    inside = np.array([[0.3, -0.4]])
    fd = finite_diff_grad(lambda a: float(q.value(s, a[None])[0]), inside[0], h=1e-6)
    np.testing.assert_allclose(q.action_grad(s, inside)[0], fd, rtol=1e-5)
    v = np_rng.normal(size=2)
    fd_h = finite_diff_jacobian(lambda a: q.action_grad(s, a[None])[0], inside[0], h=1e-6) @ v
    np.testing.assert_allclose(q.action_hvp(s, inside, v)[0], fd_h, rtol=1e-4, atol=1e-8)


def test_q_network_param_grad(rng, np_rng):
    q = QNetwork.initialized(2, 1, [5], rng)
    s, a = np_rng.normal(size=(4, 2)), np_rng.normal(size=(4, 1))
    up = np_rng.normal(size=4)

    def loss(p):
        c = q.copy()
        c.params = p
        return float(np.sum(up * c.value(s, a)))

    assert rel_err(q.param_grad(s, a, up), finite_diff_grad(loss, q.params, h=1e-6)) <= 1e-4
    with pytest.raises(DimensionError):
        QNetwork(MlpNetwork([3, 2]), 2, 1)
