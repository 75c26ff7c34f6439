import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysbtm.levyquad import build_quadrature
from levysbtm.model import build_example
from levysbtm.scorenet import (
    TrainingDivergenceError,
    adam_init,
    adam_step,
    divergence,
    forward,
    init_network,
    jacobian,
    linear_network,
    lipschitz_bound,
    load_network,
    loss_gradient,
    save_network,
    swish,
    zero_network,
)
from levysbtm.training import BatchLossSpec, assemble_loss


def _fd_divergence(net, x, h=1e-4):
    d = x.shape[1]
    out = np.zeros(len(x))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out += (forward(net, x + e)[:, j] - forward(net, x - e)[:, j]) / (2 * h)
    return out


def test_default_architecture():
    net = init_network(3)
    assert net.layer_dims == (3, 32, 32, 32, 3)
    assert forward(net, np.ones(3)).shape == (3,)


def test_zero_network_is_zero():
    net = zero_network(2)
    np.testing.assert_array_equal(forward(net, np.random.default_rng(0).normal(size=(5, 2))), 0.0)


def test_linear_network_is_affine():
    A = np.array([[1.0, 2.0], [-0.5, 3.0]])
    b = np.array([0.1, -0.2])
    net = linear_network(A, b)
    x = np.array([[0.3, -1.0], [2.0, 0.5]])
    np.testing.assert_allclose(forward(net, x), x @ A.T + b, atol=1e-15)
    np.testing.assert_allclose(divergence(net, x), [np.trace(A)] * 2, atol=1e-15)


def test_swish_at_zero():
    assert swish(0.0) == 0.0


def test_init_is_seeded_glorot():
    a, b = init_network(2, seed=4), init_network(2, seed=4)
    np.testing.assert_array_equal(a.flat(), b.flat())
    W = a.params[1][0]
    assert np.all(np.abs(W) <= np.sqrt(6 / 64)) and np.all(a.params[1][1] == 0)


def test_divergence_with_constant_sigma():
    net = init_network(2, (8, 8), seed=1)
    x = np.random.default_rng(2).normal(size=(6, 2))
    c = 2.5
    got = divergence(net, x, lambda X: np.broadcast_to(c * np.eye(2), (len(X), 2, 2)), lambda X: np.zeros((len(X), 2)))
    np.testing.assert_allclose(got, c * divergence(net, x), rtol=1e-13)


def test_divergence_dimension_mismatch():
    with pytest.raises(ValueError):
        divergence(init_network(2, (4,)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        divergence(init_network(2, (4,)), np.zeros((3, 2)), sigma_fn=lambda X: X)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_divergence_matches_finite_differences(seed, d):
    rng = np.random.default_rng(seed)
    net = init_network(d, (int(rng.integers(3, 9)), int(rng.integers(3, 9))), seed=seed)
    x = rng.normal(size=(4, d))
    fd = _fd_divergence(net, x)
    got = divergence(net, x)
    assert np.all(np.abs(got - fd) <= 1e-5 * np.maximum(np.abs(fd), 1.0))


def test_jacobian_matches_finite_differences():
    net = init_network(3, (6, 6), seed=9)
    x = np.random.default_rng(1).normal(size=(2, 3))
    J = jacobian(net, x)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        np.testing.assert_allclose(J[:, :, j], (forward(net, x + e) - forward(net, x - e)) / (2 * h), atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lipschitz_bound_holds(seed):
    rng = np.random.default_rng(seed)
    net = init_network(2, (6, 6), seed=seed)
    x, y = rng.uniform(-3, 3, (2, 50, 2))
    lhs = np.linalg.norm(forward(net, x) - forward(net, y), axis=1)
    assert np.all(lhs <= lipschitz_bound(net) * np.linalg.norm(x - y, axis=1) + 1e-12)


def _ou_spec(samples, model=None):
    model = model or build_example("OU", {"sigma": 1.0})
    return BatchLossSpec(np.asarray(samples, float).reshape(-1, 1), 0.0, "alg2", build_quadrature(model.levy_measure, 4, 2),
                         model)


def test_square_term_gradient_zero_at_zero_net():
    grads = loss_gradient(zero_network(1, (4,)), _ou_spec([0.5]))
    assert all(np.all(gW == 0) and np.all(gb == 0) for gW, gb in grads)


def test_linear_toy_gradient_closed_form():
    # no jumps, Sigma = 1: loss = mean((a x + b)^2 + a) for s(x) = a x + b at b = 0
    x = np.array([-1.0, 0.5, 2.0])
    a = 0.7
    grads = loss_gradient(linear_network([[a]]), _ou_spec(x))
    assert grads[0][0][0, 0] == pytest.approx(np.mean(2 * a * x**2 + 1), rel=1e-13)
    assert grads[0][1][0] == pytest.approx(2 * a * np.mean(x), rel=1e-13)


def test_loss_gradient_matches_finite_differences_full_loss():
    model = build_example("Ex1")
    quad = build_quadrature(model.levy_measure, 4, 3)
    x = np.random.default_rng(0).normal(size=(8, 1))
    spec = BatchLossSpec(x, 0.0, "alg1", quad, model)
    net = init_network(1, (5, 5), seed=3)
    g = np.concatenate([np.concatenate([gW.ravel(), gb.ravel()]) for gW, gb in loss_gradient(net, spec)])
    theta = net.flat()
    h = 1e-5
    fd = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        fd[k] = (assemble_loss(net.with_flat(theta + e), spec) - assemble_loss(net.with_flat(theta - e), spec)) / (2 * h)
    assert np.all(np.abs(g - fd) <= 1e-4 * np.maximum(np.abs(fd), 1e-2))


def test_adam_zero_grad_is_identity():
    net = init_network(2, (4,), seed=0)
    state = adam_init(net)
    zero = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.params]
    new, st2 = adam_step(net, state, zero)
    np.testing.assert_array_equal(new.flat(), net.flat())
    assert st2.step == 1


def test_adam_first_step_bounded_by_lr():
    net = init_network(2, (4,), seed=0)
    state = adam_init(net, 1e-4)
    rng = np.random.default_rng(0)
    grad = [(rng.normal(size=W.shape), rng.normal(size=b.shape)) for W, b in net.params]
    new, _ = adam_step(net, state, grad)
    delta = new.flat() - net.flat()
    assert np.all(np.abs(delta) <= 1e-4 * (1 + 1e-6))
    gflat = np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in grad])
    assert np.all(np.sign(delta) == -np.sign(gflat))


def test_adam_constant_grad_monotone():
    net = linear_network([[1.0]])
    state = adam_init(net, 1e-2)
    grad = [(np.array([[1.0]]), np.array([0.0]))]
    w = [net.params[0][0][0, 0]]
    for _ in range(2):
        net, state = adam_step(net, state, grad)
        w.append(net.params[0][0][0, 0])
    assert w[0] > w[1] > w[2]
    assert state.step == 2


def test_adam_rejects_non_finite_grad():
    net = linear_network([[1.0]])
    with pytest.raises(TrainingDivergenceError):
        adam_step(net, adam_init(net), [(np.array([[np.nan]]), np.array([0.0]))])


def test_checkpoint_round_trip(tmp_path):
    net = init_network(3, (5, 7), seed=12)
    save_network(net, tmp_path / "net.bin")
    back = load_network(tmp_path / "net.bin")
    assert back.layer_dims == net.layer_dims and back.seed == 12
    np.testing.assert_array_equal(back.flat(), net.flat())
    header = (tmp_path / "net.bin").read_bytes().split(b"\n", 1)[0]
    assert b"layer_dims" in header and b"swish" in header
