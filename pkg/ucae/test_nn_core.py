"""
Tests for the MLP forward/backward passes, optimizers and Lipschitz bounds.

Gradients are checked against central finite differences and, when torch
is installed, against autograd.
"""

import numpy as np
import pytest

from ucae.errors import DimensionError, NumericError, PreconditionError
from ucae.linalg import Rng
from ucae.metrics import empirical_lipschitz
from ucae.nn_core import LayerSpec, Mlp, Optimizer, backward, build_layers, forward, lipschitz_upper_bound, step

FD_STEP = 1e-5
FD_TOL = 1e-4
ENTRIES_PER_TENSOR = 60

# encoder, decoder and discriminator shapes used by the default config
ARCHITECTURES = {
    "encoder": (6, (128, 128), 3),
    "decoder": (3, (128, 128), 6),
    "discriminator": (3, (64, 64), 1),
    "conditioned_discriminator": (5, (64, 64), 1),
}


def kink_signs(net):
    return [pre > 0.0 for spec, pre in zip(net.layers, net._pre) if spec.activation == "leaky_relu"]


def fd_check(net, x, upstream, rng):
    """Largest relative error between backward and central differences of <upstream, f(x)>."""
    net.zero_grad()
    net.forward(x)
    net.backward(upstream)
    worst = 0.0
    for t, (param, grad) in enumerate(zip(net.parameters(), net.gradients())):
        flat, gflat = param.reshape(-1), grad.reshape(-1).copy()
        count = min(ENTRIES_PER_TENSOR, flat.size)
        for idx in rng.split(f"tensor-{t}").permutation(flat.size)[:count]:
            saved = flat[idx]
            flat[idx] = saved + FD_STEP
            plus = np.sum(upstream * net.forward(x))
            signs_plus = kink_signs(net)
            flat[idx] = saved - FD_STEP
            minus = np.sum(upstream * net.forward(x))
            signs_minus = kink_signs(net)
            flat[idx] = saved
            if any(np.any(a != b) for a, b in zip(signs_plus, signs_minus)):
                # the step straddles a leaky_relu kink
                continue
            numeric = (plus - minus) / (2.0 * FD_STEP)
            worst = max(worst, abs(numeric - gflat[idx]) / max(1.0, abs(gflat[idx])))
    return worst


@pytest.mark.parametrize("name", sorted(ARCHITECTURES))
@pytest.mark.parametrize("activation", ["leaky_relu", "tanh"])
def test_gradients_match_finite_differences(name, activation):
    in_dim, hidden, out_dim = ARCHITECTURES[name]
    rng = Rng(21).split(name)
    net = Mlp(build_layers(in_dim, hidden, out_dim, activation), rng.split("init"))
    for i in range(len(net.biases)):
        net.biases[i] = 0.1 * rng.split(f"bias-{i}").normal(1, net.biases[i].size).reshape(-1)
    x = rng.split("x").normal(8, in_dim)
    upstream = rng.split("up").normal(8, out_dim)
    assert fd_check(net, x, upstream, rng) < FD_TOL


def test_input_gradient_matches_finite_differences(rng):
    net = Mlp(build_layers(4, (16,), 2, "tanh"), rng.split("init"))
    x = rng.split("x").normal(3, 4)
    upstream = rng.split("up").normal(3, 2)
    net.forward(x)
    grad_x = net.backward(upstream)
    for r in range(3):
        for c in range(4):
            bumped = x.copy()
            bumped[r, c] += FD_STEP
            plus = np.sum(upstream * net.forward(bumped))
            bumped[r, c] -= 2 * FD_STEP
            minus = np.sum(upstream * net.forward(bumped))
            assert abs((plus - minus) / (2 * FD_STEP) - grad_x[r, c]) < FD_TOL


def test_gradients_match_torch_autograd(rng):
    torch = pytest.importorskip("torch")
    net = Mlp(build_layers(5, (12, 7), 3, "leaky_relu"), rng.split("init"))
    x = rng.split("x").normal(4, 5)
    upstream = rng.split("up").normal(4, 3)
    net.forward(x)
    net.backward(upstream)

    params = [torch.tensor(p, dtype=torch.float64, requires_grad=True) for p in net.parameters()]
    h = torch.tensor(x, dtype=torch.float64)
    for i, spec in enumerate(net.layers):
        pre = h @ params[2 * i].T + params[2 * i + 1]
        h = torch.nn.functional.leaky_relu(pre, spec.slope) if spec.activation == "leaky_relu" else pre
    (h * torch.tensor(upstream)).sum().backward()
    for p, ours in zip(params, net.gradients()):
        assert np.max(np.abs(p.grad.numpy() - ours)) < 1e-10


def test_forward_zero_weights_gives_activated_bias():
    net = Mlp([LayerSpec(3, 2, "tanh")])
    net.biases[0] = np.array([0.5, -1.0])
    out = forward(net, np.ones((4, 3)))
    assert np.allclose(out, np.tanh([0.5, -1.0]))


def test_forward_identity_network(rng):
    net = Mlp([LayerSpec(3, 3)])
    net.weights[0] = np.eye(3)
    x = rng.normal(5, 3)
    assert np.array_equal(forward(net, x), x)


def test_forward_matches_straight_line_recomputation(rng):
    net = Mlp(build_layers(4, (6,), 2, "leaky_relu", 0.1), rng.split("init"))
    x = rng.split("x").normal(7, 4)
    pre = x @ net.weights[0].T + net.biases[0]
    hidden = np.where(pre > 0, pre, 0.1 * pre)
    expected = hidden @ net.weights[1].T + net.biases[1]
    assert np.max(np.abs(forward(net, x) - expected)) < 1e-12


def test_forward_rejects_wrong_width(rng):
    net = Mlp(build_layers(4, (), 2), rng)
    with pytest.raises(DimensionError):
        net.forward(np.ones((2, 3)))


def test_backward_without_forward_is_an_error():
    with pytest.raises(PreconditionError):
        Mlp([LayerSpec(2, 2)]).backward(np.ones((1, 2)))


def test_zero_upstream_gives_zero_gradients(rng):
    net = Mlp(build_layers(3, (5,), 2, "tanh"), rng)
    x = rng.split("x").normal(4, 3)
    net.forward(x)
    grad_x = backward(net, np.zeros((4, 2)))
    assert not np.any(grad_x)
    assert all(not np.any(g) for g in net.gradients())


def test_scalar_squared_loss_gradient_is_exact():
    net = Mlp([LayerSpec(1, 1)])
    net.weights[0][0, 0] = 2.0
    x, y = np.array([[3.0]]), 1.0
    out = net.forward(x)
    net.backward(out - y)
    assert net.grad_weights[0][0, 0] == (2.0 * 3.0 - y) * 3.0


def test_sgd_with_zero_gradients_is_a_fixed_point(rng):
    net = Mlp(build_layers(3, (4,), 2), rng)
    before = [p.copy() for p in net.parameters()]
    step(Optimizer("sgd", 0.1), net)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_adam_single_step_matches_hand_formula():
    net = Mlp([LayerSpec(1, 1)])
    net.weights[0][0, 0] = 0.5
    net.grad_weights[0][0, 0] = 1.0
    Optimizer("adam", 1e-3).step(net)
    b1, b2, eps, g = 0.9, 0.999, 1e-8, 1.0
    m_hat = ((1 - b1) * g) / (1 - b1)
    v_hat = ((1 - b2) * g * g) / (1 - b2)
    expected = 0.5 - 1e-3 * m_hat / (np.sqrt(v_hat) + eps)
    assert abs(net.weights[0][0, 0] - expected) < 1e-12
    assert net.biases[0][0] == 0.0
    assert net.grad_weights[0][0, 0] == 0.0


def test_identical_nets_identical_updates(rng):
    a = Mlp(build_layers(3, (4,), 2), rng.split("init"))
    b = a.copy()
    x = rng.split("x").normal(5, 3)
    opt = Optimizer("adam", 1e-2)
    for net in (a, b):
        net.forward(x)
        net.backward(np.ones((5, 2)))
        opt.step(net)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_optimizer_rejects_non_finite_update():
    net = Mlp([LayerSpec(1, 1)])
    net.grad_weights[0][0, 0] = np.inf
    with pytest.raises(NumericError):
        Optimizer("sgd", 1.0).step(net)


def test_lipschitz_bound_of_scaled_identities():
    one = Mlp([LayerSpec(3, 3)])
    one.weights[0] = 2.0 * np.eye(3)
    assert lipschitz_upper_bound(one) == pytest.approx(2.0, abs=1e-12)

    two = Mlp([LayerSpec(3, 3), LayerSpec(3, 3)])
    two.weights[0], two.weights[1] = 2.0 * np.eye(3), 3.0 * np.eye(3)
    assert two.lipschitz_upper_bound() == pytest.approx(6.0, abs=1e-12)


def test_lipschitz_bound_dominates_empirical_ratio(rng):
    net = Mlp(build_layers(4, (32, 32), 3, "leaky_relu"), rng.split("init"))
    x = rng.split("x").normal(500, 4)
    empirical = empirical_lipschitz(net.forward, x, rng.split("pairs"), pairs=10000)
    assert 0.0 < empirical <= lipschitz_upper_bound(net) * (1 + 1e-9)


def test_layer_spec_round_trips_through_text():
    spec = LayerSpec(7, 3, "leaky_relu", 0.2)
    assert LayerSpec.parse(spec.describe()) == spec
    with pytest.raises(ValueError):
        LayerSpec(2, 2, "relu6")


def test_predict_matches_forward_without_caching(rng):
    net = Mlp(build_layers(3, (6,), 2), rng)
    x = rng.split("x").normal(5, 3)
    out = net.predict(x)
    assert net._cache is None and net._pre is None
    assert np.array_equal(out, net.forward(x))
    assert net._cache is not None
