import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elbsde.deepnet import (
    MLP,
    AdamState,
    Normalizer,
    adam_step,
    backward,
    elu,
    forward,
    forward_tensor,
    gradient,
    normalize,
    param,
    read_checkpoint,
    write_checkpoint,
)
from elbsde.deepnet import autodiff as ad
from elbsde.errors import DimMismatch, InvariantViolation, NonFiniteGradient, ParseError

# --- normalisation ------------------------------------------------------------


def test_normalize_examples():
    nz = Normalizer([0.0, 0.075], [2.0, 0.125])
    np.testing.assert_allclose(normalize([0.0, 0.075], nz), [-1, -1])
    np.testing.assert_allclose(normalize([2.0, 0.125], nz), [1, 1])
    assert normalize([1.0, 0.1], nz)[1] == pytest.approx(0.0, abs=1e-14)
    assert normalize([1.5, 0.1], nz)[0] == pytest.approx(0.5)
    # no clamping outside the range
    assert normalize([4.0, 0.1], nz)[0] == pytest.approx(3.0)
    with pytest.raises(InvariantViolation):
        Normalizer([0.0], [0.0])


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_denormalize_inverts_normalize(x):
    nz = Normalizer([-1.0, 0.0, 5.0], [1.0, 3.0, 9.0])
    np.testing.assert_allclose(nz.denormalize(nz(x)), x, atol=1e-10)


# --- forward ------------------------------------------------------------------


def test_elu_values():
    assert elu(np.array(-1.0)) == pytest.approx(math.exp(-1) - 1)
    assert elu(np.array(-1.0)) == pytest.approx(-0.63212, abs=5e-6)
    assert elu(np.array(2.0)) == 2.0


def test_zero_network_outputs_zero():
    net = MLP((6, 20, 20, 1))
    assert forward(net, np.ones(6)) == 0.0


def test_hand_computed_two_neuron_net():
    net = MLP((1, 2, 1), [np.array([[1.0], [-2.0]]), np.array([[0.5, -1.5]])],
              [np.array([0.1, 0.3]), np.array([0.2])])
    x = 0.7
    h = [elu(np.array(1.0 * x + 0.1)), elu(np.array(-2.0 * x + 0.3))]
    expected = 0.5 * h[0] - 1.5 * h[1] + 0.2
    assert forward(net, [x])[0] == pytest.approx(float(expected), abs=1e-12)
    # pencil values: h = (0.8, e^{-1.1} - 1)
    assert float(expected) == pytest.approx(0.5 * 0.8 - 1.5 * (math.exp(-1.1) - 1) + 0.2, abs=1e-12)


def test_forward_dim_mismatch():
    with pytest.raises(DimMismatch):
        forward(MLP((3, 4, 1)), np.ones(2))
    with pytest.raises(DimMismatch):
        MLP((3, 4, 1), [np.zeros((4, 2)), np.zeros((1, 4))])


def test_initialization(rng):
    net = MLP.initialized((7, 20, 20, 5), rng, out_bias=2.5)
    lim = math.sqrt(6 / 27)
    assert np.all(np.abs(net.weights[0]) <= lim)
    assert np.all(net.weights[-1] == 0) and np.all(net.biases[-1] == 2.5)
    assert np.all(net.biases[0] == 0)


def test_forward_tensor_matches_forward(rng):
    net = MLP.initialized((4, 5, 3, 2), rng)
    for W in net.weights:
        W += rng.normal(size=W.shape)
    x = rng.normal(size=(6, 4))
    np.testing.assert_allclose(forward_tensor(net.tensors(), x).value, forward(net, x), atol=1e-14)


# --- reverse mode -------------------------------------------------------------


def _fd_check(fn, leaves, h=1e-5):
    """Largest relative error of the reverse-mode gradient against central differences."""
    loss = fn()
    grads = gradient(loss, leaves)
    worst = 0.0
    for leaf, g in zip(leaves, grads):
        flat = leaf.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().value)
            flat[i] = old - h
            dn = float(fn().value)
            flat[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - g.reshape(-1)[i]) / max(1.0, abs(fd)))
    return worst


def test_zero_net_output_bias_gradient():
    net = MLP((3, 4, 1))
    leaves = net.tensors()
    out = forward_tensor(leaves, np.ones((1, 3)))
    grads = gradient(ad.sum(ad.square(out)), leaves)
    assert np.all(grads[-1] == 0.0)


def test_random_net_gradient_matches_finite_differences(rng):
    net = MLP.initialized((3, 6, 4, 2), rng)
    for W in net.weights + net.biases:
        W += 0.3 * rng.normal(size=W.shape)
    leaves = net.tensors()
    x = rng.normal(size=(5, 3))
    assert _fd_check(lambda: ad.mean(ad.square(forward_tensor(leaves, x))), leaves) < 1e-4


@pytest.mark.parametrize("op", ["add", "sub", "mul", "matmul", "elu", "sqrt", "relu", "square", "quadform",
                                "getitem", "sum_axis"])
def test_registered_ops_match_finite_differences(op, rng):
    a = param(rng.uniform(0.2, 1.5, size=(3, 4)))
    b = param(rng.normal(size=(3, 4)))
    c = param(rng.normal(size=(4, 2)))
    M = param(np.einsum("bij,bkj->bik", *(2 * [rng.normal(size=(3, 4, 4))])))
    fns = {
        "add": lambda: ad.sum(ad.square(a + b)),
        "sub": lambda: ad.sum(ad.square(a - b)),
        "mul": lambda: ad.sum(a * b * b),
        "matmul": lambda: ad.sum(ad.square(a @ c)),
        "elu": lambda: ad.sum(ad.elu(b) * a),
        "sqrt": lambda: ad.sum(ad.sqrt(a) * b),
        "relu": lambda: ad.sum(ad.relu(b + 0.05) * a),
        "square": lambda: ad.sum(ad.square(b) * a),
        "quadform": lambda: ad.sum(ad.quadform(b, M)),
        "getitem": lambda: ad.sum(ad.square(ad.getitem(a, (slice(None), 1))) * 3.0),
        "sum_axis": lambda: ad.sum(ad.square(ad.sum(a * b, axis=1))),
    }
    leaves = [a, b, c, M]
    assert _fd_check(fns[op], leaves) < 1e-4


def test_sqrt_derivative_is_analytic():
    x = param(np.array([0.25, 4.0]))
    g = gradient(ad.sum(ad.sqrt(x)), [x])[0]
    np.testing.assert_allclose(g, 0.5 / np.sqrt([0.25, 4.0]), rtol=1e-15)


def test_non_finite_gradient_raises():
    x = param(np.array([0.0]))
    with pytest.raises(NonFiniteGradient), np.errstate(divide="ignore"):
        backward(ad.sum(ad.sqrt(x)))


# --- Adam -----------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.for_params(p)
    adam_step(st_, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_is_lr_sized():
    p = [np.array([0.5])]
    adam_step(AdamState.for_params(p), p, [np.array([3.7])])
    assert p[0][0] == pytest.approx(0.5 - 1e-3, abs=1e-10)


def test_adam_two_steps_hand_recursion():
    p = [np.array([0.0])]
    st_ = AdamState.for_params(p)
    g = 0.2
    m = v = 0.0
    x = 0.0
    for t in (1, 2):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 1e-3 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        adam_step(st_, p, [np.array([g])])
    assert p[0][0] == pytest.approx(x, abs=1e-12)


# --- checkpoints ----------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    nets = {"n1": MLP.initialized((6, 20, 20, 1), rng, 5.9), "n2": MLP.initialized((7, 20, 20, 5), rng)}
    for net in nets.values():
        for W in net.weights + net.biases:
            W += rng.normal(size=W.shape) * 1e-3
    nz = Normalizer(rng.normal(size=7), rng.normal(size=7) + 10)
    path = tmp_path / "m.ckpt"
    write_checkpoint(path, nets, nz, {"alpha": "0.1"})
    assert path.read_text().splitlines()[0] == "ELBSDE-CKPT v1"
    got, got_nz, meta = read_checkpoint(path)
    assert got == nets and got_nz == nz and meta == {"alpha": "0.1"}


def test_checkpoint_parse_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("nonsense\n")
    with pytest.raises(ParseError) as exc:
        read_checkpoint(bad)
    assert exc.value.line == 1
    bad.write_text("ELBSDE-CKPT v1\nnetwork n 3 1 1 1\n0.5\n0.1 0.2\n")
    with pytest.raises(ParseError) as exc:
        read_checkpoint(bad)
    assert exc.value.line == 4
