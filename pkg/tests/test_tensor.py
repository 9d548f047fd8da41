import math

import numpy as np
import pytest

from im2im import tensor as T
from im2im.rng import RngStream
from im2im.tensor import ShapeMismatchError, Tensor, backward, trace


def test_sum_backward_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_elementwise_square_backward():
    data = np.array([1.0, -2.0, 3.0])
    x = Tensor(data, requires_grad=True)
    backward(T.mul(x, x).sum())
    assert np.allclose(x.grad, 2 * data, atol=0, rtol=0)


def test_grads_accumulate_across_uses():
    x = Tensor(np.ones(4), requires_grad=True)
    y = T.add(x, x)
    backward(y.sum())
    assert np.array_equal(x.grad, 2 * np.ones(4))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatchError):
        backward(T.scale(x, 2.0))


def test_non_participating_tensor_has_zero_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    z = Tensor(np.ones(3), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(z.grad, np.zeros(3))


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeMismatchError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_graph_linearity():
    # backward of a*f + b*g equals a*backward(f) + b*backward(g) elementwise
    rng = np.random.default_rng(11)
    data = rng.standard_normal((4, 5))
    a, b = 1.7, -0.6

    def grad_of(build):
        x = Tensor(data.copy(), requires_grad=True)
        backward(build(x))
        return x.grad

    f = lambda x: T.tanh(x).sum()
    g = lambda x: T.square(x).mean()
    combined = grad_of(lambda x: T.add(T.scale(f(x), a), T.scale(g(x), b)))
    separate = a * grad_of(f) + b * grad_of(g)
    assert np.abs(combined - separate).max() < 1e-12


def test_trace_topological_order_and_single_visit():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.mul(x, x)
    z = T.add(y, y)  # diamond: y used twice
    loss = z.sum()
    graph = trace(loss)
    assert len(graph.nodes) == len({id(n) for n in graph.nodes}) == 3
    seen = set()
    for node in graph.nodes:
        for inp in node.inputs:
            if inp.node is not None:
                assert id(inp.node) in seen, "input node must precede its consumer"
        seen.add(id(node))


def test_activation_definitions():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(T.relu(x).data, [0.0, 0.0, 2.0])
    assert T.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5
    assert T.tanh(Tensor(np.zeros(1))).data[0] == 0.0
    assert np.allclose(T.leaky_relu(x, 0.2).data, [-0.2, 0.0, 2.0])
    with pytest.raises(ValueError):
        T.activation(x, "softsign")


def test_leaky_relu_gradient_at_minus_one():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    backward(T.leaky_relu(x, 0.2).sum())
    analytic = x.grad[0]
    h = 1e-6

    def f(v):
        return float(T.leaky_relu(Tensor(np.array([v])), 0.2).data[0])

    numeric = (f(-1.0 + h) - f(-1.0 - h)) / (2 * h)
    assert abs(analytic - 0.2) < 1e-12
    assert abs(numeric - analytic) < 1e-8


def test_bce_with_logits_values():
    zeros = Tensor(np.zeros((2, 2)))
    loss = T.bce_with_logits(zeros, 1.0).mean()
    assert abs(loss.item() - math.log(2)) < 1e-12
    big = Tensor(np.full((2, 2), 20.0))
    assert T.bce_with_logits(big, 1.0).mean().item() < 1e-8


def test_bce_with_logits_matches_scalar_reference():
    # the defining formula evaluated at 50 digits, so the oracle itself
    # carries no cancellation error
    import mpmath

    mpmath.mp.dps = 50
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((3, 5)) * 3.0
    for target in (0.0, 1.0):
        got = T.bce_with_logits(Tensor(logits.copy()), target).data
        for idx in np.ndindex(logits.shape):
            x = mpmath.mpf(logits[idx])
            p = 1 / (1 + mpmath.exp(-x))
            want = -(target * mpmath.log(p) + (1 - target) * mpmath.log(1 - p))
            assert abs(got[idx] - float(want)) < 1e-12


def test_fixed_seed_forward_backward_bit_identical():
    def run():
        stream = RngStream(99)
        x = Tensor(stream.normal((2, 3, 4, 4)), requires_grad=True)
        from im2im.ops import dropout

        loss = T.square(dropout(x, 0.5, stream)).mean()
        backward(loss)
        return loss.item(), x.grad.copy()

    loss_a, grad_a = run()
    loss_b, grad_b = run()
    assert loss_a == loss_b
    assert np.array_equal(grad_a, grad_b)


def test_detach_cuts_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.square(x)
    z = y.detach()
    assert not z.requires_grad and z.node is None
    assert np.shares_memory(z.data, y.data)
