"""Finite-difference certification of every differentiable operation.

Each registered case builds small random float64 inputs and a scalar loss
closure; the analytic gradients from one backward pass are compared against
central differences of the loss. The per-op figure of merit is

    max |g_analytic - g_numeric| / max(|g_analytic|_inf, |g_numeric|_inf)

taken over all input elements, which stays meaningful when individual
gradient entries are near zero.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops, tensor
from .rng import RngStream
from .tensor import Tensor, backward

TOLERANCE = 1e-4
STEP = 1e-5
DEFAULT_TRIALS = 10
DEFAULT_BASE_SEED = 7


@dataclass
class OpCase:
    name: str
    build: Callable[[np.random.Generator], tuple[list[Tensor], Callable[[], Tensor]]]


def _probe_loss(out: Tensor, probe: Tensor) -> Tensor:
    return tensor.mul(out, probe).sum()


def _smooth(rng, shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return x + margin * np.sign(x)


def _unary_case(fn, sampler=_smooth, shape=(3, 4)):
    def build(rng):
        x = Tensor(sampler(rng, shape), requires_grad=True)
        probe = Tensor(rng.standard_normal(shape))
        return [x], lambda: _probe_loss(fn(x), probe)

    return build


def _binary_case(fn, shape=(3, 4)):
    def build(rng):
        a = Tensor(rng.standard_normal(shape), requires_grad=True)
        b = Tensor(rng.standard_normal(shape), requires_grad=True)
        probe = Tensor(rng.standard_normal(shape))
        return [a, b], lambda: _probe_loss(fn(a, b), probe)

    return build


def _build_scale(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = float(rng.standard_normal())
    probe = Tensor(rng.standard_normal((3, 4)))
    return [x], lambda: _probe_loss(tensor.scale(x, c), probe)


def _build_add_scalar(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = float(rng.standard_normal())
    probe = Tensor(rng.standard_normal((3, 4)))
    return [x], lambda: _probe_loss(tensor.add_scalar(x, c), probe)


def _build_sum(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = float(rng.standard_normal())
    return [x], lambda: tensor.scale(x.sum(), c)


def _build_mean(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = float(rng.standard_normal())
    return [x], lambda: tensor.scale(x.mean(), c)


def _build_bce(rng):
    x = Tensor(rng.standard_normal((3, 4)) * 2.0, requires_grad=True)
    target = float(rng.integers(0, 2))
    probe = Tensor(rng.standard_normal((3, 4)))
    return [x], lambda: _probe_loss(tensor.bce_with_logits(x, target), probe)


def _build_dropout(rng):
    shape = (2, 3, 4)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    probe = Tensor(rng.standard_normal(shape))
    stream = RngStream(int(rng.integers(0, 2**63)))
    snap = stream.get_state()

    def fwd():
        stream.set_state(snap)  # identical mask on every evaluation
        return _probe_loss(ops.dropout(x, 0.4, stream), probe)

    return [x], fwd


def _build_concat(rng):
    a = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True)
    probe = Tensor(rng.standard_normal((2, 5, 4, 4)))
    return [a, b], lambda: _probe_loss(ops.concat_channels(a, b), probe)


def _build_conv2d(rng):
    c, f = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(4, 7))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    x = Tensor(rng.standard_normal((2, c, h, h)), requires_grad=True)
    kern = Tensor(rng.standard_normal((f, c, k, k)), requires_grad=True)
    bias = Tensor(rng.standard_normal(f), requires_grad=True)
    oh = ops.conv_output_extent(h, k, stride, padding)
    probe = Tensor(rng.standard_normal((2, f, oh, oh)))
    return [x, kern, bias], lambda: _probe_loss(
        ops.conv2d(x, kern, bias, stride, padding), probe
    )


def _build_conv_transpose2d(rng):
    c, f = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(4, 7))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    oh = (h - 1) * stride - 2 * padding + k
    if oh < 1:
        stride, padding = 2, 0
        oh = (h - 1) * stride + k
    x = Tensor(rng.standard_normal((2, c, h, h)), requires_grad=True)
    kern = Tensor(rng.standard_normal((c, f, k, k)), requires_grad=True)
    bias = Tensor(rng.standard_normal(f), requires_grad=True)
    probe = Tensor(rng.standard_normal((2, f, oh, oh)))
    return [x, kern, bias], lambda: _probe_loss(
        ops.conv_transpose2d(x, kern, bias, stride, padding), probe
    )


def _build_batchnorm_train(rng):
    shape = (2, 3, 3, 3)
    x = Tensor(rng.standard_normal(shape) * 1.5, requires_grad=True)
    gamma = Tensor(1.0 + 0.3 * rng.standard_normal(3), requires_grad=True)
    beta = Tensor(rng.standard_normal(3), requires_grad=True)
    probe = Tensor(rng.standard_normal(shape))
    return [x, gamma, beta], lambda: _probe_loss(
        ops.batchnorm2d(x, gamma, beta, mode="train", running=None), probe
    )


def _build_batchnorm_eval(rng):
    shape = (2, 3, 3, 3)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    gamma = Tensor(1.0 + 0.3 * rng.standard_normal(3), requires_grad=True)
    beta = Tensor(rng.standard_normal(3), requires_grad=True)
    running = ops.RunningStats(
        mean=rng.standard_normal(3), var=np.abs(rng.standard_normal(3)) + 0.5
    )
    probe = Tensor(rng.standard_normal(shape))
    return [x, gamma, beta], lambda: _probe_loss(
        ops.batchnorm2d(x, gamma, beta, mode="eval", running=running), probe
    )


REGISTRY: dict[str, OpCase] = {
    case.name: case
    for case in [
        OpCase("add", _binary_case(tensor.add)),
        OpCase("sub", _binary_case(tensor.sub)),
        OpCase("mul", _binary_case(tensor.mul)),
        OpCase("scale", _build_scale),
        OpCase("add_scalar", _build_add_scalar),
        OpCase("sum", _build_sum),
        OpCase("mean", _build_mean),
        OpCase("abs", _unary_case(tensor.absolute, _away_from_zero)),
        OpCase("square", _unary_case(tensor.square)),
        OpCase("relu", _unary_case(tensor.relu, _away_from_zero)),
        OpCase("leaky_relu", _unary_case(lambda t: tensor.leaky_relu(t, 0.2), _away_from_zero)),
        OpCase("tanh", _unary_case(tensor.tanh)),
        OpCase("sigmoid", _unary_case(tensor.sigmoid)),
        OpCase("bce_with_logits", _build_bce),
        OpCase("dropout", _build_dropout),
        OpCase("concat_channels", _build_concat),
        OpCase("conv2d", _build_conv2d),
        OpCase("conv_transpose2d", _build_conv_transpose2d),
        OpCase("batchnorm2d", _build_batchnorm_train),
        OpCase("batchnorm2d_eval", _build_batchnorm_eval),
    ]
}


def _trial_rng(name: str, base_seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64([base_seed, zlib.crc32(name.encode()), trial])
    )


def _numeric_gradient(inputs, fwd, h=STEP):
    grads = []
    for t in inputs:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fwd().item()
            flat[i] = orig - h
            down = fwd().item()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def check_case(case: OpCase, trials: int = DEFAULT_TRIALS, base_seed: int = DEFAULT_BASE_SEED) -> float:
    """Max relative error of analytic vs central-difference gradients."""
    worst = 0.0
    for trial in range(trials):
        inputs, fwd = case.build(_trial_rng(case.name, base_seed, trial))
        loss = fwd()
        backward(loss)
        analytic = [np.array(t.grad) for t in inputs]
        numeric = _numeric_gradient(inputs, fwd)
        for ga, gn in zip(analytic, numeric):
            scale = max(np.abs(ga).max(), np.abs(gn).max(), 1e-12)
            worst = max(worst, float(np.abs(ga - gn).max() / scale))
    return worst


def run_gradcheck(
    op_names=None, trials: int = DEFAULT_TRIALS, base_seed: int = DEFAULT_BASE_SEED
) -> dict[str, float]:
    """Run the finite-difference suite; returns {op name: max relative error}."""
    if op_names is None or op_names == ["all"]:
        op_names = list(REGISTRY)
    unknown = [n for n in op_names if n not in REGISTRY]
    if unknown:
        raise ValueError(f"unknown gradcheck op name(s): {', '.join(unknown)}")
    return {name: check_case(REGISTRY[name], trials, base_seed) for name in op_names}
