import numpy as np
import pytest

from im2im.ops import (
    DegenerateVarianceError,
    RunningStats,
    batchnorm2d,
    concat_channels,
    conv2d,
    conv_transpose2d,
    dropout,
)
from im2im.rng import RngStream
from im2im.tensor import ShapeMismatchError, Tensor, backward


def conv2d_reference(x, w, b, stride, padding):
    """Direct six-nested-loop convolution used as the oracle."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += xp[ni, ci, i * stride + a, j * stride + bb] * w[fi, ci, a, bb]
                    out[ni, fi, i, j] = acc + b[fi]
    return out


def conv_transpose2d_reference(x, w, b, stride, padding):
    """Scatter-accumulate oracle for the transposed convolution."""
    n, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    out = np.zeros((n, f, oh + 2 * padding, ow + 2 * padding))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    for fi in range(f):
                        out[ni, fi, i * stride : i * stride + kh, j * stride : j * stride + kw] += (
                            x[ni, ci, i, j] * w[ci, fi]
                        )
    out = out[:, :, padding : padding + oh, padding : padding + ow]
    return out + b[None, :, None, None]


def test_conv2d_all_ones_sums_window():
    x = Tensor(np.ones((1, 1, 3, 3)))
    k = Tensor(np.ones((1, 1, 2, 2)))
    out = conv2d(x, k, Tensor(np.zeros(1)), 1, 0)
    assert out.data.shape == (1, 1, 2, 2)
    assert np.array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 1, 5, 5)))
    k = Tensor(np.ones((1, 1, 1, 1)))
    out = conv2d(x, k, Tensor(np.zeros(1)), 1, 0)
    assert np.array_equal(out.data, x.data)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(42)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    want = conv2d_reference(x, w, b, stride=2, padding=1)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-12


def test_conv2d_shape_errors_report_dimensions():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ShapeMismatchError, match="channel"):
        conv2d(x, Tensor(np.ones((1, 3, 2, 2))), Tensor(np.zeros(1)), 1, 0)
    with pytest.raises(ShapeMismatchError, match="exceeds"):
        conv2d(x, Tensor(np.ones((1, 2, 6, 6))), Tensor(np.zeros(1)), 1, 0)


def test_conv_transpose2d_single_pixel_broadcast():
    x = Tensor(np.ones((1, 1, 1, 1)))
    k = Tensor(np.ones((1, 1, 2, 2)))
    out = conv_transpose2d(x, k, Tensor(np.zeros(1)), 1, 0)
    assert np.array_equal(out.data, np.ones((1, 1, 2, 2)))


def test_conv_transpose2d_output_shape_formula():
    x = Tensor(np.ones((1, 1, 2, 2)))
    for stride, padding, k in ((2, 0, 4), (2, 1, 4), (1, 0, 3)):
        out = conv_transpose2d(x, Tensor(np.ones((1, 1, k, k))), Tensor(np.zeros(1)), stride, padding)
        expected = (2 - 1) * stride - 2 * padding + k
        assert out.data.shape == (1, 1, expected, expected)


def test_conv_transpose2d_matches_scatter_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    got = conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    want = conv_transpose2d_reference(x, w, b, stride=2, padding=1)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-12


def test_conv_transpose_is_adjoint_of_conv():
    # <conv2d(x), y> == <x, conv_transpose2d(y)> with the shared kernel array;
    # geometries chosen so the transposed output extent matches the input
    rng = np.random.default_rng(5)
    for stride, padding, k in ((1, 0, 3), (2, 1, 4), (2, 0, 2)):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, k, k))
        zero_f = Tensor(np.zeros(4))
        zero_c = Tensor(np.zeros(3))
        cx = conv2d(Tensor(x), Tensor(w), zero_f, stride, padding).data
        y = rng.standard_normal(cx.shape)
        ty = conv_transpose2d(Tensor(y), Tensor(w), zero_c, stride, padding).data
        assert ty.shape == x.shape
        lhs = float((cx * y).sum())
        rhs = float((x * ty).sum())
        assert abs(lhs - rhs) < 1e-10


def test_batchnorm_normalizes_in_train_mode():
    # epsilon shifts the output variance by eps/var; pin it tiny so the
    # normalization property itself is what gets measured
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3.0 + 2.0)
    out = batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), mode="train", epsilon=1e-12).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
    assert np.abs(out.var(axis=(0, 2, 3)) - 1.0).max() < 1e-6


def test_batchnorm_affine_is_exact():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 4, 4))
    base = batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="train").data
    scaled = batchnorm2d(Tensor(x), Tensor(np.full(2, 2.0)), Tensor(np.full(2, 3.0)), mode="train").data
    assert np.array_equal(scaled, 2.0 * base + 3.0)


def test_batchnorm_degenerate_variance_error():
    x = Tensor(np.ones((1, 3, 1, 1)))
    with pytest.raises(DegenerateVarianceError):
        batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), mode="train")


def test_batchnorm_eval_uses_running_stats():
    running = RunningStats(mean=np.array([1.0, -1.0]), var=np.array([4.0, 0.25]))
    x = Tensor(np.ones((1, 2, 2, 2)))
    out = batchnorm2d(
        x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="eval", running=running, epsilon=0.0
    ).data
    assert np.allclose(out[0, 0], 0.0)
    assert np.allclose(out[0, 1], 2.0 / 0.5)


def test_batchnorm_updates_running_stats():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 2, 3, 3)) + 5.0
    running = RunningStats.initial(2, dtype=np.float64)
    batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="train",
                running=running, momentum=0.1)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    assert np.allclose(running.mean, 0.9 * 0.0 + 0.1 * mu)
    assert np.allclose(running.var, 0.9 * 1.0 + 0.1 * var)


def test_dropout_rate_zero_is_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    out = dropout(x, 0.0, RngStream(0))
    assert np.array_equal(out.data, x.data)


def test_dropout_same_state_same_mask():
    x = Tensor(np.ones((4, 4)))
    a = dropout(x, 0.5, RngStream(123)).data
    b = dropout(x, 0.5, RngStream(123)).data
    assert np.array_equal(a, b)


def test_dropout_survivor_statistics():
    n = 100_000
    x = Tensor(np.ones(n))
    out = dropout(x, 0.5, RngStream(77)).data
    survivors = np.count_nonzero(out) / n
    assert 0.49 <= survivors <= 0.51
    assert abs(out.mean() - 1.0) <= 0.02  # input mean is exactly 1


def test_dropout_rejects_rate_one():
    with pytest.raises(ValueError):
        dropout(Tensor(np.ones(3)), 1.0, RngStream(0))


def test_concat_channels_shapes_and_identity():
    a = Tensor(np.ones((1, 3, 4, 4)))
    b = Tensor(np.zeros((1, 1, 4, 4)))
    out = concat_channels(a, b)
    assert out.data.shape == (1, 4, 4, 4)
    empty = Tensor(np.zeros((1, 0, 4, 4)))
    assert np.array_equal(concat_channels(a, empty).data, a.data)
    with pytest.raises(ShapeMismatchError):
        concat_channels(a, Tensor(np.ones((1, 1, 5, 4))))


def test_concat_backward_splits_exactly():
    a = Tensor(np.random.default_rng(0).standard_normal((2, 3, 2, 2)), requires_grad=True)
    b = Tensor(np.random.default_rng(1).standard_normal((2, 2, 2, 2)), requires_grad=True)
    backward(concat_channels(a, b).sum())
    assert np.array_equal(a.grad, np.ones_like(a.data))
    assert np.array_equal(b.grad, np.ones_like(b.data))
