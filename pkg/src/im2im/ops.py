"""Structured network operations: convolutions, batchnorm, dropout, concat.

Convolutions run through an im2col/col2im lowering so the heavy lifting is a
single matrix product; the transposed convolution is implemented as the exact
adjoint of conv2d (col2im of the input-times-kernel product), which makes
<conv2d(x), y> == <x, conv_transpose2d(y)> hold by construction for kernels
sharing the same underlying array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import ShapeMismatchError, Tensor, register_op


class DegenerateVarianceError(ValueError):
    """Train-mode batchnorm over fewer than two values per channel."""


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1


def _check_conv_args(stride: int, padding: int) -> None:
    if not (isinstance(stride, int) and stride >= 1):
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, int) and padding >= 0):
        raise ValueError(f"padding must be a non-negative int, got {padding!r}")


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Gather sliding patches of x[N,C,H,W] into rows of shape (N*oh*ow, C*kh*kw)."""
    n, c, h, w = x.shape
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    col = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for a in range(kh):
        a_max = a + stride * oh
        for b in range(kw):
            b_max = b + stride * ow
            col[:, :, a, b, :, :] = x[:, :, a:a_max:stride, b:b_max:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def col2im(
    cols: np.ndarray,
    shape: tuple,
    kh: int,
    kw: int,
    stride: int,
    padding: int,
) -> np.ndarray:
    """Scatter-add patch rows back into an array of ``shape`` (adjoint of im2col)."""
    n, c, h, w = shape
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for a in range(kh):
        a_max = a + stride * oh
        for b in range(kw):
            b_max = b + stride * ow
            out[:, :, a:a_max:stride, b:b_max:stride] += cols[:, :, a, b, :, :]
    if padding:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x[N,C,H,W] with kernel[F,C,kh,kw] plus per-filter bias."""
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects 4-d input and kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input has {c} channels, kernel expects {ck}"
        )
    if bias.data.shape != (f,):
        raise ShapeMismatchError(f"conv2d bias shape {bias.data.shape}, expected ({f},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeMismatchError(
            f"conv2d kernel {kh}x{kw} exceeds padded input "
            f"{h + 2 * padding}x{w + 2 * padding} (input {h}x{w}, padding {padding})"
        )
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)

    cols = im2col(x.data, kh, kw, stride, padding)
    w_mat = kernel.data.reshape(f, c * kh * kw)
    out = cols @ w_mat.T + bias.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        gx = gk = gb = None
        if x.requires_grad:
            gx = col2im(g2 @ w_mat, (n, c, h, w), kh, kw, stride, padding)
        if kernel.requires_grad:
            gk = (g2.T @ cols).reshape(f, c, kh, kw)
        if bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    return register_op("conv2d", (x, kernel, bias), out, bwd)


def conv_transpose2d(
    x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Transposed convolution of x[N,C,H,W] with kernel[C,F,kh,kw].

    Output extent is (H-1)*stride - 2*padding + kh. The forward map is the
    adjoint of conv2d with the same kernel array, so it coincides with the
    gradient-of-conv2d-input relation.
    """
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv_transpose2d expects 4-d input and kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    n, c, h, w = x.data.shape
    ck, f, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeMismatchError(
            f"conv_transpose2d channel mismatch: input has {c} channels, kernel expects {ck}"
        )
    if bias.data.shape != (f,):
        raise ShapeMismatchError(
            f"conv_transpose2d bias shape {bias.data.shape}, expected ({f},)"
        )
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"conv_transpose2d output extent {oh}x{ow} is empty for input {h}x{w}"
        )

    w_mat = kernel.data.reshape(c, f * kh * kw)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    out = col2im(x2 @ w_mat, (n, f, oh, ow), kh, kw, stride, padding)
    out = out + bias.data[None, :, None, None]

    def bwd(g):
        gx = gk = gb = None
        gcols = None
        if x.requires_grad or kernel.requires_grad:
            gcols = im2col(g, kh, kw, stride, padding)  # (n*h*w, f*kh*kw)
        if x.requires_grad:
            gx = (gcols @ w_mat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        if kernel.requires_grad:
            gk = (x2.T @ gcols).reshape(c, f, kh, kw)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    return register_op("conv_transpose2d", (x, kernel, bias), out, bwd)


@dataclass
class RunningStats:
    """Per-channel running mean/variance updated by train-mode batchnorm."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(mean=np.zeros(channels, dtype=dtype), var=np.ones(channels, dtype=dtype))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running: RunningStats | None = None,
    momentum: float = 0.1,
    epsilon: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel batch normalization over an [N,C,H,W] tensor.

    Train mode normalizes by batch statistics (biased variance) and, when
    ``update_running`` is set, folds them into ``running`` with the given
    momentum. Eval mode normalizes by the running statistics, which are
    treated as constants by the backward rule.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"batchnorm2d expects [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatchError(
            f"batchnorm2d affine shapes {gamma.data.shape}/{beta.data.shape}, expected ({c},)"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" and running is None:
        raise ValueError("batchnorm2d eval mode requires running statistics")

    m = n * h * w
    ga = gamma.data[None, :, None, None]

    if mode == "train":
        if m < 2:
            raise DegenerateVarianceError(
                f"train-mode batchnorm needs at least 2 values per channel, got {m}"
            )
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + epsilon)
        xhat = xc * inv_std[None, :, None, None]
        out = ga * xhat + beta.data[None, :, None, None]
        if running is not None and update_running:
            running.mean[...] = (1.0 - momentum) * running.mean + momentum * mu
            running.var[...] = (1.0 - momentum) * running.var + momentum * var

        def bwd(g):
            gx = ggamma = gbeta = None
            if beta.requires_grad:
                gbeta = g.sum(axis=(0, 2, 3))
            if gamma.requires_grad:
                ggamma = (g * xhat).sum(axis=(0, 2, 3))
            if x.requires_grad:
                istd = inv_std[None, :, None, None]
                dxhat = g * ga
                dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv_std**3
                dmu = -(dxhat * istd).sum(axis=(0, 2, 3)) + dvar * (-2.0 / m) * xc.sum(
                    axis=(0, 2, 3)
                )
                gx = (
                    dxhat * istd
                    + dvar[None, :, None, None] * (2.0 / m) * xc
                    + dmu[None, :, None, None] / m
                )
            return gx, ggamma, gbeta

        return register_op("batchnorm2d", (x, gamma, beta), out, bwd)

    inv_std = 1.0 / np.sqrt(running.var + epsilon)
    xc = x.data - running.mean[None, :, None, None]
    xhat = xc * inv_std[None, :, None, None]
    out = ga * xhat + beta.data[None, :, None, None]

    def bwd_eval(g):
        gx = ggamma = gbeta = None
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if x.requires_grad:
            gx = g * ga * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return register_op("batchnorm2d_eval", (x, gamma, beta), out, bwd_eval)


def dropout(x: Tensor, rate: float, rng: RngStream) -> Tensor:
    """Zero each element with probability ``rate``, scaling survivors by 1/(1-rate).

    There is no inactive mode: dropout realizes the generator noise source and
    stays on at inference as well as during training.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = rng.random(x.data.shape) >= rate
    keep = 1.0 / (1.0 - rate)
    out = x.data * mask * keep

    def bwd(g):
        return (g * mask * keep,)

    return register_op("dropout", (x,), out.astype(x.data.dtype, copy=False), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [N,C,H,W] tensors along the channel axis, a first."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeMismatchError(
            f"concat_channels expects 4-d tensors, got {a.data.shape} and {b.data.shape}"
        )
    na, ca, ha, wa = a.data.shape
    nb, cb, hb, wb = b.data.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeMismatchError(
            f"concat_channels spatial/batch mismatch: {a.data.shape} vs {b.data.shape}"
        )
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        return g[:, :ca], g[:, ca:]

    return register_op("concat_channels", (a, b), out, bwd)
