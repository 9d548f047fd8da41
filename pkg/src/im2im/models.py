"""Declarative model specs and the U-Net / PatchGAN builders.

A ModelSpec is pure data: a flat layer list plus the skip toggle. Networks
interpret the spec structurally - for a generator the layer list is `depth`
stride-2 convs (encoder), `depth` stride-2 transposed convs (decoder) and one
stride-1 head conv; discriminators are a plain conv stack ending in a
1-channel logit map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .ops import RunningStats, batchnorm2d, concat_channels, conv2d, conv_transpose2d, dropout
from .rng import RngStream
from .tensor import ShapeMismatchError, Tensor

PATCH_VARIANTS = ("patch16", "patch70", "patch286")
NOMINAL_FIELD = {"patch16": 16, "patch70": 70, "patch286": 286}

# Channel growth is capped at 8x the base width to bound parameters.
CHANNEL_CAP = 8


@dataclass(frozen=True)
class LayerSpec:
    op: str  # "conv" | "conv_transpose"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    norm: bool = False
    act: str = "none"
    slope: float = 0.2
    drop: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "generator" | "discriminator"
    in_channels: int
    out_channels: int
    skip_connections: bool
    layers: tuple


def generator_parts(spec: ModelSpec):
    """Split a generator layer list into (encoder, decoder, head)."""
    layers = list(spec.layers)
    enc = []
    i = 0
    while i < len(layers) and layers[i].op == "conv":
        enc.append(layers[i])
        i += 1
    dec = []
    while i < len(layers) and layers[i].op == "conv_transpose":
        dec.append(layers[i])
        i += 1
    head = layers[i:]
    if len(enc) < 1 or len(dec) != len(enc) or len(head) != 1 or head[0].op != "conv":
        raise ValueError("generator spec must be convs, then transposed convs, then one head conv")
    return enc, dec, head[0]


def validate_spec(spec: ModelSpec) -> None:
    if spec.kind not in ("generator", "discriminator"):
        raise ValueError(f"unknown model kind {spec.kind!r}")
    if spec.kind == "generator":
        enc, dec, head = generator_parts(spec)
        if head.act != "tanh":
            raise ValueError("generator head activation must be tanh")
        if spec.skip_connections and len(enc) != len(dec):
            raise ValueError("skip connections require equal encoder/decoder depth")
    else:
        if any(layer.op != "conv" for layer in spec.layers):
            raise ValueError("discriminator spec must contain conv layers only")


def layer_names(spec: ModelSpec) -> list[str]:
    if spec.kind == "generator":
        enc, dec, _ = generator_parts(spec)
        return (
            [f"enc{i + 1}" for i in range(len(enc))]
            + [f"dec{j + 1}" for j in range(len(dec))]
            + ["head"]
        )
    return [f"layer{i + 1}" for i in range(len(spec.layers) - 1)] + ["head"]


def parameter_count(spec: ModelSpec) -> int:
    """Trainable parameter count; a pure function of the spec."""
    total = 0
    for layer in spec.layers:
        total += layer.kernel * layer.kernel * layer.in_channels * layer.out_channels
        total += layer.out_channels
        if layer.norm:
            total += 2 * layer.out_channels
    return total


def receptive_field(spec: ModelSpec) -> int:
    """Input extent seen by one output unit, via r_{l-1} = s*r_l + (k - s)."""
    field = 1
    for layer in reversed(spec.layers):
        if layer.op != "conv":
            raise ValueError(f"receptive_field requires a pure conv stack, found {layer.op!r}")
        field = layer.stride * field + (layer.kernel - layer.stride)
    return field


# -- builders ------------------------------------------------------------------


def unet_spec(in_channels: int, out_channels: int, base_width: int, depth: int, skip: bool) -> ModelSpec:
    if depth < 1:
        raise ValueError(f"generator depth must be >= 1, got {depth}")
    if base_width < 1:
        raise ValueError(f"base_width must be >= 1, got {base_width}")
    widths = [min(base_width * 2**i, CHANNEL_CAP * base_width) for i in range(depth)]
    layers = []
    prev = in_channels
    for i, width in enumerate(widths):
        # first block sees raw pixels, the 1x1-bottleneck block skips norm too
        normed = 0 < i < depth - 1
        layers.append(
            LayerSpec("conv", prev, width, 4, 2, 1, norm=normed, act="leaky_relu", slope=0.2)
        )
        prev = width
    for j in range(depth):
        out_w = widths[depth - 2 - j] if j < depth - 1 else base_width
        in_w = prev if j == 0 else prev + (widths[depth - 1 - j] if skip else 0)
        layers.append(
            LayerSpec(
                "conv_transpose",
                in_w,
                out_w,
                4,
                2,
                1,
                norm=True,
                act="relu",
                drop=0.5 if j < 3 else 0.0,
            )
        )
        prev = out_w
    layers.append(LayerSpec("conv", prev, out_channels, 3, 1, 1, norm=False, act="tanh"))
    return ModelSpec("generator", in_channels, out_channels, bool(skip), tuple(layers))


def patchgan_spec(in_channels: int, variant: str, base_width: int) -> ModelSpec:
    if variant not in PATCH_VARIANTS:
        raise ValueError(f"unknown PatchGAN variant {variant!r}; expected one of {PATCH_VARIANTS}")
    n_stride2 = {"patch16": 1, "patch70": 3, "patch286": 5}[variant]
    layers = []
    prev = in_channels
    for i in range(n_stride2):
        width = min(base_width * 2**i, CHANNEL_CAP * base_width)
        layers.append(
            LayerSpec("conv", prev, width, 4, 2, 1, norm=i > 0, act="leaky_relu", slope=0.2)
        )
        prev = width
    penult = min(base_width * 2**n_stride2, CHANNEL_CAP * base_width)
    layers.append(LayerSpec("conv", prev, penult, 4, 1, 1, norm=True, act="leaky_relu", slope=0.2))
    layers.append(LayerSpec("conv", penult, 1, 4, 1, 1, norm=False, act="none"))
    return ModelSpec("discriminator", in_channels, 1, False, tuple(layers))


class Network:
    """A ModelSpec instantiated with named parameters and norm buffers."""

    def __init__(self, spec: ModelSpec, params: dict, running: dict, mode: str = "train"):
        validate_spec(spec)
        self.spec = spec
        self.params = params
        self.running = running
        self.mode = mode

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def trainable_params(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict:
        """All persistent state (parameters plus running stats), stable order."""
        out = {name: p.data for name, p in self.params.items()}
        for name, stats in self.running.items():
            out[f"{name}.running_mean"] = stats.mean
            out[f"{name}.running_var"] = stats.var
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


def initialize_network(
    spec: ModelSpec, rng: Optional[RngStream] = None, dtype=np.float32
) -> Network:
    """Instantiate a spec: N(0, 0.02) conv weights, zero biases, identity norms."""
    validate_spec(spec)
    params: dict[str, Tensor] = {}
    running: dict[str, RunningStats] = {}
    for name, layer in zip(layer_names(spec), spec.layers):
        if layer.op == "conv":
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        else:
            shape = (layer.in_channels, layer.out_channels, layer.kernel, layer.kernel)
        if rng is None:
            weight = np.zeros(shape, dtype=dtype)
        else:
            weight = rng.normal(shape, std=0.02, dtype=dtype)
        params[f"{name}.weight"] = Tensor(weight, requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(layer.out_channels, dtype=dtype), requires_grad=True)
        if layer.norm:
            params[f"{name}.gamma"] = Tensor(np.ones(layer.out_channels, dtype=dtype), requires_grad=True)
            params[f"{name}.beta"] = Tensor(np.zeros(layer.out_channels, dtype=dtype), requires_grad=True)
            running[name] = RunningStats.initial(layer.out_channels, dtype=dtype)
    return Network(spec, params, running)


def build_unet_generator(
    in_channels: int,
    out_channels: int,
    base_width: int,
    depth: int,
    skip: bool,
    rng: Optional[RngStream] = None,
    dtype=np.float32,
) -> Network:
    return initialize_network(unet_spec(in_channels, out_channels, base_width, depth, skip), rng, dtype)


def build_patchgan(
    in_channels: int,
    variant: str,
    base_width: int,
    rng: Optional[RngStream] = None,
    dtype=np.float32,
) -> Network:
    return initialize_network(patchgan_spec(in_channels, variant, base_width), rng, dtype)


# -- forward -------------------------------------------------------------------

BN_MOMENTUM = 0.1
BN_EPSILON = 1e-5


def _apply_layer(net: Network, name: str, layer: LayerSpec, x: Tensor, rng, bn_mode, bn_update):
    w = net.params[f"{name}.weight"]
    b = net.params[f"{name}.bias"]
    if layer.op == "conv":
        h = conv2d(x, w, b, layer.stride, layer.padding)
    else:
        h = conv_transpose2d(x, w, b, layer.stride, layer.padding)
    if layer.norm:
        h = batchnorm2d(
            h,
            net.params[f"{name}.gamma"],
            net.params[f"{name}.beta"],
            mode="train" if bn_mode == "batch" else "eval",
            running=net.running[name],
            momentum=BN_MOMENTUM,
            epsilon=BN_EPSILON,
            update_running=bn_update,
        )
    if layer.drop > 0.0:
        if rng is None:
            raise ValueError("forward through a dropout layer requires an RngStream")
        h = dropout(h, layer.drop, rng)
    return T.activation(h, layer.act, layer.slope)


def forward(
    net: Network,
    x: Tensor,
    rng: Optional[RngStream] = None,
    bn_mode: Optional[str] = None,
    bn_update: Optional[bool] = None,
) -> Tensor:
    """Run the network; deterministic given (parameters, input, rng state, modes).

    ``bn_mode`` is "batch" or "running" and defaults to the network mode
    (train -> batch statistics, eval -> running statistics). Dropout layers
    are active in every mode: they realize the generator's noise input.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"forward expects [N,C,H,W], got {x.data.shape}")
    if x.data.shape[1] != net.spec.in_channels:
        raise ShapeMismatchError(
            f"input has {x.data.shape[1]} channels, spec expects {net.spec.in_channels}"
        )
    if bn_mode is None:
        bn_mode = "batch" if net.mode == "train" else "running"
    if bn_mode not in ("batch", "running"):
        raise ValueError(f"bn_mode must be 'batch' or 'running', got {bn_mode!r}")
    if bn_update is None:
        bn_update = net.mode == "train" and bn_mode == "batch"

    names = layer_names(net.spec)
    if net.spec.kind == "discriminator":
        h = x
        for name, layer in zip(names, net.spec.layers):
            h = _apply_layer(net, name, layer, h, rng, bn_mode, bn_update)
        return h

    enc, dec, head = generator_parts(net.spec)
    depth = len(enc)
    side = 2**depth
    if x.data.shape[2] % side or x.data.shape[3] % side:
        raise ShapeMismatchError(
            f"generator input extent {x.data.shape[2]}x{x.data.shape[3]} "
            f"not divisible by 2^depth = {side}"
        )
    acts = []
    h = x
    for i, layer in enumerate(enc):
        h = _apply_layer(net, names[i], layer, h, rng, bn_mode, bn_update)
        acts.append(h)
    for j, layer in enumerate(dec):
        if j > 0 and net.spec.skip_connections:
            h = concat_channels(h, acts[depth - 1 - j])
        if h.data.shape[1] != layer.in_channels:
            raise ShapeMismatchError(
                f"decoder block {j + 1} got {h.data.shape[1]} channels, spec says {layer.in_channels}"
            )
        h = _apply_layer(net, names[depth + j], layer, h, rng, bn_mode, bn_update)
    return _apply_layer(net, "head", head, h, rng, bn_mode, bn_update)
