"""Versioned binary checkpoints: magic, version, spec text, named float32 arrays.

Layout (all integers little-endian):

    8  bytes  magic  b"IM2IMNET"
    u32       format version (currently 1)
    u32       spec text length, then UTF-8 canonical ModelSpec text
    u32       entry count
    per entry:
        u16   name length, then UTF-8 name
        u8    rank
        u32*  extents
        f32*  row-major little-endian scalars

Arrays are stored as float32; round-trips of float32 networks are bit-exact.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .models import LayerSpec, ModelSpec, Network, initialize_network, validate_spec
from .tensor import Tensor

MAGIC = b"IM2IMNET"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, truncated or mismatched checkpoint file."""


# -- canonical ModelSpec text ---------------------------------------------------


def _fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def spec_to_text(spec: ModelSpec) -> str:
    lines = [
        f"kind={spec.kind}",
        f"in={spec.in_channels}",
        f"out={spec.out_channels}",
        f"skip={1 if spec.skip_connections else 0}",
    ]
    for layer in spec.layers:
        lines.append(
            f"layer op={layer.op} in={layer.in_channels} out={layer.out_channels}"
            f" k={layer.kernel} s={layer.stride} p={layer.padding}"
            f" norm={1 if layer.norm else 0} act={layer.act}"
            f" slope={_fmt_float(layer.slope)} drop={_fmt_float(layer.drop)}"
        )
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ModelSpec:
    header: dict[str, str] = {}
    layers = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("layer "):
            fields = dict(tok.split("=", 1) for tok in line.split()[1:])
            try:
                layers.append(
                    LayerSpec(
                        op=fields["op"],
                        in_channels=int(fields["in"]),
                        out_channels=int(fields["out"]),
                        kernel=int(fields["k"]),
                        stride=int(fields["s"]),
                        padding=int(fields["p"]),
                        norm=bool(int(fields["norm"])),
                        act=fields["act"],
                        slope=float(fields["slope"]),
                        drop=float(fields["drop"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise CheckpointError(f"bad layer line in spec text: {line!r}") from exc
        else:
            key, _, value = line.partition("=")
            header[key] = value
    try:
        spec = ModelSpec(
            kind=header["kind"],
            in_channels=int(header["in"]),
            out_channels=int(header["out"]),
            skip_connections=bool(int(header["skip"])),
            layers=tuple(layers),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad spec header: {sorted(header)}") from exc
    validate_spec(spec)
    return spec


# -- raw container --------------------------------------------------------------


def save_arrays(path, spec_text: str, arrays: dict) -> None:
    """Write a named-array container; arrays are cast to float32."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    spec_bytes = spec_text.encode("utf-8")
    blob += struct.pack("<I", len(spec_bytes)) + spec_bytes
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        name_bytes = name.encode("utf-8")
        arr = np.asarray(arr)
        blob += struct.pack("<H", len(name_bytes)) + name_bytes
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint file: {self.path}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load_arrays(path) -> tuple[str, dict]:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    spec_text = reader.take(reader.u32()).decode("utf-8")
    arrays = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u16()).decode("utf-8")
        rank = reader.u8()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        arrays[name] = arr.copy()
    if reader.pos != len(reader.data):
        raise CheckpointError(f"trailing bytes in checkpoint file: {path}")
    return spec_text, arrays


# -- network checkpoints ---------------------------------------------------------


def save_checkpoint(net: Network, path) -> None:
    save_arrays(path, spec_to_text(net.spec), net.named_arrays())


def load_checkpoint(path, expected_spec: Optional[ModelSpec] = None) -> Network:
    """Rebuild a network from file; optionally enforce an expected ModelSpec."""
    spec_text, arrays = load_arrays(path)
    spec = spec_from_text(spec_text)
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(
            f"checkpoint spec mismatch in {path}: stored {spec.kind} stack differs "
            "from the expected ModelSpec"
        )
    net = initialize_network(spec, rng=None, dtype=np.float32)
    for name, param in net.params.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint {path} is missing parameter {name!r}")
        if arrays[name].shape != param.data.shape:
            raise CheckpointError(
                f"checkpoint {path}: parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {param.data.shape}"
            )
        net.params[name] = Tensor(arrays[name], requires_grad=True)
    for name, stats in net.running.items():
        for suffix, target in (("running_mean", "mean"), ("running_var", "var")):
            key = f"{name}.{suffix}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint {path} is missing buffer {key!r}")
            setattr(stats, target, arrays[key].copy())
    net.mode = "eval"
    return net
