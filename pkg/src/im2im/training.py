"""Experiment configuration and the paired/unpaired training loops.

A TrainConfig fully determines a run: two runs with equal configs produce
byte-identical loss CSVs. One master RngStream (from config.seed) feeds
weight init, epoch shuffles, augmentation and generator dropout in a fixed
order; snapshot emission draws from throwaway streams so that emitting
artifacts never changes the trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint as ckpt
from .data import (
    AugmentConfig,
    DatasetError,
    batch_iterator,
    load_dataset,
    paired_batch_iterator,
    write_image,
)
from .losses import (
    CycleLossRecord,
    LossRecord,
    LossVariant,
    gan_loss_discriminator,
    gan_loss_generator,
    paired_objective,
    recon_loss,
    unpaired_objective,
)
from .models import build_patchgan, build_unet_generator, forward, patchgan_spec, unet_spec
from .ops import concat_channels
from .optim import AdamState, adam_step
from .rng import RngStream
from .tensor import Tensor, backward

TASKS = ("paired", "unpaired")
STEP_ORDERS = ("generator_first", "discriminator_first")
NORM_STATS = ("batch", "running")

DEFAULT_RECON_WEIGHT = {"paired": 100.0, "unpaired": 10.0}


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration keys/values."""


class NumericDivergenceError(RuntimeError):
    """A loss became non-finite; training aborted rather than clamped."""


@dataclass
class TrainConfig:
    task: str = "paired"
    dataset: str = ""
    out_dir: str = ""
    loss_kind: str = "l1"
    mix_alpha: float = 0.5
    recon_weight: float = -1.0  # -1 resolves to the task default (100 / 10)
    patch_variant: str = "patch70"
    skip: bool = True
    batch_size: int = 16
    epochs: int = 150
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    image_size: int = 32
    depth: int = 5
    base_width: int = 16
    augment_flip: bool = True
    augment_jitter: bool = True
    jitter_upsize: int = 0  # 0 = default for image_size
    step_order: str = "generator_first"
    gen_norm_stats: str = "batch"
    conditional_disc: bool = False
    snapshot_every: int = 1


_BOOL_WORDS = {"true": True, "false": False}


def _parse_value(name: str, kind, raw: str):
    if kind is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigError(f"config key {name!r} expects true/false, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {name!r} expects {kind.__name__}, got {raw!r}") from exc


def parse_config(text: str) -> TrainConfig:
    """Parse the flat key-value config document; unknown keys are errors."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    types = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"config line {lineno} is not key = value: {raw!r}")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})")
        values[key] = _parse_value(key, types[key], value)
    cfg = TrainConfig(**values)
    return resolve_config(cfg)


def resolve_config(cfg: TrainConfig) -> TrainConfig:
    """Fill task-dependent defaults and validate every field."""
    if cfg.task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {cfg.task!r}")
    if not cfg.dataset:
        raise ConfigError("config key 'dataset' is required")
    if not cfg.out_dir:
        raise ConfigError("config key 'out_dir' is required")
    if cfg.loss_kind not in ("l1", "l2", "mix"):
        raise ConfigError(f"loss_kind must be l1/l2/mix, got {cfg.loss_kind!r}")
    if not 0.0 <= cfg.mix_alpha <= 1.0:
        raise ConfigError(f"mix_alpha must lie in [0, 1], got {cfg.mix_alpha}")
    if cfg.recon_weight < 0:
        cfg.recon_weight = DEFAULT_RECON_WEIGHT[cfg.task]
    if cfg.patch_variant not in ("patch16", "patch70", "patch286"):
        raise ConfigError(f"unknown patch_variant {cfg.patch_variant!r}")
    for name in ("batch_size", "epochs", "depth", "base_width", "snapshot_every"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"config key {name!r} must be >= 1")
    if cfg.lr <= 0:
        raise ConfigError(f"lr must be positive, got {cfg.lr}")
    if cfg.image_size % (2**cfg.depth):
        raise ConfigError(
            f"image_size {cfg.image_size} not divisible by 2^depth = {2**cfg.depth}"
        )
    if cfg.step_order not in STEP_ORDERS:
        raise ConfigError(f"step_order must be one of {STEP_ORDERS}")
    if cfg.gen_norm_stats not in NORM_STATS:
        raise ConfigError(f"gen_norm_stats must be one of {NORM_STATS}")
    return cfg


def format_config(cfg: TrainConfig) -> str:
    """Emit the fully resolved config; parse_config round-trips it exactly."""
    lines = []
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = format(value, ".17g")
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def loss_variant(cfg: TrainConfig) -> LossVariant:
    return LossVariant(kind=cfg.loss_kind, alpha=cfg.mix_alpha, weight=cfg.recon_weight)


# -- train state -----------------------------------------------------------------


@dataclass
class TrainState:
    nets: dict
    adam: dict
    epoch: int
    step: int
    rng: RngStream


def _opt_params(state: TrainState, name: str) -> list[Tensor]:
    if name == "gen" and "gen_a" in state.nets:
        return state.nets["gen_a"].trainable_params() + state.nets["gen_b"].trainable_params()
    return state.nets[name].trainable_params()


def _opt_names(task: str) -> list[str]:
    return ["gen", "disc"] if task == "paired" else ["gen", "disc_a", "disc_b"]


def expected_specs(cfg: TrainConfig) -> dict:
    """ModelSpecs implied by a config; used to verify resumed checkpoints."""
    channels = 3
    disc_in = 2 * channels if (cfg.task == "paired" or cfg.conditional_disc) else channels
    gen_spec = unet_spec(channels, channels, cfg.base_width, cfg.depth, cfg.skip)
    disc_spec = patchgan_spec(disc_in, cfg.patch_variant, cfg.base_width)
    if cfg.task == "paired":
        return {"gen": gen_spec, "disc": disc_spec}
    return {"gen_a": gen_spec, "gen_b": gen_spec, "disc_a": disc_spec, "disc_b": disc_spec}


def _build_state(cfg: TrainConfig) -> TrainState:
    rng = RngStream(cfg.seed)
    channels = 3
    disc_in = 2 * channels if (cfg.task == "paired" or cfg.conditional_disc) else channels
    nets = {}
    if cfg.task == "paired":
        nets["gen"] = build_unet_generator(channels, channels, cfg.base_width, cfg.depth, cfg.skip, rng)
        nets["disc"] = build_patchgan(disc_in, cfg.patch_variant, cfg.base_width, rng)
    else:
        nets["gen_a"] = build_unet_generator(channels, channels, cfg.base_width, cfg.depth, cfg.skip, rng)
        nets["gen_b"] = build_unet_generator(channels, channels, cfg.base_width, cfg.depth, cfg.skip, rng)
        nets["disc_a"] = build_patchgan(disc_in, cfg.patch_variant, cfg.base_width, rng)
        nets["disc_b"] = build_patchgan(disc_in, cfg.patch_variant, cfg.base_width, rng)
    for net in nets.values():
        net.train()
    state = TrainState(nets=nets, adam={}, epoch=0, step=0, rng=rng)
    for name in _opt_names(cfg.task):
        state.adam[name] = AdamState.initial(_opt_params(state, name))
    return state


def save_train_state(state: TrainState, cfg: TrainConfig, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, net in state.nets.items():
        path = out / f"{name}.ckpt"
        ckpt.save_checkpoint(net, path)
        written.append(path)
    for name, adam in state.adam.items():
        arrays = {}
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"{i}.m"] = m
            arrays[f"{i}.v"] = v
        path = out / f"opt_{name}.ckpt"
        ckpt.save_arrays(path, f"adam t={adam.t}\n", arrays)
        written.append(path)
    path = out / "state.json"
    with open(path, "w") as fh:
        json.dump({"epoch": state.epoch, "step": state.step, "rng": state.rng.get_state()}, fh)
    written.append(path)
    return written


def load_train_state(state_dir, cfg: TrainConfig) -> TrainState:
    """Rebuild a TrainState; checkpoint specs must match the config."""
    state_dir = Path(state_dir)
    specs = expected_specs(cfg)
    nets = {}
    for name, spec in specs.items():
        nets[name] = ckpt.load_checkpoint(state_dir / f"{name}.ckpt", expected_spec=spec).train()
    with open(state_dir / "state.json") as fh:
        meta = json.load(fh)
    state = TrainState(
        nets=nets,
        adam={},
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        rng=RngStream.from_state(meta["rng"]),
    )
    for name in _opt_names(cfg.task):
        params = _opt_params(state, name)
        spec_text, arrays = ckpt.load_arrays(state_dir / f"opt_{name}.ckpt")
        t = int(spec_text.split("t=", 1)[1].strip())
        adam = AdamState(
            m=[arrays[f"{i}.m"].copy() for i in range(len(params))],
            v=[arrays[f"{i}.v"].copy() for i in range(len(params))],
            t=t,
        )
        for p, m in zip(params, adam.m):
            if p.data.shape != m.shape:
                raise ckpt.CheckpointError(
                    f"optimizer state shape mismatch in opt_{name}.ckpt"
                )
        state.adam[name] = adam
    return state


# -- step implementations ------------------------------------------------------------


def _zero_all(state: TrainState) -> None:
    for net in state.nets.values():
        net.zero_grad()


def _adam(state: TrainState, cfg: TrainConfig, name: str) -> None:
    params = _opt_params(state, name)
    adam_step(
        params,
        [p.grad for p in params],
        state.adam[name],
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.adam_eps,
    )


def _check_finite(record, step: int) -> None:
    for name, value in vars(record).items():
        if name != "step" and not np.isfinite(value):
            raise NumericDivergenceError(
                f"non-finite loss at step {step}: {name} = {value}"
            )


def _paired_step(state, cfg, variant, x, y, observer):
    gen, disc = state.nets["gen"], state.nets["disc"]
    bn_mode = cfg.gen_norm_stats
    if cfg.step_order == "generator_first":
        parts = {}
        gen_total, disc_loss, record = paired_objective(
            gen, disc, x, y, variant, rng=state.rng, gen_bn_mode=bn_mode,
            step=state.step, parts=parts,
        )
        _check_finite(record, state.step)
        backward(gen_total)
        _adam(state, cfg, "gen")
        _zero_all(state)
        backward(disc_loss)
        _adam(state, cfg, "disc")
        _zero_all(state)
    else:
        fake = forward(gen, x, rng=state.rng, bn_mode=bn_mode)
        x_const, y_const, fake_const = x.detach(), y.detach(), fake.detach()
        d_real = forward(disc, concat_channels(x_const, y_const))
        d_fake_const = forward(disc, concat_channels(x_const, fake_const))
        disc_loss = gan_loss_discriminator(d_real, d_fake_const)
        if not np.isfinite(disc_loss.item()):
            raise NumericDivergenceError(
                f"non-finite loss at step {state.step}: disc = {disc_loss.item()}"
            )
        backward(disc_loss)
        _adam(state, cfg, "disc")
        _zero_all(state)
        # adversarial pass against the already-updated discriminator
        gan = gan_loss_generator(forward(disc, concat_channels(x, fake)))
        recon = recon_loss(fake, y, variant)
        gen_total = gan + recon * variant.weight
        gan_v, recon_v = gan.item(), recon.item()
        record = LossRecord(
            step=state.step,
            gen_gan=gan_v,
            gen_recon=recon_v,
            gen_total=gan_v + variant.weight * recon_v,
            disc=disc_loss.item(),
        )
        parts = {"fake": fake, "d_real": d_real, "d_fake": d_fake_const}
        _check_finite(record, state.step)
        backward(gen_total)
        _adam(state, cfg, "gen")
        _zero_all(state)
    if observer is not None:
        observer(record, parts)
    return record


def _unpaired_step(state, cfg, variant, a, b, observer):
    gen_a, gen_b = state.nets["gen_a"], state.nets["gen_b"]
    disc_a, disc_b = state.nets["disc_a"], state.nets["disc_b"]
    if cfg.step_order == "generator_first":
        parts = {}
        gen_total, disc_a_loss, disc_b_loss, record = unpaired_objective(
            gen_a, gen_b, disc_a, disc_b, a, b, variant,
            rng=state.rng, gen_bn_mode=cfg.gen_norm_stats,
            conditional=cfg.conditional_disc, step=state.step, parts=parts,
        )
        _check_finite(record, state.step)
        for name, loss in (("gen", gen_total), ("disc_a", disc_a_loss), ("disc_b", disc_b_loss)):
            backward(loss)
            _adam(state, cfg, name)
            _zero_all(state)
        if observer is not None:
            observer(record, parts)
        return record

    # discriminator-first: step both discriminators on this batch's fakes,
    # then score the generators against the updated discriminators
    bn_mode = cfg.gen_norm_stats
    rng = state.rng
    fake_b = forward(gen_a, a, rng=rng, bn_mode=bn_mode)
    fake_a = forward(gen_b, b, rng=rng, bn_mode=bn_mode)
    rec_a = forward(gen_b, fake_b, rng=rng, bn_mode=bn_mode)
    rec_b = forward(gen_a, fake_a, rng=rng, bn_mode=bn_mode)

    def cond(candidate, source):
        return concat_channels(source, candidate) if cfg.conditional_disc else candidate

    a_const, b_const = a.detach(), b.detach()
    d_a_real = forward(disc_a, cond(a_const, b_const))
    d_a_fake = forward(disc_a, cond(fake_a.detach(), b_const))
    disc_a_loss = gan_loss_discriminator(d_a_real, d_a_fake)
    d_b_real = forward(disc_b, cond(b_const, a_const))
    d_b_fake = forward(disc_b, cond(fake_b.detach(), a_const))
    disc_b_loss = gan_loss_discriminator(d_b_real, d_b_fake)
    for loss in (disc_a_loss, disc_b_loss):
        if not np.isfinite(loss.item()):
            raise NumericDivergenceError(
                f"non-finite loss at step {state.step}: disc = {loss.item()}"
            )
    backward(disc_a_loss)
    _adam(state, cfg, "disc_a")
    _zero_all(state)
    backward(disc_b_loss)
    _adam(state, cfg, "disc_b")
    _zero_all(state)

    adv_ab = gan_loss_generator(forward(disc_b, cond(fake_b, a)))
    adv_ba = gan_loss_generator(forward(disc_a, cond(fake_a, b)))
    cyc = recon_loss(rec_a, a, variant) + recon_loss(rec_b, b, variant)
    gen_total = adv_ab + adv_ba + cyc * variant.weight
    ab_v, ba_v, cyc_v = adv_ab.item(), adv_ba.item(), cyc.item()
    record = CycleLossRecord(
        step=state.step,
        gen_gan_ab=ab_v,
        gen_gan_ba=ba_v,
        cycle=cyc_v,
        gen_total=ab_v + ba_v + variant.weight * cyc_v,
        disc_a=disc_a_loss.item(),
        disc_b=disc_b_loss.item(),
    )
    _check_finite(record, state.step)
    backward(gen_total)
    _adam(state, cfg, "gen")
    _zero_all(state)
    if observer is not None:
        observer(record, {
            "fake_a": fake_a, "fake_b": fake_b,
            "d_a_real": d_a_real, "d_a_fake": d_a_fake,
            "d_b_real": d_b_real, "d_b_fake": d_b_fake,
        })
    return record


PAIRED_CSV_HEADER = "step,gen_gan,gen_recon,gen_total,disc"
UNPAIRED_CSV_HEADER = "step,gen_total,cycle,disc_a,disc_b"


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def csv_row(record) -> str:
    if isinstance(record, LossRecord):
        return ",".join(
            [str(record.step), _g17(record.gen_gan), _g17(record.gen_recon),
             _g17(record.gen_total), _g17(record.disc)]
        )
    return ",".join(
        [str(record.step), _g17(record.gen_total), _g17(record.cycle),
         _g17(record.disc_a), _g17(record.disc_b)]
    )


# -- sample grids ---------------------------------------------------------------------


def _grid_png(path, rows) -> None:
    """Stack rows of equally sized (C, H, W) images into one PNG."""
    grid = np.concatenate([np.concatenate(row, axis=2) for row in rows], axis=1)
    write_image(path, np.clip(grid, -1.0, 1.0))


def _sample_rng(cfg: TrainConfig, epoch: int) -> RngStream:
    return RngStream((cfg.seed * 1_000_003 + epoch) & ((1 << 64) - 1))


def emit_paired_samples(state, cfg, set_a, set_b, epoch, path) -> None:
    k = min(8, len(set_a))
    x = Tensor(np.stack([set_a.images[i] for i in range(k)]))
    y = np.stack([set_b.images[set_a.pairing[i]] for i in range(k)])
    fake = forward(state.nets["gen"], x, rng=_sample_rng(cfg, epoch), bn_mode="batch", bn_update=False)
    _grid_png(path, [list(x.data), list(y), list(fake.data)])


def emit_unpaired_samples(state, cfg, set_a, set_b, epoch, path) -> None:
    k = min(8, len(set_a), len(set_b))
    rng = _sample_rng(cfg, epoch)
    a = Tensor(np.stack(set_a.images[:k]))
    b = Tensor(np.stack(set_b.images[:k]))
    fake_b = forward(state.nets["gen_a"], a, rng=rng, bn_mode="batch", bn_update=False)
    cyc_a = forward(state.nets["gen_b"], fake_b, rng=rng, bn_mode="batch", bn_update=False)
    fake_a = forward(state.nets["gen_b"], b, rng=rng, bn_mode="batch", bn_update=False)
    cyc_b = forward(state.nets["gen_a"], fake_a, rng=rng, bn_mode="batch", bn_update=False)
    _grid_png(
        path,
        [list(a.data), list(fake_b.data), list(cyc_a.data),
         list(b.data), list(fake_a.data), list(cyc_b.data)],
    )


# -- the loop ---------------------------------------------------------------------------


def train(
    cfg: TrainConfig,
    resume_from=None,
    observer: Optional[Callable] = None,
):
    """Run training to cfg.epochs; returns (state, emitted file paths).

    Per batch: one generator Adam step and one discriminator Adam step in the
    configured order, a LossRecord appended to the CSV, and a checkpoint plus
    sample grid emitted every ``snapshot_every`` epochs (always at the end).
    """
    cfg = resolve_config(cfg)
    variant = loss_variant(cfg)
    layout = "side_by_side" if cfg.task == "paired" else "two_dirs"
    set_a, set_b = load_dataset(cfg.dataset, layout, "train")
    for img in set_a.images + set_b.images:
        if img.shape[1] != cfg.image_size or img.shape[2] != cfg.image_size:
            raise DatasetError(
                f"dataset image extent {img.shape[1]}x{img.shape[2]} does not match "
                f"config image_size {cfg.image_size}"
            )

    if resume_from is not None:
        state = load_train_state(resume_from, cfg)
    else:
        state = _build_state(cfg)

    augment = None
    if cfg.augment_flip or cfg.augment_jitter:
        augment = AugmentConfig(
            flip=cfg.augment_flip, jitter=cfg.augment_jitter, jitter_upsize=cfg.jitter_upsize
        )

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emitted = []
    csv_path = out / "loss.csv"
    header = PAIRED_CSV_HEADER if cfg.task == "paired" else UNPAIRED_CSV_HEADER

    config_path = out / "config.txt"
    config_path.write_text(format_config(cfg))
    emitted.append(config_path)

    with open(csv_path, "w") as csv_file:
        csv_file.write(header + "\n")
        for epoch in range(state.epoch + 1, cfg.epochs + 1):
            if cfg.task == "paired":
                batches = paired_batch_iterator(set_a, set_b, cfg.batch_size, augment, state.rng)
                for a_arr, b_arr in batches:
                    state.step += 1
                    record = _paired_step(state, cfg, variant, Tensor(a_arr), Tensor(b_arr), observer)
                    csv_file.write(csv_row(record) + "\n")
            else:
                batches_a = batch_iterator(set_a, cfg.batch_size, augment, state.rng)
                batches_b = batch_iterator(set_b, cfg.batch_size, augment, state.rng)
                for a_arr, b_arr in zip(batches_a, batches_b):
                    state.step += 1
                    record = _unpaired_step(state, cfg, variant, Tensor(a_arr), Tensor(b_arr), observer)
                    csv_file.write(csv_row(record) + "\n")
            state.epoch = epoch
            csv_file.flush()
            if epoch % cfg.snapshot_every == 0 or epoch == cfg.epochs:
                snap_dir = out / f"state_ep{epoch:05d}"
                emitted.extend(save_train_state(state, cfg, snap_dir))
                sample_path = out / f"samples_ep{epoch:05d}.png"
                if cfg.task == "paired":
                    emit_paired_samples(state, cfg, set_a, set_b, epoch, sample_path)
                else:
                    emit_unpaired_samples(state, cfg, set_a, set_b, epoch, sample_path)
                emitted.append(sample_path)
    emitted.append(csv_path)
    return state, emitted
