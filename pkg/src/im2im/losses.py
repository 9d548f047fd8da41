"""Adversarial and reconstruction losses for the paired and unpaired objectives.

The generator adversarial term is mean binary cross-entropy of the patch
logits against target 1; the discriminator term is the two-sided BCE halved,
which slows discriminator learning relative to the generator. Reconstruction
supports L1, L2 and their convex combination; the mix is computed literally
as alpha*L1 + (1-alpha)*L2 so the convexity identity holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .models import Network, forward
from .ops import concat_channels
from .rng import RngStream
from .tensor import ShapeMismatchError, Tensor

LOSS_KINDS = ("l1", "l2", "mix")


@dataclass(frozen=True)
class LossVariant:
    """Reconstruction-loss selection plus its weight against the GAN term."""

    kind: str  # "l1" | "l2" | "mix"
    alpha: float = 0.5  # mix only: alpha*L1 + (1-alpha)*L2
    weight: float = 100.0  # lambda

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"mix alpha must lie in [0, 1], got {self.alpha}")
        if self.weight < 0.0:
            raise ValueError(f"loss weight must be non-negative, got {self.weight}")


@dataclass
class LossRecord:
    """Per-step loss bookkeeping for a paired training step."""

    step: int
    gen_gan: float
    gen_recon: float
    gen_total: float
    disc: float


@dataclass
class CycleLossRecord:
    """Per-step loss bookkeeping for an unpaired (cycle) training step."""

    step: int
    gen_gan_ab: float
    gen_gan_ba: float
    cycle: float
    gen_total: float
    disc_a: float
    disc_b: float


def gan_loss_generator(d_out_fake: Tensor) -> Tensor:
    """Mean BCE of sigmoid(fake logits) against target 1 over all patches."""
    return T.bce_with_logits(d_out_fake, 1.0).mean()


def gan_loss_discriminator(d_out_real: Tensor, d_out_fake: Tensor) -> Tensor:
    """Halved two-term BCE: (BCE(real, 1) + BCE(fake, 0)) / 2."""
    if d_out_real.data.shape != d_out_fake.data.shape:
        raise ShapeMismatchError(
            f"discriminator logit shapes differ: {d_out_real.data.shape} vs {d_out_fake.data.shape}"
        )
    real_term = T.bce_with_logits(d_out_real, 1.0).mean()
    fake_term = T.bce_with_logits(d_out_fake, 0.0).mean()
    return T.scale(T.add(real_term, fake_term), 0.5)


def recon_loss(generated: Tensor, target: Tensor, variant: LossVariant) -> Tensor:
    """L1 = mean |y - g|, L2 = mean (y - g)^2, mix = alpha*L1 + (1-alpha)*L2."""
    if generated.data.shape != target.data.shape:
        raise ShapeMismatchError(
            f"recon_loss shapes differ: {generated.data.shape} vs {target.data.shape}"
        )
    diff = T.sub(target, generated)
    if variant.kind == "l1":
        return T.absolute(diff).mean()
    if variant.kind == "l2":
        return T.square(diff).mean()
    l1 = T.absolute(diff).mean()
    l2 = T.square(diff).mean()
    return T.add(T.scale(l1, variant.alpha), T.scale(l2, 1.0 - variant.alpha))


def paired_objective(
    gen: Network,
    disc: Network,
    x: Tensor,
    y: Tensor,
    variant: LossVariant,
    rng: Optional[RngStream] = None,
    gen_bn_mode: Optional[str] = None,
    step: int = 0,
    parts: Optional[dict] = None,
):
    """Eq-style paired losses sharing one generated image within the step.

    Returns (gen_total, disc_loss, record). The generator total is
    gan + lambda*recon through the graph; the discriminator sees the same
    fake, detached, against the real pair. Record scalars are recomputed in
    float64 so total == gan + lambda*recon holds to well below 1e-6.
    ``parts``, when given, is filled with the intermediate tensors.
    """
    if x.data.shape[0] != y.data.shape[0]:
        raise ShapeMismatchError(
            f"paired batch sizes differ: {x.data.shape[0]} vs {y.data.shape[0]}"
        )
    fake = forward(gen, x, rng=rng, bn_mode=gen_bn_mode)
    gan = gan_loss_generator(forward(disc, concat_channels(x, fake)))
    recon = recon_loss(fake, y, variant)
    gen_total = T.add(gan, T.scale(recon, variant.weight))

    x_const = x.detach()
    fake_const = fake.detach()
    d_real = forward(disc, concat_channels(x_const, y.detach()))
    d_fake = forward(disc, concat_channels(x_const, fake_const))
    disc_loss = gan_loss_discriminator(d_real, d_fake)

    gan_v = gan.item()
    recon_v = recon.item()
    record = LossRecord(
        step=step,
        gen_gan=gan_v,
        gen_recon=recon_v,
        gen_total=gan_v + variant.weight * recon_v,
        disc=disc_loss.item(),
    )
    if parts is not None:
        parts.update(fake=fake, d_real=d_real, d_fake=d_fake)
    return gen_total, disc_loss, record


def cycle_loss(
    gen_ab: Network,
    gen_ba: Network,
    batch_a: Tensor,
    batch_b: Tensor,
    variant: LossVariant,
    rng: Optional[RngStream] = None,
) -> Tensor:
    """Sum of both reconstruction terms: A->B->A against A plus B->A->B against B."""
    rec_a = forward(gen_ba, forward(gen_ab, batch_a, rng=rng), rng=rng)
    rec_b = forward(gen_ab, forward(gen_ba, batch_b, rng=rng), rng=rng)
    return T.add(recon_loss(rec_a, batch_a, variant), recon_loss(rec_b, batch_b, variant))


def unpaired_objective(
    gen_ab: Network,
    gen_ba: Network,
    disc_a: Network,
    disc_b: Network,
    batch_a: Tensor,
    batch_b: Tensor,
    variant: LossVariant,
    rng: Optional[RngStream] = None,
    gen_bn_mode: Optional[str] = None,
    conditional: bool = False,
    step: int = 0,
    parts: Optional[dict] = None,
):
    """Full unpaired objective: both adversarial terms plus lambda * cycle loss.

    Fake images are generated once and shared between the adversarial and
    cycle terms. Discriminators are unconditional by default; with
    ``conditional`` they see the batch-aligned source-domain image
    concatenated onto the candidate.
    """
    fake_b = forward(gen_ab, batch_a, rng=rng, bn_mode=gen_bn_mode)
    fake_a = forward(gen_ba, batch_b, rng=rng, bn_mode=gen_bn_mode)
    rec_a = forward(gen_ba, fake_b, rng=rng, bn_mode=gen_bn_mode)
    rec_b = forward(gen_ab, fake_a, rng=rng, bn_mode=gen_bn_mode)

    def cond_b(candidate, source):
        return concat_channels(source, candidate) if conditional else candidate

    adv_ab = gan_loss_generator(forward(disc_b, cond_b(fake_b, batch_a)))
    adv_ba = gan_loss_generator(forward(disc_a, cond_b(fake_a, batch_b)))
    cyc = T.add(recon_loss(rec_a, batch_a, variant), recon_loss(rec_b, batch_b, variant))
    gen_total = T.add(T.add(adv_ab, adv_ba), T.scale(cyc, variant.weight))

    a_const, b_const = batch_a.detach(), batch_b.detach()
    d_a_real = forward(disc_a, cond_b(a_const, b_const))
    d_a_fake = forward(disc_a, cond_b(fake_a.detach(), b_const))
    disc_a_loss = gan_loss_discriminator(d_a_real, d_a_fake)
    d_b_real = forward(disc_b, cond_b(b_const, a_const))
    d_b_fake = forward(disc_b, cond_b(fake_b.detach(), a_const))
    disc_b_loss = gan_loss_discriminator(d_b_real, d_b_fake)

    ab_v, ba_v, cyc_v = adv_ab.item(), adv_ba.item(), cyc.item()
    record = CycleLossRecord(
        step=step,
        gen_gan_ab=ab_v,
        gen_gan_ba=ba_v,
        cycle=cyc_v,
        gen_total=ab_v + ba_v + variant.weight * cyc_v,
        disc_a=disc_a_loss.item(),
        disc_b=disc_b_loss.item(),
    )
    if parts is not None:
        parts.update(
            fake_a=fake_a, fake_b=fake_b,
            d_a_real=d_a_real, d_a_fake=d_a_fake,
            d_b_real=d_b_real, d_b_fake=d_b_fake,
        )
    return gen_total, disc_a_loss, disc_b_loss, record
