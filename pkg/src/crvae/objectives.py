"""Losses and the crVAE-GAN training step.

A step has two phases:

1. generator phase: encode -> sample -> decode (posterior branch) and prior sample ->
   decode (prior branch); minimize
   ``recon + a1*kl_head + a2*kl_tail + beta*adv_gen + kappa*mi`` over the encoder,
   latent transforms and decoder.
2. discriminator phase: on an assembled batch of 50% real, 25% prior-decoded and
   25% posterior-decoded images, minimize ``adv_disc + kappa*mi`` over the
   discriminator trunk/head and the MI head. The discriminator group is left
   untouched when its accuracy on that batch is over 90%; the MI head still learns
   on the frozen trunk.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError, NonFiniteError, Tape, Tensor, adam_step
from .latent import KL_HEAD_STEPS, ConfigError, KLWeights, kl_weighted, reparam_sample
from .networks import (
    GENERATOR_GROUPS, ModelBundle, decode, disc_logit, disc_trunk, encode, mi_from_trunk, posterior,
)

DISC_ACCURACY_THRESHOLD = 0.9


@dataclass
class CoeffSet:
    alpha1: float = 0.0003
    alpha2: float = 0.0002
    beta: float = 0.0125
    kappa: float = 0.02

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"coefficient {k} must be finite and nonnegative, got {v}")


@dataclass
class LossBreakdown:
    recon: float = 0.0
    kl_head: float = 0.0
    kl_tail: float = 0.0
    adv_gen: float = 0.0
    adv_disc: float = 0.0
    mi: float = 0.0
    total_gen: float = 0.0
    disc_accuracy: float = 0.0
    disc_skipped: bool = False
    disc_batch: tuple = field(default=(0, 0, 0))

    def expected_total(self, c: CoeffSet) -> float:
        return self.recon + c.alpha1 * self.kl_head + c.alpha2 * self.kl_tail + c.beta * self.adv_gen + c.kappa * self.mi

    def identity_error(self, c: CoeffSet) -> float:
        """Relative gap between ``total_gen`` and the sum of its weighted parts."""
        ref = self.expected_total(c)
        return abs(self.total_gen - ref) / max(abs(ref), 1e-30)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.recon, self.kl_head, self.kl_tail, self.adv_gen,
                                              self.adv_disc, self.mi, self.total_gen))


def _mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    return dc.mean(dc.square(dc.sub(a, b)))


def recon_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Pixel MSE averaged over batch, channels, height and width."""
    return _mse(x_hat, x)


def mi_loss(u: Tensor, u_hat: Tensor) -> Tensor:
    """L2 reconstruction of the transformed latent; ``u`` is a fixed target."""
    return _mse(u_hat, dc.stop_gradient(u))


def _accuracy(real_p: np.ndarray, fake_p: np.ndarray) -> float:
    # p == 0.5 counts as wrong for both classes
    correct = int(np.count_nonzero(real_p > 0.5)) + int(np.count_nonzero(fake_p < 0.5))
    total = real_p.size + fake_p.size
    return correct / total if total else 0.0


def adversarial_losses(real_p: Tensor, fake_p_list: Sequence[Tensor]) -> tuple[Tensor, Tensor, float]:
    """``(disc_loss, gen_loss, accuracy)`` from discriminator probabilities.

    disc_loss = -mean log D(real) - mean log(1 - D(fake)); gen_loss = -mean log D(fake)
    over all fake samples together.
    """
    fake_p = dc.concat(list(fake_p_list), axis=0) if len(fake_p_list) > 1 else fake_p_list[0]
    tiny = np.finfo(real_p.dtype).tiny
    log_real = dc.log(dc.clamp(real_p, tiny, 1.0))
    log_not_fake = dc.log(dc.clamp(dc.sub(1.0, fake_p), tiny, 1.0))
    log_fake = dc.log(dc.clamp(fake_p, tiny, 1.0))
    disc = dc.neg(dc.add(dc.mean(log_real), dc.mean(log_not_fake)))
    gen = dc.neg(dc.mean(log_fake))
    return disc, gen, _accuracy(real_p.data, fake_p.data)


def adversarial_losses_from_logits(real_logit: Tensor, fake_logits: Sequence[Tensor]) -> tuple[Tensor, Tensor, float]:
    """Same quantities as :func:`adversarial_losses`, computed stably from logits."""
    fake = dc.concat(list(fake_logits), axis=0) if len(fake_logits) > 1 else fake_logits[0]
    disc = dc.neg(dc.add(dc.mean(dc.log_sigmoid(real_logit)), dc.mean(dc.log_sigmoid(dc.neg(fake)))))
    gen = dc.neg(dc.mean(dc.log_sigmoid(fake)))
    # logit 0 <=> p 0.5, same tie rule
    acc = _accuracy(real_logit.data + 0.5, fake.data + 0.5)
    return disc, gen, acc


@dataclass
class DiscBatch:
    images: np.ndarray
    labels: np.ndarray
    real_idx: np.ndarray
    gen_idx: np.ndarray
    rec_idx: np.ndarray

    @property
    def composition(self) -> tuple:
        return (len(self.real_idx), len(self.gen_idx), len(self.rec_idx))


def assemble_batch(real: np.ndarray, generated: np.ndarray, reconstructed: np.ndarray, B: int,
                   rng: np.random.Generator) -> DiscBatch:
    """B/2 real (label 1), then B/4 prior-decoded and B/4 posterior-decoded (label 0)."""
    if B <= 0 or B % 4:
        raise ConfigError(f"discriminator batch size must be a positive multiple of 4, got {B}")
    half, quarter = B // 2, B // 4
    for name, pool, need in (("real", real, half), ("generated", generated, quarter),
                             ("reconstructed", reconstructed, quarter)):
        if len(pool) < need:
            raise ConfigError(f"{name} pool has {len(pool)} images, need {need}")
    ri = np.sort(rng.choice(len(real), half, replace=False))
    gi = np.sort(rng.choice(len(generated), quarter, replace=False))
    ci = np.sort(rng.choice(len(reconstructed), quarter, replace=False))
    images = np.concatenate([real[ri], generated[gi], reconstructed[ci]], axis=0)
    labels = np.concatenate([np.ones(half), np.zeros(2 * quarter)]).astype(images.dtype)
    return DiscBatch(images, labels, ri, gi, ci)


def _kl_split(per_step: Tensor, head_steps: int) -> tuple[Tensor, Tensor]:
    T = per_step.shape[0]
    h = min(head_steps, T)
    head = dc.sum(dc.slice_axis(per_step, 0, 0, h))
    if h == T:
        tail = Tensor(np.zeros((), dtype=per_step.dtype), dtype=per_step.dtype)
    else:
        tail = dc.sum(dc.slice_axis(per_step, 0, h, T))
    return head, tail


def _set_trainable(bundle: ModelBundle, groups: Sequence[str], flag: bool) -> None:
    for p in bundle.params(groups):
        p.requires_grad = flag


def _update(bundle: ModelBundle, groups: Sequence[str]) -> None:
    for g in groups:
        params = bundle.params([g])
        if params:
            names = [n for n, _ in bundle.named_params([g])]
            adam_step(params, [p.grad for p in params], bundle.optim[g], names=names)


def train_step(bundle: ModelBundle, batch, coeffs: CoeffSet, rng: np.random.Generator,
               head_steps: int = KL_HEAD_STEPS, threshold: float = DISC_ACCURACY_THRESHOLD) -> LossBreakdown:
    """One generator update followed by one (possibly skipped) discriminator/MI update."""
    spec = bundle.spec
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    n = x.shape[0]
    dtype = x.dtype
    use_adv = coeffs.beta > 0
    use_mi = coeffs.kappa > 0
    noise = rng.standard_normal((n, *spec.latent_shape)).astype(dtype)
    z_prior = rng.standard_normal((n, *spec.latent_shape)).astype(dtype) if (use_adv or use_mi) else None

    out = LossBreakdown()
    bundle.zero_grad()
    _set_trainable(bundle, ("discriminator", "mi_head"), False)
    try:
        with Tape() as tape:
            params = posterior(bundle, encode(bundle, x))
            z = reparam_sample(params, Tensor(noise))
            x_rec, u_post = decode(bundle, z, return_u=True)
            recon = recon_loss(x_rec, x)
            _, per_step = kl_weighted(params, KLWeights.uniform(1.0, spec.T), spec.T)
            kl_head, kl_tail = _kl_split(per_step, head_steps)
            total = dc.add(recon, dc.add(dc.scale(kl_head, coeffs.alpha1), dc.scale(kl_tail, coeffs.alpha2)))
            x_gen = u_prior = None
            if use_adv or use_mi:
                x_gen, u_prior = decode(bundle, Tensor(z_prior), return_u=True)
                trunk = disc_trunk(bundle, dc.concat([x_rec, x_gen], axis=0))
            if use_adv:
                fake_logit = disc_logit(bundle, trunk)
                adv_gen = dc.neg(dc.mean(dc.log_sigmoid(fake_logit)))
                total = dc.add(total, dc.scale(adv_gen, coeffs.beta))
                out.adv_gen = float(adv_gen.data)
            if use_mi:
                u_hat = mi_from_trunk(bundle, trunk)
                mi = dc.add(mi_loss(u_post, dc.slice_axis(u_hat, 0, 0, n)),
                            mi_loss(u_prior, dc.slice_axis(u_hat, 0, n, 2 * n)))
                total = dc.add(total, dc.scale(mi, coeffs.kappa))
                out.mi = float(mi.data)
            out.recon = float(recon.data)
            out.kl_head = float(kl_head.data)
            out.kl_tail = float(kl_tail.data)
            out.total_gen = float(total.data)
            if not out.is_finite():
                raise NonFiniteError(f"non-finite loss, step aborted: {out}")
            tape.backward(total)
    finally:
        _set_trainable(bundle, ("discriminator", "mi_head"), True)
    _update(bundle, GENERATOR_GROUPS)
    bundle.zero_grad()
    bundle.meta["steps"] = bundle.meta.get("steps", 0) + 1

    if not (use_adv or use_mi):
        return out

    db = assemble_batch(x.data, x_gen.data, x_rec.data, n - n % 4, rng)
    out.disc_batch = db.composition
    n_real = db.composition[0]
    u_fake = np.concatenate([u_prior.data[db.gen_idx], u_post.data[db.rec_idx]], axis=0)
    with Tape() as tape:
        trunk = disc_trunk(bundle, Tensor(db.images))
        loss = None
        update = []
        if use_adv:
            logit = disc_logit(bundle, trunk)
            disc_loss, _, acc = adversarial_losses_from_logits(
                dc.slice_axis(logit, 0, 0, n_real), [dc.slice_axis(logit, 0, n_real, logit.shape[0])])
            out.adv_disc = float(disc_loss.data)
            out.disc_accuracy = acc
            out.disc_skipped = acc > threshold
            if not out.disc_skipped:
                loss = disc_loss
                update.append("discriminator")
        if use_mi:
            u_hat = mi_from_trunk(bundle, dc.slice_axis(trunk, 0, n_real, trunk.shape[0]))
            mi_d = dc.scale(mi_loss(Tensor(u_fake), u_hat), coeffs.kappa)
            loss = mi_d if loss is None else dc.add(loss, mi_d)
            if not use_adv:
                update.append("discriminator")
            update.append("mi_head")
        if not math.isfinite(out.adv_disc):
            raise NonFiniteError(f"non-finite discriminator loss, step aborted: {out}")
        if loss is not None:
            tape.backward(loss)
    _update(bundle, update)
    bundle.zero_grad()
    if "discriminator" in update:
        bundle.meta["disc_updates"] = bundle.meta.get("disc_updates", 0) + 1
    return out
