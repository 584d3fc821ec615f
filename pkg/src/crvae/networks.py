"""Desk-scale encoder, decoder, discriminator and MI head.

Layout (defaults: 3x32x32 images, 32x4x4 latent, T=8):

* encoder: conv k4/s2 x3 then conv k3/s1, widths 32/64/128/128, leaky-relu 0.1
* posterior: ``vae`` dense maps, ``cvae`` 1x1 convs, ``crvae`` 1x1 conv mean path and
  1x1 conv + inference LSTM variance path
* generation path: ``vae`` dense, ``cvae`` identity, ``crvae`` generation LSTM
* decoder: mirror of the encoder with transposed convs, tanh (or logistic) output
* discriminator: 3 strided convs (the trunk) and a dense logit head; the MI head is a
  3x3 conv on the same trunk producing a tensor shaped like the latent
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, DimensionError, Tensor
from .latent import (
    ConfigError, GaussianParams, RecurrentParams, generation_transform, mean_path, variance_transform,
)

VARIANTS = ("vae", "cvae", "crvae")
GROUPS = ("encoder", "mean_path", "variance_path", "generation_path", "decoder", "discriminator", "mi_head")
GENERATOR_GROUPS = ("encoder", "mean_path", "variance_path", "generation_path", "decoder")
LATENT_TRANSFORM_GROUPS = ("variance_path", "generation_path")
LEAK = 0.1


class ValidationError(ValueError):
    """Input data outside the range the networks were configured for."""


@dataclass
class NetworkSpec:
    image_channels: int = 3
    image_size: int = 32
    latent_channels: int = 32
    latent_size: int = 4
    T: int = 8
    encoder_widths: tuple = (32, 64, 128, 128)
    disc_widths: tuple = (32, 64, 128)
    variant: str = "crvae"
    output_activation: str = "tanh"

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)
        self.disc_widths = tuple(self.disc_widths)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.output_activation not in ("tanh", "logistic"):
            raise ConfigError(f"output_activation must be tanh or logistic, got {self.output_activation!r}")
        if len(self.encoder_widths) != 4 or len(self.disc_widths) != 3:
            raise ConfigError("encoder needs 4 widths and discriminator 3")
        if self.image_size != 8 * self.latent_size:
            raise ConfigError(
                f"three stride-2 stages map {self.image_size}x{self.image_size} to "
                f"{self.image_size / 8:g}, not the latent size {self.latent_size}")
        if self.T < 1 or self.latent_channels % self.T:
            raise ConfigError(f"T={self.T} must divide the latent channel count c={self.latent_channels}")

    @property
    def image_shape(self) -> tuple:
        return (self.image_channels, self.image_size, self.image_size)

    @property
    def latent_shape(self) -> tuple:
        return (self.latent_channels, self.latent_size, self.latent_size)

    @property
    def latent_dim(self) -> int:
        return self.latent_channels * self.latent_size ** 2

    @property
    def block_size(self) -> int:
        return self.latent_dim // self.T

    @property
    def feature_channels(self) -> int:
        return self.encoder_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["disc_widths"] = list(self.disc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)

    @classmethod
    def tiny(cls, variant: str = "crvae", **kw) -> "NetworkSpec":
        """1x8x8 images, c=8 at 1x1, T=2: small enough for exhaustive gradient checks."""
        base = dict(image_channels=1, image_size=8, latent_channels=8, latent_size=1, T=2,
                    encoder_widths=(3, 4, 4, 5), disc_widths=(3, 4, 4), variant=variant)
        base.update(kw)
        return cls(**base)


def _glorot(rng, shape, fan_in, fan_out, dtype):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, shape).astype(dtype), requires_grad=True, dtype=dtype)


def _conv_w(rng, f, c, k, dtype):
    return _glorot(rng, (f, c, k, k), c * k * k, f * k * k, dtype)


def _dense_w(rng, n_in, n_out, dtype):
    return _glorot(rng, (n_in, n_out), n_in, n_out, dtype)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


def init_params(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> dict:
    """Freshly initialized parameter groups (forget-gate biases 1, other biases 0)."""
    rng = np.random.default_rng(seed)
    ci = spec.image_channels
    e1, e2, e3, e4 = spec.encoder_widths
    d1, d2, d3 = spec.disc_widths
    c, s, F = spec.latent_channels, spec.latent_size, spec.feature_channels
    groups: dict = {}
    groups["encoder"] = {
        "conv1_w": _conv_w(rng, e1, ci, 4, dtype), "conv1_b": _zeros(e1, dtype),
        "conv2_w": _conv_w(rng, e2, e1, 4, dtype), "conv2_b": _zeros(e2, dtype),
        "conv3_w": _conv_w(rng, e3, e2, 4, dtype), "conv3_b": _zeros(e3, dtype),
        "conv4_w": _conv_w(rng, e4, e3, 3, dtype), "conv4_b": _zeros(e4, dtype),
    }
    if spec.variant == "vae":
        groups["mean_path"] = {"dense_w": _dense_w(rng, F * s * s, spec.latent_dim, dtype),
                               "dense_b": _zeros(spec.latent_dim, dtype)}
        groups["variance_path"] = {"dense_w": _dense_w(rng, F * s * s, spec.latent_dim, dtype),
                                   "dense_b": _zeros(spec.latent_dim, dtype)}
        groups["generation_path"] = {"dense_w": _dense_w(rng, spec.latent_dim, spec.latent_dim, dtype),
                                     "dense_b": _zeros(spec.latent_dim, dtype)}
    else:
        groups["mean_path"] = {"conv_w": _conv_w(rng, c, F, 1, dtype), "conv_b": _zeros(c, dtype)}
        groups["variance_path"] = {"conv_w": _conv_w(rng, c, F, 1, dtype), "conv_b": _zeros(c, dtype)}
        groups["generation_path"] = {}
        if spec.variant == "crvae":
            inf = RecurrentParams.init(spec.block_size, rng, dtype)
            gen = RecurrentParams.init(spec.block_size, rng, dtype)
            groups["variance_path"].update({f"lstm_{n}": t for n, t in zip(inf.names, inf.tensors())})
            groups["generation_path"] = {f"lstm_{n}": t for n, t in zip(gen.names, gen.tensors())}
    groups["decoder"] = {
        "deconv1_w": _conv_w(rng, c, e3, 3, dtype), "deconv1_b": _zeros(e3, dtype),
        "deconv2_w": _conv_w(rng, e3, e2, 4, dtype), "deconv2_b": _zeros(e2, dtype),
        "deconv3_w": _conv_w(rng, e2, e1, 4, dtype), "deconv3_b": _zeros(e1, dtype),
        "deconv4_w": _conv_w(rng, e1, ci, 4, dtype), "deconv4_b": _zeros(ci, dtype),
    }
    groups["discriminator"] = {
        "conv1_w": _conv_w(rng, d1, ci, 4, dtype), "conv1_b": _zeros(d1, dtype),
        "conv2_w": _conv_w(rng, d2, d1, 4, dtype), "conv2_b": _zeros(d2, dtype),
        "conv3_w": _conv_w(rng, d3, d2, 4, dtype), "conv3_b": _zeros(d3, dtype),
        "head_w": _dense_w(rng, d3 * s * s, 1, dtype), "head_b": _zeros(1, dtype),
    }
    groups["mi_head"] = {"conv_w": _conv_w(rng, c, d3, 3, dtype), "conv_b": _zeros(c, dtype)}
    return {g: groups[g] for g in GROUPS}


@dataclass
class ModelBundle:
    spec: NetworkSpec
    groups: dict
    optim: dict = field(default_factory=dict)
    meta: dict = field(default_factory=lambda: {"steps": 0, "disc_updates": 0})

    @classmethod
    def create(cls, spec: NetworkSpec, seed: int = 0, dtype=np.float32, lr: float = 1e-3) -> "ModelBundle":
        b = cls(spec, init_params(spec, seed, dtype))
        b.reset_optimizers(lr)
        return b

    def reset_optimizers(self, lr: float) -> None:
        self.optim = {g: AdamState.for_params(self.params([g]), lr=lr) for g in GROUPS}

    def params(self, groups: Iterable[str] = GROUPS) -> list:
        out = []
        for g in groups:
            out.extend(self._group(g).values())
        return out

    def named_params(self, groups: Iterable[str] = GROUPS) -> list:
        return [(f"{g}.{n}", t) for g in groups for n, t in self._group(g).items()]

    def _group(self, g: str) -> dict:
        if g not in self.groups:
            raise KeyError(f"unknown parameter group {g!r}; known: {', '.join(self.groups)}")
        return self.groups[g]

    def __getitem__(self, key: str) -> Tensor:
        g, n = key.split(".", 1)
        return self._group(g)[n]

    def zero_grad(self, groups: Iterable[str] = GROUPS) -> None:
        for p in self.params(groups):
            p.grad = None

    def recurrent(self, group: str) -> RecurrentParams:
        grp = self._group(group)
        return RecurrentParams(*(grp[f"lstm_{n}"] for n in RecurrentParams.names))

    def astype(self, dtype) -> "ModelBundle":
        """Deep copy in another precision (optimizer state is reset)."""
        groups = {g: {n: t.astype(dtype) for n, t in grp.items()} for g, grp in self.groups.items()}
        for grp in groups.values():
            for t in grp.values():
                t.requires_grad = True
        out = ModelBundle(self.spec, groups, meta=dict(self.meta))
        lr = next(iter(self.optim.values())).lr if self.optim else 1e-3
        out.reset_optimizers(lr)
        return out

    def copy(self) -> "ModelBundle":
        return copy.deepcopy(self)

    def digest(self, groups: Iterable[str] = GROUPS) -> str:
        h = hashlib.sha256()
        for name, t in self.named_params(groups):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def param_count(bundle: ModelBundle, groups: Iterable[str]) -> int:
    return int(sum(t.size for t in bundle.params(groups)))


def _validate_image(spec: NetworkSpec, x: Tensor) -> None:
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.image_shape:
        raise DimensionError(f"expected images [N,{','.join(map(str, spec.image_shape))}], got {x.shape}")


def encode(bundle: ModelBundle, x: Tensor) -> Tensor:
    spec, p = bundle.spec, bundle.groups["encoder"]
    _validate_image(spec, x)
    lo, hi = (-1.0, 1.0) if spec.output_activation == "tanh" else (0.0, 1.0)
    if x.size and (x.data.min() < lo - 1e-6 or x.data.max() > hi + 1e-6):
        raise ValidationError(f"input values must lie in [{lo:g}, {hi:g}]; normalize the data first")
    h = dc.leaky_relu(dc.conv2d(x, p["conv1_w"], 2, 1, p["conv1_b"]), LEAK)
    h = dc.leaky_relu(dc.conv2d(h, p["conv2_w"], 2, 1, p["conv2_b"]), LEAK)
    h = dc.leaky_relu(dc.conv2d(h, p["conv3_w"], 2, 1, p["conv3_b"]), LEAK)
    return dc.leaky_relu(dc.conv2d(h, p["conv4_w"], 1, 1, p["conv4_b"]), LEAK)


def posterior(bundle: ModelBundle, features: Tensor) -> GaussianParams:
    spec = bundle.spec
    n = features.shape[0]
    mp, vp = bundle.groups["mean_path"], bundle.groups["variance_path"]
    if spec.variant == "vae":
        flat = dc.reshape(features, (n, -1))
        mu = dc.reshape(dc.linear(flat, mp["dense_w"], mp["dense_b"]), (n, *spec.latent_shape))
        logvar = dc.reshape(dc.linear(flat, vp["dense_w"], vp["dense_b"]), (n, *spec.latent_shape))
        return GaussianParams.from_raw(mu, logvar)
    mu = mean_path(features, mp["conv_w"], mp["conv_b"])
    logvar = dc.conv2d(features, vp["conv_w"], 1, 0, vp["conv_b"])
    if spec.variant == "crvae":
        logvar = variance_transform(logvar, spec.T, bundle.recurrent("variance_path"))
    return GaussianParams.from_raw(mu, logvar)


def transform_latent(bundle: ModelBundle, z: Tensor) -> Tensor:
    """Latent sample -> decoder input ``u`` (LSTM for crvae, dense for vae, identity for cvae)."""
    spec = bundle.spec
    if z.ndim != 4 or tuple(z.shape[1:]) != spec.latent_shape:
        raise DimensionError(f"expected latents [N,{','.join(map(str, spec.latent_shape))}], got {z.shape}")
    if spec.variant == "crvae":
        return generation_transform(z, spec.T, bundle.recurrent("generation_path"))
    if spec.variant == "vae":
        g = bundle.groups["generation_path"]
        n = z.shape[0]
        u = dc.linear(dc.reshape(z, (n, -1)), g["dense_w"], g["dense_b"])
        return dc.reshape(u, z.shape)
    return z


def decode_u(bundle: ModelBundle, u: Tensor) -> Tensor:
    p = bundle.groups["decoder"]
    h = dc.leaky_relu(dc.deconv2d(u, p["deconv1_w"], 1, 1, p["deconv1_b"]), LEAK)
    h = dc.leaky_relu(dc.deconv2d(h, p["deconv2_w"], 2, 1, p["deconv2_b"]), LEAK)
    h = dc.leaky_relu(dc.deconv2d(h, p["deconv3_w"], 2, 1, p["deconv3_b"]), LEAK)
    h = dc.deconv2d(h, p["deconv4_w"], 2, 1, p["deconv4_b"])
    return dc.tanh(h) if bundle.spec.output_activation == "tanh" else dc.logistic(h)


def decode(bundle: ModelBundle, z: Tensor, return_u: bool = False):
    u = transform_latent(bundle, z)
    x = decode_u(bundle, u)
    return (x, u) if return_u else x


def disc_trunk(bundle: ModelBundle, x: Tensor) -> Tensor:
    _validate_image(bundle.spec, x)
    p = bundle.groups["discriminator"]
    h = dc.leaky_relu(dc.conv2d(x, p["conv1_w"], 2, 1, p["conv1_b"]), LEAK)
    h = dc.leaky_relu(dc.conv2d(h, p["conv2_w"], 2, 1, p["conv2_b"]), LEAK)
    return dc.leaky_relu(dc.conv2d(h, p["conv3_w"], 2, 1, p["conv3_b"]), LEAK)


def disc_logit(bundle: ModelBundle, trunk: Tensor) -> Tensor:
    p = bundle.groups["discriminator"]
    n = trunk.shape[0]
    return dc.reshape(dc.linear(dc.reshape(trunk, (n, -1)), p["head_w"], p["head_b"]), (n,))


def mi_from_trunk(bundle: ModelBundle, trunk: Tensor) -> Tensor:
    p = bundle.groups["mi_head"]
    return dc.conv2d(trunk, p["conv_w"], 1, 1, p["conv_b"])


def discriminate(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Probability in (0, 1) that each image is real."""
    return dc.logistic(disc_logit(bundle, disc_trunk(bundle, x)))


def mi_predict(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Estimate of the transformed latent ``u`` from an image (shares the discriminator trunk)."""
    return mi_from_trunk(bundle, disc_trunk(bundle, x))


def dense_transform_count(latent_dim: int) -> int:
    return latent_dim * latent_dim + latent_dim

