"""Latent space: channel blocks, channel-recurrent transforms, sampling and the weighted KL.

Block flattening order is channel-major, then row-major over space, i.e. a
plain C-order reshape of each ``[N, c/T, w, h]`` slice.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError, Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
KL_HEAD_STEPS = 3


class ConfigError(ValueError):
    """Inconsistent model or training configuration."""


@dataclass
class GaussianParams:
    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise DimensionError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")

    @property
    def shape(self) -> tuple:
        return self.mu.shape

    @classmethod
    def from_raw(cls, mu: Tensor, logvar: Tensor) -> "GaussianParams":
        return cls(mu, dc.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX))


@dataclass
class LatentBlocks:
    blocks: list

    @property
    def T(self) -> int:
        return len(self.blocks)

    def concat(self) -> Tensor:
        return dc.concat(self.blocks, axis=1)

    def replace(self, t: int, block: Tensor) -> "LatentBlocks":
        """Copy with block ``t`` (0-based) swapped out."""
        blocks = list(self.blocks)
        if block.shape != blocks[t].shape:
            raise DimensionError(f"block {t}: expected {blocks[t].shape}, got {block.shape}")
        blocks[t] = block
        return LatentBlocks(blocks)


@dataclass(frozen=True)
class KLWeights:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ConfigError(f"KL weights must be finite and nonnegative, got {self.weights}")

    @property
    def T(self) -> int:
        return len(self.weights)

    @classmethod
    def head_tail(cls, alpha_head: float, alpha_tail: float, T: int, head_steps: int = KL_HEAD_STEPS) -> "KLWeights":
        """``alpha_head`` on the first ``head_steps`` blocks, ``alpha_tail`` on the rest."""
        return cls(tuple(alpha_head if t < head_steps else alpha_tail for t in range(T)))

    @classmethod
    def uniform(cls, w: float, T: int) -> "KLWeights":
        return cls((w,) * T)

    @classmethod
    def from_alphas(cls, alphas: Sequence[float]) -> "KLWeights":
        """The ``(1 - alpha_t)`` parameterization; all-zero alphas give the plain VAE KL."""
        return cls(tuple(1.0 - a for a in alphas))

    def __add__(self, other: "KLWeights") -> "KLWeights":
        return KLWeights(tuple(a + b for a, b in zip(self.weights, other.weights)))


def _check_T(c: int, T: int) -> None:
    if T < 1 or c % T:
        raise ConfigError(f"T={T} must divide the latent channel count c={c}")


def slice_channels(z: Tensor, T: int) -> LatentBlocks:
    if z.ndim != 4:
        raise DimensionError(f"latent tensor must be [N,c,w,h], got {z.shape}")
    _check_T(z.shape[1], T)
    if T == 1:
        return LatentBlocks([z])
    return LatentBlocks(dc.split(z, T, axis=1))


@dataclass
class RecurrentParams:
    """Weights of one channel-recurrent transform: LSTM (i,f,g,o) plus square output projection."""

    w_x: Tensor
    w_h: Tensor
    b: Tensor
    proj_w: Tensor
    proj_b: Tensor

    names = ("w_x", "w_h", "b", "proj_w", "proj_b")

    def tensors(self) -> list:
        return [getattr(self, n) for n in self.names]

    @property
    def block_size(self) -> int:
        return self.w_x.shape[0]

    @classmethod
    def init(cls, block_size: int, rng: np.random.Generator, dtype=np.float32) -> "RecurrentParams":
        n = block_size
        a_in = np.sqrt(6.0 / (n + 4 * n))
        a_proj = np.sqrt(6.0 / (n + n))
        b = np.zeros(4 * n)
        b[n:2 * n] = 1.0  # forget gate
        mk = lambda arr: Tensor(arr.astype(dtype), requires_grad=True, dtype=dtype)  # noqa: E731
        return cls(
            w_x=mk(rng.uniform(-a_in, a_in, (n, 4 * n))),
            w_h=mk(rng.uniform(-a_in, a_in, (n, 4 * n))),
            b=mk(b),
            proj_w=mk(rng.uniform(-a_proj, a_proj, (n, n))),
            proj_b=mk(np.zeros(n)),
        )

    @classmethod
    def zeros(cls, block_size: int, proj_bias: float = 0.0, dtype=np.float32) -> "RecurrentParams":
        n = block_size
        mk = lambda shape, v=0.0: Tensor(np.full(shape, v, dtype=dtype), requires_grad=True, dtype=dtype)  # noqa: E731
        return cls(mk((n, 4 * n)), mk((n, 4 * n)), mk((4 * n,)), mk((n, n)), mk((n,), proj_bias))


def recurrent_param_count(block_size: int) -> int:
    n = block_size
    return n * 4 * n + n * 4 * n + 4 * n + n * n + n


def _recurrent(x: Tensor, T: int, p: RecurrentParams) -> Tensor:
    n, c, w, h = x.shape
    _check_T(c, T)
    size = (c // T) * w * h
    if p.block_size != size:
        raise DimensionError(f"transform expects blocks of {p.block_size} values, latent gives {size} (c={c}, T={T}, {w}x{h})")
    blocks = slice_channels(x, T).blocks
    state_h = Tensor(np.zeros((n, size), dtype=x.dtype), dtype=x.dtype)
    state_c = Tensor(np.zeros((n, size), dtype=x.dtype), dtype=x.dtype)
    outs = []
    for blk in blocks:
        state_h, state_c = dc.lstm_cell(dc.reshape(blk, (n, size)), state_h, state_c, p.w_x, p.w_h, p.b)
        y = dc.linear(state_h, p.proj_w, p.proj_b)
        outs.append(dc.reshape(y, (n, c // T, w, h)))
    return outs[0] if T == 1 else dc.concat(outs, axis=1)


def variance_transform(logvar: Tensor, T: int, params: RecurrentParams) -> Tensor:
    """Run the per-block variance-path features through the inference LSTM; returns the final logvar."""
    return _recurrent(logvar, T, params)


def generation_transform(z: Tensor, T: int, params: RecurrentParams) -> Tensor:
    """u = LSTM(z_1..z_T), projected back to block shape; u_t depends only on z_1..z_t."""
    return _recurrent(z, T, params)


def mean_path(features: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1x1 convolution from encoder features to latent means."""
    return dc.conv2d(features, kernel, 1, 0, bias)


def reparam_sample(params: GaussianParams, noise) -> Tensor:
    noise = noise if isinstance(noise, Tensor) else Tensor(np.asarray(noise, dtype=params.mu.dtype))
    if noise.shape != params.mu.shape:
        raise DimensionError(f"noise {noise.shape} does not match mu {params.mu.shape}")
    lv = dc.clamp(params.logvar, LOGVAR_MIN, LOGVAR_MAX)
    return dc.add(params.mu, dc.mul(dc.exp(dc.scale(lv, 0.5)), noise))


def kl_elementwise(params: GaussianParams) -> Tensor:
    """0.5 * (mu^2 + e^logvar - logvar - 1) against the standard normal prior."""
    lv = dc.clamp(params.logvar, LOGVAR_MIN, LOGVAR_MAX)
    inner = dc.sub(dc.add(dc.square(params.mu), dc.exp(lv)), lv)
    return dc.scale(dc.sub(inner, 1.0), 0.5)


def kl_weighted(params: GaussianParams, weights: KLWeights, T: int) -> tuple[Tensor, Tensor]:
    """Returns ``(total, per_step)``; ``per_step[t]`` is block t's KL summed over its
    elements and averaged over the batch, ``total = sum_t w_t * per_step[t]``."""
    if weights.T != T:
        raise ConfigError(f"{weights.T} KL weights for T={T} blocks")
    n, c = params.shape[:2]
    _check_T(c, T)
    kl = kl_elementwise(params)
    per_step = dc.scale(dc.sum(dc.reshape(kl, (n, T, -1)), axis=(0, 2)), 1.0 / n)
    w = Tensor(np.asarray(weights.weights, dtype=kl.dtype), dtype=kl.dtype)
    return dc.sum(dc.mul(per_step, w)), per_step
