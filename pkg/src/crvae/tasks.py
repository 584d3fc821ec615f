"""Downstream latent-space procedures on a (trained) bundle."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, DimensionError, NonFiniteError, Tape, Tensor, adam_step, no_grad
from .latent import ConfigError, LatentBlocks
from .networks import ModelBundle, decode, disc_logit, disc_trunk, encode, posterior

COMPLETION_STEP_SIZE = 0.05


def _latent(bundle: ModelBundle, z) -> Tensor:
    if isinstance(z, LatentBlocks):
        z = z.concat()
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=_dtype(bundle)))
    shape = bundle.spec.latent_shape
    if z.ndim != 4 or tuple(z.shape[1:]) != shape:
        raise DimensionError(f"latent must be [N,{','.join(map(str, shape))}], got {z.shape}")
    return z


def _dtype(bundle: ModelBundle) -> np.dtype:
    return bundle.params(["decoder"])[0].dtype


def decode_images(bundle: ModelBundle, z) -> np.ndarray:
    with no_grad():
        return decode(bundle, _latent(bundle, z)).data


def prior_latents(bundle: ModelBundle, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, *bundle.spec.latent_shape)).astype(_dtype(bundle))


def sample_prior(bundle: ModelBundle, n: int, seed: int) -> np.ndarray:
    """Decode ``n`` standard-normal latents drawn from a generator seeded with ``seed``."""
    if n == 0:
        return np.zeros((0, *bundle.spec.image_shape), dtype=_dtype(bundle))
    return decode_images(bundle, prior_latents(bundle, n, seed))


def reconstruct(bundle: ModelBundle, x: np.ndarray, seed: int | None = None) -> np.ndarray:
    """Decode the posterior mean (or a posterior sample when ``seed`` is given)."""
    with no_grad():
        params = posterior(bundle, encode(bundle, Tensor(np.asarray(x, dtype=_dtype(bundle)))))
        z = params.mu.data
        if seed is not None:
            rng = np.random.default_rng(seed)
            z = z + np.exp(0.5 * params.logvar.data) * rng.standard_normal(z.shape).astype(z.dtype)
        return decode(bundle, Tensor(z)).data


def progressive_latent(z: LatentBlocks, k: int) -> Tensor:
    if not 0 <= k <= z.T:
        raise ValueError(f"k={k} outside [0, {z.T}]")
    blocks = [b if t < k else Tensor(np.zeros_like(b.data)) for t, b in enumerate(z.blocks)]
    return LatentBlocks(blocks).concat()


def progressive_sample(bundle: ModelBundle, z: LatentBlocks, k: int) -> np.ndarray:
    """Decode with blocks 1..k taken from ``z`` and blocks k+1..T zeroed."""
    if z.T != bundle.spec.T:
        raise ConfigError(f"latent has {z.T} blocks, model uses T={bundle.spec.T}")
    return decode_images(bundle, progressive_latent(z, k))


def progressive_strip(bundle: ModelBundle, z: LatentBlocks) -> list:
    return [progressive_sample(bundle, z, k) for k in range(z.T + 1)]


def interpolation_latents(z: LatentBlocks, z_t: Tensor, t: int, steps: int) -> list:
    """Latents with block ``t`` (1-based) moved from z_t to ``z_t`` in ``steps`` even steps."""
    if not 1 <= t <= z.T:
        raise ValueError(f"block index t={t} outside [1, {z.T}]")
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    start = z.blocks[t - 1].data
    end = z_t.data if isinstance(z_t, Tensor) else np.asarray(z_t, dtype=start.dtype)
    if end.shape != start.shape:
        raise DimensionError(f"replacement block {end.shape} does not match block {start.shape}")
    frames = []
    span = steps - 1
    for s in range(steps):
        # weights (span-s)/span and s/span: swapping endpoints reverses frames bitwise
        blk = start if s == 0 else end if s == span else ((span - s) / span) * start + (s / span) * end
        frames.append(z.replace(t - 1, Tensor(blk.astype(start.dtype))).concat())
    return frames


def interpolate_block(bundle: ModelBundle, z: LatentBlocks, z_t, t: int, steps: int) -> np.ndarray:
    """Decoded frames ``[steps, C, H, W]`` of the per-block interpolation."""
    return np.concatenate([decode_images(bundle, f) for f in interpolation_latents(z, z_t, t, steps)], axis=0)


@dataclass
class CompletionSpec:
    mask: np.ndarray
    gamma: float = 1e-5
    tau: float = 0.003
    iters: int = 200
    step_size: float = COMPLETION_STEP_SIZE
    init: str = "encode-occluded"
    seed: int = 0

    def __post_init__(self):
        m = np.asarray(self.mask)
        if not np.all((m == 0) | (m == 1)):
            raise ConfigError("mask entries must be 0 (occluded) or 1 (observed)")
        if self.gamma < 0 or self.tau < 0:
            raise ConfigError(f"gamma and tau must be nonnegative, got {self.gamma}, {self.tau}")
        if self.iters < 0:
            raise ConfigError(f"iters must be >= 0, got {self.iters}")
        if self.init not in ("encode-occluded", "prior-sample"):
            raise ConfigError(f"unknown init mode {self.init!r}")


@dataclass
class CompletionResult:
    image: np.ndarray
    z: np.ndarray
    trace: list = field(default_factory=list)
    initial_image: np.ndarray | None = None


def centered_mask(shape: tuple, area_fraction: float = 0.25) -> np.ndarray:
    """Mask ``[C,H,W]`` with a centered square hole covering ``area_fraction`` of the image."""
    c, h, w = shape
    side_h = int(round(h * math.sqrt(area_fraction)))
    side_w = int(round(w * math.sqrt(area_fraction)))
    m = np.ones(shape, dtype=np.float32)
    y0, x0 = (h - side_h) // 2, (w - side_w) // 2
    m[:, y0:y0 + side_h, x0:x0 + side_w] = 0
    return m


@contextmanager
def _frozen(bundle: ModelBundle):
    params = bundle.params()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def completion_objective(bundle: ModelBundle, z: Tensor, x: np.ndarray, mask: np.ndarray,
                         gamma: float, tau: float) -> tuple[Tensor, Tensor]:
    """masked squared error + gamma * (-log N(z; 0, I)) + tau * log(1 - D(x_hat)), summed over the batch."""
    x_hat = decode(bundle, z)
    m = Tensor(np.broadcast_to(mask, x_hat.shape).astype(x_hat.dtype))
    diff = dc.mul(dc.sub(x_hat, Tensor(x.astype(x_hat.dtype))), m)
    obj = dc.sum(dc.square(diff))
    if gamma:
        neg_log_prior = dc.add(dc.scale(dc.sum(dc.square(z)), 0.5), 0.5 * z.size * math.log(2 * math.pi))
        obj = dc.add(obj, dc.scale(neg_log_prior, gamma))
    if tau:
        logit = disc_logit(bundle, disc_trunk(bundle, x_hat))
        obj = dc.add(obj, dc.scale(dc.sum(dc.log_sigmoid(dc.neg(logit))), tau))
    return obj, x_hat


def complete(bundle: ModelBundle, x: np.ndarray, spec: CompletionSpec) -> CompletionResult:
    """Fill occluded pixels of ``x`` ``[N,C,H,W]`` (or ``[C,H,W]``) by optimizing the latent z.

    ``trace`` holds the objective before every update plus the final value
    (``iters + 1`` entries). Bundle parameters are never modified.
    """
    single = np.ndim(x) == 3
    x = np.asarray(x)[None] if single else np.asarray(x)
    dtype = _dtype(bundle)
    x = x.astype(dtype)
    mask = np.asarray(spec.mask, dtype=dtype)
    if tuple(x.shape[1:]) != bundle.spec.image_shape:
        raise DimensionError(f"image must be {bundle.spec.image_shape}, got {x.shape[1:]}")
    if spec.tau > 0 and bundle.meta.get("disc_updates", 0) == 0:
        raise ConfigError("tau > 0 needs a trained discriminator; this bundle's discriminator was never updated")

    with _frozen(bundle):
        if spec.init == "encode-occluded":
            with no_grad():
                occluded = x * np.broadcast_to(mask, x.shape)
                z0 = posterior(bundle, encode(bundle, Tensor(occluded))).mu.data.copy()
        else:
            z0 = np.random.default_rng(spec.seed).standard_normal((x.shape[0], *bundle.spec.latent_shape)).astype(dtype)
        z = Tensor(z0, requires_grad=True)
        state = AdamState.for_params([z], lr=spec.step_size)
        trace = []
        initial = None
        for it in range(spec.iters + 1):
            with Tape() as tape:
                obj, x_hat = completion_objective(bundle, z, x, mask, spec.gamma, spec.tau)
                value = float(obj.data)
                if not math.isfinite(value):
                    raise NonFiniteError(f"completion objective diverged at iteration {it}; trace so far {trace}")
                trace.append(value)
                if it == 0:
                    initial = x_hat.data.copy()
                if it == spec.iters:
                    final = x_hat.data.copy()
                    break
                tape.backward(obj)
            adam_step([z], [z.grad], state, names=["z"])
            z.grad = None
    image = final[0] if single else final
    return CompletionResult(image=image, z=z.data.copy(), trace=trace,
                            initial_image=initial[0] if single else initial)


def region_mse(a: np.ndarray, b: np.ndarray, region: np.ndarray) -> float:
    """MSE of ``a - b`` restricted to entries where ``region`` is 1 (per-sample region broadcasts)."""
    r = np.broadcast_to(region, a.shape).astype(bool)
    return float(np.mean((a[r] - b[r]) ** 2)) if r.any() else 0.0


__all__ = [
    "CompletionResult", "CompletionSpec", "centered_mask", "complete", "completion_objective",
    "decode_images", "interpolate_block", "interpolation_latents", "progressive_latent",
    "progressive_sample", "progressive_strip", "prior_latents", "reconstruct", "region_mse",
    "sample_prior",
]
