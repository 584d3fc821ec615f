"""Seeded training loop over an in-memory dataset."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..latent import ConfigError
from ..networks import ModelBundle
from ..objectives import LossBreakdown, train_step
from .config import TrainConfig
from .data import Dataset
from .io import log_metrics


def total_steps(config: TrainConfig, n_images: int) -> int:
    if config.steps is not None:
        return config.steps
    return config.epochs * (n_images // config.batch_size)


def _batches(dataset: Dataset, config: TrainConfig, rng: np.random.Generator):
    while True:
        yield from dataset.batches(config.batch_size, rng, flip=config.flip)


def train(config: TrainConfig, dataset: Dataset, bundle: Optional[ModelBundle] = None,
          metrics_path=None, callback: Callable[[int, LossBreakdown, ModelBundle], None] | None = None,
          ) -> tuple[ModelBundle, list]:
    """Run ``total_steps`` generator/discriminator steps; returns the bundle and per-step breakdowns.

    A fresh bundle is initialized from ``config.seed``. When continuing a bundle, the batch
    and noise streams are reseeded from ``(seed, steps already taken)``, so a run is a pure
    function of config, data and starting bundle.
    """
    if dataset.image_shape != config.network.image_shape:
        raise ConfigError(f"dataset images are {dataset.image_shape}, network expects {config.network.image_shape}")
    if config.batch_size > len(dataset):
        raise ConfigError(f"batch size {config.batch_size} exceeds dataset size {len(dataset)}")
    if bundle is None:
        bundle = ModelBundle.create(config.network, seed=config.seed, lr=config.lr)
    elif bundle.spec.to_dict() != config.network.to_dict():
        raise ConfigError("bundle network differs from config.network")
    start = int(bundle.meta.get("steps", 0))
    data_rng = np.random.default_rng([config.seed, start, 0])
    step_rng = np.random.default_rng([config.seed, start, 1])
    coeffs = config.coeffs()
    history = []
    batches = _batches(dataset, config, data_rng)
    for k in range(total_steps(config, len(dataset))):
        out = train_step(bundle, next(batches), coeffs, step_rng,
                         head_steps=config.kl_head_steps, threshold=config.disc_threshold)
        history.append(out)
        step = start + k + 1
        if metrics_path is not None:
            log_metrics(out, step, metrics_path)
        if callback is not None:
            callback(step, out, bundle)
    return bundle, history
