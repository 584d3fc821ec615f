"""Image grids and the per-step metrics CSV."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..objectives import LossBreakdown
from .data import to_bytes, write_ppm

METRIC_COLUMNS = ("step", "recon", "kl_head", "kl_tail", "adv_gen", "adv_disc", "mi", "total_gen",
                  "disc_accuracy", "disc_skipped")


def tile(images: np.ndarray, cols: int) -> np.ndarray:
    """Row-major tiling of ``[N,C,H,W]`` into ``[C, rows*H, cols*W]``; missing cells stay 0."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"images must be [N,C,H,W], got shape {images.shape}")
    if cols < 1:
        raise ValueError(f"cols must be >= 1, got {cols}")
    n, c, h, w = images.shape
    rows = max(1, -(-n // cols))
    grid = np.zeros((c, rows * h, cols * w), dtype=images.dtype)
    for k in range(n):
        r, q = divmod(k, cols)
        grid[:, r * h:(r + 1) * h, q * w:(q + 1) * w] = images[k]
    return grid


def emit_grid(images: np.ndarray, cols: int, path) -> np.ndarray:
    """Write a tiled grid of [-1,1] images as one PPM; returns the uint8 ``[H,W,3]`` grid.

    Zero-filled cells are zero *bytes* (black), independent of the value mapping.
    """
    images = np.asarray(images)
    n = images.shape[0]
    u8 = to_bytes(images) if n else np.zeros((0, *images.shape[2:], images.shape[1]), np.uint8)
    if u8.shape[-1] == 1:
        u8 = np.repeat(u8, 3, axis=-1)
    grid = np.moveaxis(tile(np.moveaxis(u8, -1, 1), cols), 0, -1)
    try:
        write_ppm(path, grid)
    except OSError as e:
        raise OSError(f"writing grid {path}: {e}") from e
    return grid


def metrics_row(breakdown: LossBreakdown, step: int) -> list:
    d = {"step": step, **{k: getattr(breakdown, k) for k in METRIC_COLUMNS[1:]}}
    d["disc_skipped"] = int(bool(d["disc_skipped"]))
    return [d[k] for k in METRIC_COLUMNS]


def log_metrics(breakdown: LossBreakdown, step: int, csv_path) -> None:
    """Append one row; the header is written when the file is new or empty."""
    p = Path(csv_path)
    fresh = not p.exists() or p.stat().st_size == 0
    with p.open("a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(METRIC_COLUMNS)
        w.writerow([repr(v) if isinstance(v, float) else v for v in metrics_row(breakdown, step)])


def read_metrics(csv_path) -> list[dict]:
    with Path(csv_path).open(newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]
