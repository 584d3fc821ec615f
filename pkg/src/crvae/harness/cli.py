"""``crvae`` command line.

Exit status: 0 on success, 1 on a runtime failure (one ``crvae: error: ...`` line on
stderr), 2 on a usage error (argparse).
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .. import tasks
from ..diffcore import Tensor
from ..latent import LatentBlocks, slice_channels
from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import SyntheticCorpusSpec, generate_corpus, load_dataset, read_image, to_bytes, to_unit, write_ppm
from .io import emit_grid
from .train import train


class CLIError(Exception):
    """Invalid input detected after argument parsing."""


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    d = cfg.to_dict()
    if args.variant:
        d["network"]["variant"] = args.variant
    for key in ("epochs", "steps", "seed", "lr", "batch_size"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if args.no_gan:
        d["use_gan"] = False
    if args.no_mi:
        d["use_mi"] = False
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(args.data)
    bundle = None
    if args.resume:
        bundle, _ = load_checkpoint(args.resume, expect=cfg)
    metrics = args.metrics if args.metrics else None
    bundle, hist = train(cfg, data, bundle, metrics_path=metrics)
    save_checkpoint(bundle, cfg, args.out)
    last = hist[-1] if hist else None
    summary = f"trained {len(hist)} steps (total {bundle.meta['steps']})"
    if last is not None:
        summary += f", final recon {last.recon:.5f}"
    print(f"{summary}; checkpoint {args.out} sha256 {file_digest(args.out)[:16]}")
    return 0


def _cols(args, n: int) -> int:
    return args.cols if args.cols else max(1, int(np.ceil(np.sqrt(n))))


def cmd_sample(args) -> int:
    if args.n < 1:
        raise CLIError(f"--n must be >= 1, got {args.n}")
    bundle, _ = load_checkpoint(args.ckpt)
    imgs = tasks.sample_prior(bundle, args.n, args.seed)
    emit_grid(imgs, _cols(args, args.n), args.grid)
    print(f"wrote {args.n} samples to {args.grid}")
    return 0


def cmd_reconstruct(args) -> int:
    bundle, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    x = data.images[:args.n]
    rec = tasks.reconstruct(bundle, x)
    # originals and reconstructions in alternating rows
    cols = _cols(args, len(x))
    rows = []
    for k in range(0, len(x), cols):
        orig, out = x[k:k + cols], rec[k:k + cols]
        pad = cols - len(orig)
        if pad:
            z = np.zeros((pad, *orig.shape[1:]), orig.dtype) - 1
            orig, out = np.concatenate([orig, z]), np.concatenate([out, z])
        rows.extend([orig, out])
    emit_grid(np.concatenate(rows), cols, args.grid)
    err = float(np.mean((rec - x) ** 2))
    print(f"reconstructed {len(x)} images (mse {err:.5f}) to {args.grid}")
    return 0


def _latent_blocks(bundle, n: int, seed: int) -> LatentBlocks:
    z = Tensor(tasks.prior_latents(bundle, n, seed))
    return slice_channels(z, bundle.spec.T)


def cmd_progressive(args) -> int:
    bundle, _ = load_checkpoint(args.ckpt)
    z = _latent_blocks(bundle, args.n, args.seed)
    strip = tasks.progressive_strip(bundle, z)  # T+1 arrays of [n,C,H,W]
    # one row per sample, columns k = 0..T
    grid = np.stack(strip, axis=1).reshape(-1, *bundle.spec.image_shape)
    emit_grid(grid, bundle.spec.T + 1, args.grid)
    print(f"wrote progressive strip k=0..{bundle.spec.T} for {args.n} samples to {args.grid}")
    return 0


def cmd_interp(args) -> int:
    bundle, _ = load_checkpoint(args.ckpt)
    T = bundle.spec.T
    if not 1 <= args.t <= T:
        raise CLIError(f"--t must be in [1, {T}], got {args.t}")
    if args.steps < 2:
        raise CLIError(f"--steps must be >= 2, got {args.steps}")
    z = _latent_blocks(bundle, 1, args.seed)
    target = Tensor(np.random.default_rng([args.seed, 1]).standard_normal(z.blocks[0].shape).astype(z.blocks[0].dtype))
    frames = tasks.interpolate_block(bundle, z, target, args.t, args.steps)
    emit_grid(frames, args.steps, args.grid)
    print(f"wrote {args.steps} frames interpolating block {args.t} to {args.grid}")
    return 0


def _read_mask(path: str, shape: tuple) -> np.ndarray:
    if path == "center":
        return tasks.centered_mask(shape, 0.25)
    m = read_image(path)
    if m.shape[:2] != shape[1:]:
        raise CLIError(f"mask {path} is {m.shape[1]}x{m.shape[0]}, image is {shape[2]}x{shape[1]}")
    observed = (m.max(axis=-1) > 127).astype(np.float32)  # white = observed, black = occluded
    return np.broadcast_to(observed, shape).copy()


def cmd_complete(args) -> int:
    bundle, _ = load_checkpoint(args.ckpt)
    x = to_unit(read_image(args.image))
    if x.shape != bundle.spec.image_shape:
        raise CLIError(f"image {args.image} has shape {x.shape}, model expects {bundle.spec.image_shape}")
    mask = _read_mask(args.mask, x.shape)
    spec = tasks.CompletionSpec(mask=mask, gamma=args.gamma, tau=args.tau, iters=args.iters, seed=args.seed)
    res = tasks.complete(bundle, x, spec)
    hole = 1 - mask
    before = tasks.region_mse(res.initial_image, x, hole)
    after = tasks.region_mse(res.image, x, hole)
    if args.out:
        write_ppm(args.out, to_bytes(res.image))
    if args.grid:
        occluded = x * mask - hole  # occluded pixels shown black
        emit_grid(np.stack([x, occluded, res.initial_image, res.image]), 4, args.grid)
    print(f"completion: objective {res.trace[0]:.5f} -> {res.trace[-1]:.5f}; "
          f"masked mse {before:.5f} -> {after:.5f}")
    return 0


def cmd_gradcheck(args) -> int:
    from ..checks import CHECK_NAMES, run_check

    names = [args.op] if args.op else list(CHECK_NAMES)
    if args.op and args.op not in CHECK_NAMES:
        raise CLIError(f"unknown op {args.op!r}; choose from {', '.join(CHECK_NAMES)}")
    failed = 0
    for n in names:
        rep = run_check(n)
        print(rep.line())
        failed += not rep.ok
    if failed:
        raise CLIError(f"{failed} of {len(names)} gradient checks exceeded the tolerance")
    return 0


def cmd_gen_data(args) -> int:
    spec = SyntheticCorpusSpec.load(args.spec) if args.spec else SyntheticCorpusSpec()
    if args.n is not None:
        spec = SyntheticCorpusSpec(args.n, spec.image_size, spec.seed, spec.generator)
    out = generate_corpus(spec, args.out)
    print(f"wrote {spec.n_images} images ({spec.image_size}x{spec.image_size}, seed {spec.seed}) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crvae", description="Channel-recurrent VAE toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on an image directory")
    t.add_argument("--config", help="TrainConfig JSON (all fields optional)")
    t.add_argument("--data", required=True, help="directory of .ppm/.png images")
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int, help="overrides --epochs")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--variant", choices=("vae", "cvae", "crvae"))
    t.add_argument("--no-gan", action="store_true", help="beta = 0")
    t.add_argument("--no-mi", action="store_true", help="kappa = 0")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--metrics", help="append per-step metrics to this CSV")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="decode prior samples into a grid")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", required=True)
    s.add_argument("--cols", type=int)
    s.set_defaults(func=cmd_sample)

    r = sub.add_parser("reconstruct", help="reconstruct images from a directory")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--grid", required=True)
    r.add_argument("--n", type=int, default=8)
    r.add_argument("--cols", type=int)
    r.set_defaults(func=cmd_reconstruct)

    g = sub.add_parser("progressive", help="k = 0..T progressive generation strip")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--grid", required=True)
    g.set_defaults(func=cmd_progressive)

    i = sub.add_parser("interp", help="interpolate one latent block")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--t", type=int, required=True, help="block index, 1-based")
    i.add_argument("--steps", type=int, default=8)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--grid", required=True)
    i.set_defaults(func=cmd_interp)

    c = sub.add_parser("complete", help="fill an occluded region by latent optimization")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--mask", required=True, help="mask image (white observed) or 'center'")
    c.add_argument("--gamma", type=float, default=1e-5)
    c.add_argument("--tau", type=float, default=0.003)
    c.add_argument("--iters", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="completed image (.ppm)")
    c.add_argument("--grid", help="original | occluded | iteration 0 | completed")
    c.set_defaults(func=cmd_complete)

    k = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    k.add_argument("--op", help="single check name (default: all)")
    k.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("gen-data", help="write the synthetic two-blob corpus")
    d.add_argument("--spec", help="SyntheticCorpusSpec JSON")
    d.add_argument("--out", required=True)
    d.add_argument("--n", type=int, help="override n_images")
    d.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("crvae: interrupted", file=sys.stderr)
        return 130
    except Exception as e:  # noqa: BLE001 - every failure becomes one diagnostic line
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"crvae: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
