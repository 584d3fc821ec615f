"""Compare the compiled and pure-numpy im2col/col2im backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json OUT]

Reports seconds per call for the raw kernels, a conv/deconv forward+backward at the
default network's largest layers, and one pure-crVAE training step. Both backends
must produce bitwise-identical outputs; the script checks that before timing.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from crvae.diffcore import Tape, Tensor, conv2d, deconv2d, kernels
from crvae.diffcore import sum as dsum
from crvae.networks import ModelBundle, NetworkSpec
from crvae.objectives import CoeffSet, train_step


def _cases(rng):
    x = rng.standard_normal((32, 64, 8, 8)).astype(np.float32)
    k = rng.standard_normal((128, 64, 4, 4)).astype(np.float32)
    u = rng.standard_normal((32, 32, 16, 16)).astype(np.float32)
    dk = rng.standard_normal((32, 3, 4, 4)).astype(np.float32)
    cols = kernels.python_im2col(x, 4, 4, 2, 1)
    return x, k, u, dk, cols


def _conv_fb(x, k):
    xt, kt = Tensor(x, requires_grad=True), Tensor(k, requires_grad=True)
    with Tape() as tape:
        tape.backward(dsum(conv2d(xt, kt, 2, 1)))


def _deconv_fb(u, dk):
    ut, kt = Tensor(u, requires_grad=True), Tensor(dk, requires_grad=True)
    with Tape() as tape:
        tape.backward(dsum(deconv2d(ut, kt, 2, 1)))


def bench(repeat: int) -> dict:
    rng = np.random.default_rng(0)
    x, k, u, dk, cols = _cases(rng)
    if kernels.compiled_im2col is None:
        print("compiled backend unavailable; timing the python backend only", file=sys.stderr)
    backends = ["python"] + (["cython"] if kernels.compiled_im2col is not None else [])

    if len(backends) == 2:
        a = kernels.python_im2col(x, 4, 4, 2, 1)
        b = kernels.compiled_im2col(x, 4, 4, 2, 1)
        c = kernels.python_col2im(cols, x.shape, 4, 4, 2, 1)
        d = kernels.compiled_col2im(cols, x.shape, 4, 4, 2, 1)
        if not (np.array_equal(a, b) and np.array_equal(c, d)):
            raise SystemExit("backends disagree; refusing to benchmark")

    batch = np.tanh(rng.standard_normal((32, 3, 32, 32))).astype(np.float32)
    results = {}
    prev = kernels.BACKEND
    try:
        for name in backends:
            kernels.use_backend(name)
            bundle = ModelBundle.create(NetworkSpec(), seed=0)
            step_rng = np.random.default_rng(0)
            jobs = {
                "im2col 32x64x8x8 k4s2": lambda: kernels.im2col(x, 4, 4, 2, 1),
                "col2im 32x64x8x8 k4s2": lambda: kernels.col2im(cols, x.shape, 4, 4, 2, 1),
                "conv2d fwd+bwd 64->128": lambda: _conv_fb(x, k),
                "deconv2d fwd+bwd 32->3": lambda: _deconv_fb(u, dk),
                "train_step crvae B=32": lambda: train_step(bundle, batch, CoeffSet(beta=0, kappa=0), step_rng),
            }
            for label, fn in jobs.items():
                fn()  # warm-up
                n = max(1, repeat // 10) if label.startswith("train") else repeat
                t = min(timeit.repeat(fn, number=n, repeat=3)) / n
                results.setdefault(label, {})[name] = t
    finally:
        kernels.use_backend(prev)
    return results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results as JSON")
    args = ap.parse_args(argv)
    res = bench(args.repeat)
    print(f"{'case':<26} {'python s':>10} {'cython s':>11} {'speedup':>8}")
    for label, r in res.items():
        py, cc = r["python"], r.get("cython")
        extra = f"{cc:>11.5f} {py / cc:>7.2f}x" if cc else f"{'-':>11} {'-':>8}"
        print(f"{label:<26} {py:>10.5f} {extra}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(res, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
