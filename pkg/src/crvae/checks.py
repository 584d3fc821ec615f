"""Named finite-difference gradient checks for every operator and the composite model paths.

Each check builds float64 inputs and a scalar function; ``run_check`` hands them to
``grad_check``. Inputs are kept away from the kinks of relu/leaky_relu/clamp so
central differences are meaningful.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import GradCheckResult, Tensor, grad_check, precision
from .latent import GaussianParams, KLWeights, RecurrentParams, kl_weighted, reparam_sample, variance_transform
from .networks import GENERATOR_GROUPS, ModelBundle, NetworkSpec, decode, disc_logit, disc_trunk, encode, mi_from_trunk, posterior
from .objectives import adversarial_losses, mi_loss, recon_loss

GRADCHECK_TOL = 1e-4


@dataclass
class CheckReport:
    name: str
    result: GradCheckResult
    seconds: float

    @property
    def ok(self) -> bool:
        return self.result.ok(GRADCHECK_TOL)

    def line(self) -> str:
        r = self.result
        status = "ok" if self.ok else "FAIL"
        return f"{self.name:<22} {status:<4} max_rel_err={r.max_rel_error:.2e} checked={r.checked} ({self.seconds:.2f}s)"


def _t(rng, *shape, lo=None, away=0.0) -> Tensor:
    a = rng.standard_normal(shape)
    if lo is not None:
        a = lo + np.abs(a)
    if away:
        a = np.where(np.abs(a) < away, np.sign(a + 1e-12) * away, a)  # stay off kinks at 0
    return Tensor(a, requires_grad=True)


def _weighted(y: Tensor, seed: int = 99) -> Tensor:
    """Random linear functional: exercises every output element of ``y``."""
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return dc.sum(dc.mul(y, Tensor(w)))


def _op(fn):
    return lambda *xs: _weighted(fn(*xs))


def _ops(rng) -> dict:
    c = {}
    c["add"] = (_op(dc.add), [_t(rng, 3, 4), _t(rng, 4)])
    c["sub"] = (_op(dc.sub), [_t(rng, 3, 4), _t(rng, 3, 1)])
    c["mul"] = (_op(dc.mul), [_t(rng, 2, 3, 4), _t(rng, 3, 4)])
    c["div"] = (_op(dc.div), [_t(rng, 3, 4), _t(rng, 3, 4, lo=0.5)])
    c["neg"] = (_op(dc.neg), [_t(rng, 5)])
    c["scale"] = (_op(lambda x: dc.scale(x, -2.5)), [_t(rng, 5)])
    c["exp"] = (_op(dc.exp), [_t(rng, 3, 3)])
    c["log"] = (_op(dc.log), [_t(rng, 3, 3, lo=0.2)])
    c["tanh"] = (_op(dc.tanh), [_t(rng, 3, 3)])
    c["logistic"] = (_op(dc.logistic), [_t(rng, 3, 3)])
    c["log_sigmoid"] = (_op(dc.log_sigmoid), [_t(rng, 3, 3)])
    c["relu"] = (_op(dc.relu), [_t(rng, 4, 4, away=0.05)])
    c["leaky_relu"] = (_op(dc.leaky_relu), [_t(rng, 4, 4, away=0.05)])
    c["square"] = (_op(dc.square), [_t(rng, 4)])
    x = Tensor(np.array([-2.0, -0.5, 0.3, 0.9, 1.7]), requires_grad=True)
    c["clamp"] = (_op(lambda v: dc.clamp(v, -1.0, 1.0)), [x])
    c["sum"] = (_op(lambda v: dc.sum(v, axis=1, keepdims=True)), [_t(rng, 3, 4, 2)])
    c["mean"] = (_op(lambda v: dc.mean(v, axis=(0, 2))), [_t(rng, 3, 4, 2)])
    c["reshape"] = (_op(lambda v: dc.reshape(v, (4, 6))), [_t(rng, 2, 3, 4)])
    c["transpose"] = (_op(lambda v: dc.transpose(v, (2, 0, 1))), [_t(rng, 2, 3, 4)])
    c["slice_axis"] = (_op(lambda v: dc.slice_axis(v, 1, 1, 3)), [_t(rng, 2, 4, 3)])
    c["split"] = (lambda v: dc.add(_weighted(dc.split(v, 2, axis=1)[0], 1), _weighted(dc.split(v, 2, axis=1)[1], 2)),
                  [_t(rng, 2, 4, 3)])
    c["concat"] = (_op(lambda a, b: dc.concat([a, b], axis=1)), [_t(rng, 2, 3), _t(rng, 2, 2)])
    c["matmul"] = (_op(dc.matmul), [_t(rng, 3, 4), _t(rng, 4, 5)])
    c["linear"] = (_op(dc.linear), [_t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2)])
    # a stopped input has no finite-difference analogue; the check covers the pass-through side
    c["stop_gradient"] = (lambda a, b: _weighted(dc.mul(dc.stop_gradient(a), b)),
                          [Tensor(rng.standard_normal(3)), _t(rng, 3)])
    c["conv2d"] = (_op(lambda x, k, b: dc.conv2d(x, k, 2, 1, b)), [_t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 4, 4), _t(rng, 4)])
    c["conv2d_3x3"] = (_op(lambda x, k: dc.conv2d(x, k, 1, 1)), [_t(rng, 1, 2, 5, 5), _t(rng, 3, 2, 3, 3)])
    c["deconv2d"] = (_op(lambda x, k, b: dc.deconv2d(x, k, 2, 1, b)), [_t(rng, 2, 3, 3, 3), _t(rng, 3, 2, 4, 4), _t(rng, 2)])
    c["deconv2d_3x3"] = (_op(lambda x, k: dc.deconv2d(x, k, 1, 1)), [_t(rng, 1, 2, 4, 4), _t(rng, 2, 3, 3, 3)])

    def lstm(x, h, cc, wx, wh, b):
        h2, c2 = dc.lstm_cell(x, h, cc, wx, wh, b)
        return dc.add(_weighted(h2, 1), _weighted(c2, 2))

    n, i, hd = 2, 3, 4
    c["lstm_cell"] = (lstm, [_t(rng, n, i), _t(rng, n, hd), _t(rng, n, hd), _t(rng, i, 4 * hd),
                             _t(rng, hd, 4 * hd), _t(rng, 4 * hd)])
    return c


def _bundle(variant: str) -> ModelBundle:
    b = ModelBundle.create(NetworkSpec.tiny(variant), seed=3, dtype=np.float64)
    # nonzero biases keep pre-activations of near-zero inputs off the leaky_relu kink
    rng = np.random.default_rng(4)
    for name, t in b.named_params():
        if name.endswith("_b"):
            t.data += 0.2 * rng.standard_normal(t.shape)
    return b


def _images(spec: NetworkSpec, n: int, seed: int) -> np.ndarray:
    return np.tanh(np.random.default_rng(seed).standard_normal((n, *spec.image_shape)))


def _vae_path(variant: str):
    """encode -> posterior -> sample -> decode -> recon (+ weighted KL)."""
    b = _bundle(variant)
    spec = b.spec
    x = Tensor(_images(spec, 2, 5))
    noise = Tensor(np.random.default_rng(6).standard_normal((2, *spec.latent_shape)))
    w = KLWeights.head_tail(0.3, 0.2, spec.T, head_steps=1)

    def fn(*_):
        p = posterior(b, encode(b, x))
        x_hat = decode(b, reparam_sample(p, noise))
        kl, _ = kl_weighted(p, w, spec.T)
        return dc.add(recon_loss(x_hat, x), kl)

    return fn, b.params(GENERATOR_GROUPS)


def _variance_unroll():
    rng = np.random.default_rng(8)
    T = 4
    p = RecurrentParams.init(6, rng, np.float64)
    for t in p.tensors():
        t.data += 0.1 * rng.standard_normal(t.shape)
    lv = _t(rng, 2, 8, 1, 3)  # c=8, T=4 -> block of 2*1*3 = 6 values

    def fn(lv, *params):
        return _weighted(variance_transform(lv, T, p))

    return fn, [lv, *p.tensors()]


def _gan_path():
    """decode -> discriminate -> generator loss, plus the MI head through the shared trunk.

    The MI target is a constant here: training stops its gradient, which finite
    differences on z could not reproduce.
    """
    b = _bundle("crvae")
    spec = b.spec
    z = _t(np.random.default_rng(9), 2, *spec.latent_shape)
    real = Tensor(_images(spec, 2, 10))
    u = Tensor(np.random.default_rng(12).standard_normal((2, *spec.latent_shape)))

    def fn(z, *_):
        x_hat = decode(b, z)
        fake_p = dc.logistic(disc_logit(b, disc_trunk(b, x_hat)))
        real_p = dc.logistic(disc_logit(b, disc_trunk(b, real)))
        _, gen_loss, _ = adversarial_losses(real_p, [fake_p])
        return dc.add(gen_loss, mi_loss(u, mi_from_trunk(b, disc_trunk(b, x_hat))))

    return fn, [z, *b.params(("generation_path", "decoder", "discriminator", "mi_head"))]


def _kl_path():
    rng = np.random.default_rng(11)
    mu, lv = _t(rng, 3, 4, 1, 2), _t(rng, 3, 4, 1, 2)

    def fn(mu, lv):
        return kl_weighted(GaussianParams(mu, lv), KLWeights((0.7, 0.1)), 2)[0]

    return fn, [mu, lv]


def registry() -> dict[str, Callable[[], tuple]]:
    """Name -> zero-arg builder of ``(fn, inputs)``; builders must run under float64."""
    reg = {}
    for name in _ops(np.random.default_rng(0)):
        reg[name] = (lambda n: lambda: _ops(np.random.default_rng(0))[n])(name)
    reg["kl_weighted"] = _kl_path
    for variant in ("vae", "cvae", "crvae"):
        reg[f"path_{variant}"] = (lambda v: lambda: _vae_path(v))(variant)
    reg["path_variance_unroll"] = _variance_unroll
    reg["path_gan"] = _gan_path
    return reg


CHECK_NAMES = tuple(registry())


def run_check(name: str, max_per_input: int | None = 24, seed: int = 0) -> CheckReport:
    reg = registry()
    if name not in reg:
        raise KeyError(f"unknown gradient check {name!r}; known: {', '.join(reg)}")
    start = time.perf_counter()
    with precision("float64"):
        fn, inputs = reg[name]()
        result = grad_check(fn, inputs, h=1e-5, max_per_input=max_per_input, seed=seed)
    return CheckReport(name, result, time.perf_counter() - start)


def run_all(max_per_input: int | None = 24) -> list[CheckReport]:
    return [run_check(n, max_per_input) for n in CHECK_NAMES]
