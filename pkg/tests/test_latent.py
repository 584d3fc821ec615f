import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import crvae.diffcore as dc
from crvae.diffcore import DimensionError, Tape, Tensor, precision
from crvae.latent import (
    LOGVAR_MIN, ConfigError, GaussianParams, KLWeights, RecurrentParams, generation_transform,
    kl_elementwise, kl_weighted, mean_path, recurrent_param_count, reparam_sample, slice_channels,
    variance_transform,
)
from crvae.networks import dense_transform_count


def kl_monte_carlo(mu, var, n, seed):
    """E_q[log q(z) - log p(z)] for q = N(mu, var), p = N(0, 1), by sampling."""
    z = mu + np.sqrt(var) * np.random.default_rng(seed).standard_normal(n)
    log_q = -0.5 * np.log(2 * np.pi * var) - (z - mu) ** 2 / (2 * var)
    log_p = -0.5 * np.log(2 * np.pi) - z ** 2 / 2
    return float(np.mean(log_q - log_p))


def kl_direct(mu, lv):
    """Unsliced total KL per sample, averaged over the batch (float64)."""
    return float(np.sum(0.5 * (mu ** 2 + np.exp(lv) - lv - 1)) / mu.shape[0])


# --- slicing -------------------------------------------------------------------------------

def test_slice_32_channels_into_8_blocks():
    z = Tensor(np.zeros((2, 32, 4, 4)))
    blocks = slice_channels(z, 8)
    assert blocks.T == 8 and all(b.shape == (2, 4, 4, 4) for b in blocks.blocks)


def test_slice_preserves_channel_order():
    z = np.arange(2 * 6 * 2 * 2, dtype=np.float32).reshape(2, 6, 2, 2)
    blocks = slice_channels(Tensor(z), 3).blocks
    for t, b in enumerate(blocks):
        assert np.array_equal(b.data, z[:, 2 * t:2 * t + 2])


def test_single_block_is_z():
    z = Tensor(np.random.default_rng(0).standard_normal((1, 4, 2, 2)))
    assert slice_channels(z, 1).blocks[0] is z


@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 2 ** 31 - 1))
def test_slice_concat_round_trip(T, seed):
    z = np.random.default_rng(seed).standard_normal((2, 8, 2, 3)).astype(np.float32)
    assert slice_channels(Tensor(z), T).concat().data.tobytes() == z.tobytes()


def test_slice_error_names_c_and_t():
    with pytest.raises(ConfigError, match=r"T=3.*c=8"):
        slice_channels(Tensor(np.zeros((1, 8, 1, 1))), 3)


# --- recurrent transforms ------------------------------------------------------------------

@pytest.mark.parametrize("fn", [variance_transform, generation_transform])
def test_zero_weights_give_projection_bias(fn):
    p = RecurrentParams.zeros(4, proj_bias=0.375)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 8, 1, 2)).astype(np.float32))
    out = fn(x, 4, p)  # blocks of 2 channels * 1 * 2 = 4 values
    assert out.shape == x.shape
    assert np.all(out.data == np.float32(0.375))


@pytest.mark.parametrize("c,T,w", [(8, 2, 1), (8, 4, 2), (32, 8, 4), (6, 3, 3)])
def test_transform_shape_contract(c, T, w):
    p = RecurrentParams.init(c // T * w * w, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((2, c, w, w)).astype(np.float32))
    assert variance_transform(x, T, p).shape == x.shape


def test_block_size_mismatch_is_a_dimension_error():
    p = RecurrentParams.init(5, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        generation_transform(Tensor(np.zeros((1, 8, 1, 1), dtype=np.float32)), 2, p)


@pytest.mark.parametrize("fn", [variance_transform, generation_transform])
@given(seed=st.integers(0, 2 ** 31 - 1), t=st.integers(1, 3))
def test_causality_bitwise(fn, seed, t):
    rng = np.random.default_rng(seed)
    T = 4
    p = RecurrentParams.init(3, rng)
    z = rng.standard_normal((2, 4, 1, 3)).astype(np.float32)
    z2 = z.copy()
    z2[:, t:] += rng.standard_normal(z2[:, t:].shape).astype(np.float32)  # blocks t+1..T
    u, u2 = fn(Tensor(z), T, p).data, fn(Tensor(z2), T, p).data
    assert u[:, :t].tobytes() == u2[:, :t].tobytes()
    assert not np.array_equal(u[:, t:], u2[:, t:])


def test_forget_bias_initialized_to_one():
    p = RecurrentParams.init(3, np.random.default_rng(0))
    assert np.array_equal(p.b.data, np.r_[np.zeros(3), np.ones(3), np.zeros(6)])


def test_mean_path_zero_kernel_constant_bias():
    f = Tensor(np.random.default_rng(0).standard_normal((2, 5, 4, 4)).astype(np.float32))
    mu = mean_path(f, Tensor(np.zeros((8, 5, 1, 1), np.float32)), Tensor(np.full(8, -0.5, np.float32)))
    assert mu.shape == (2, 8, 4, 4) and np.all(mu.data == -0.5)


def test_mean_path_gradcheck():
    rng = np.random.default_rng(2)
    with precision("float64"):
        f = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        k = Tensor(rng.standard_normal((4, 3, 1, 1)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 4, 2, 2)))
        res = dc.grad_check(lambda f, k, b: dc.sum(dc.mul(mean_path(f, k, b), w)), [f, k, b])
    assert res.max_rel_error < 1e-4


# --- reparametrization ---------------------------------------------------------------------

def test_zero_noise_returns_mu():
    mu = Tensor(np.random.default_rng(0).standard_normal((2, 3)).astype(np.float32))
    lv = Tensor(np.ones((2, 3), np.float32))
    z = reparam_sample(GaussianParams(mu, lv), np.zeros((2, 3), np.float32))
    assert np.array_equal(z.data, mu.data)


def test_clamp_floor_limit():
    mu = Tensor(np.zeros(5, np.float64))
    noise = np.random.default_rng(0).standard_normal(5)
    z = reparam_sample(GaussianParams(mu, Tensor(np.full(5, -1e4))), noise)
    assert np.all(np.abs(z.data) <= np.exp(LOGVAR_MIN / 2) * np.abs(noise) + 1e-15)


def test_reparam_monte_carlo_mean():
    n = 10 ** 5
    mu = np.array([0.3, -1.2, 2.0])
    lv = np.array([0.0, -1.0, 1.0])
    noise = np.random.default_rng(7).standard_normal((n, 3))
    with precision("float64"):
        z = reparam_sample(GaussianParams(Tensor(np.broadcast_to(mu, (n, 3)).copy()),
                                          Tensor(np.broadcast_to(lv, (n, 3)).copy())), noise).data
    sigma = np.exp(0.5 * lv)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sigma / np.sqrt(n))
    np.testing.assert_allclose(z.std(axis=0), sigma, rtol=0.02)


def test_reparam_noise_shape_mismatch():
    p = GaussianParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        reparam_sample(p, np.zeros((3, 2)))


def test_reparam_gradients():
    with precision("float64"):
        mu = Tensor(np.array([0.5, -0.2]), requires_grad=True)
        lv = Tensor(np.array([0.3, -0.7]), requires_grad=True)
        eps = np.array([1.5, -0.4])
        with Tape() as tape:
            tape.backward(dc.sum(reparam_sample(GaussianParams(mu, lv), eps)))
    assert np.array_equal(mu.grad, [1.0, 1.0])
    np.testing.assert_allclose(lv.grad, 0.5 * np.exp(0.5 * lv.data) * eps)


# --- KL ------------------------------------------------------------------------------------

def test_kl_zero_at_prior():
    z = Tensor(np.zeros((2, 8, 1, 1)))
    total, per_step = kl_weighted(GaussianParams(z, z), KLWeights.uniform(1.0, 4), 4)
    assert total.item() == 0.0 and not per_step.data.any()


def test_kl_single_element_mu_one():
    kl = kl_elementwise(GaussianParams(Tensor(np.array([1.0])), Tensor(np.array([0.0]))))
    assert kl.item() == 0.5


def test_kl_matches_monte_carlo_one_pair():
    mu, var = 0.5, 0.25
    closed = kl_elementwise(GaussianParams(Tensor(np.array([mu])), Tensor(np.array([np.log(var)])))).item()
    mc = kl_monte_carlo(mu, var, 10 ** 6, seed=0)
    assert abs(closed - mc) / closed < 0.01


@given(st.integers(0, 2 ** 31 - 1))
def test_all_ones_weights_reduce_to_direct_kl(seed):
    rng = np.random.default_rng(seed)
    mu, lv = rng.standard_normal((3, 8, 2, 2)), rng.uniform(-3, 3, (3, 8, 2, 2))
    with precision("float64"):
        total, per_step = kl_weighted(GaussianParams(Tensor(mu), Tensor(lv)), KLWeights.uniform(1.0, 4), 4)
    assert total.item() == pytest.approx(kl_direct(mu, lv), rel=1e-6)
    assert per_step.shape == (4,)
    assert float(per_step.data.sum()) == pytest.approx(total.item(), rel=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_kl_linear_in_weights(seed):
    rng = np.random.default_rng(seed)
    p = GaussianParams(Tensor(rng.standard_normal((2, 4, 1, 1))), Tensor(rng.standard_normal((2, 4, 1, 1))))
    w1, w2 = KLWeights(tuple(rng.uniform(0, 2, 4))), KLWeights(tuple(rng.uniform(0, 2, 4)))
    with precision("float64"):
        a = kl_weighted(p, w1, 4)[0].item()
        b = kl_weighted(p, w2, 4)[0].item()
        ab = kl_weighted(p, w1 + w2, 4)[0].item()
    assert ab == pytest.approx(a + b, rel=1e-6)


def test_per_step_sums_block_and_averages_batch():
    mu = np.zeros((2, 4, 1, 1))
    mu[0, 2] = 2.0  # block 2 (T=2) of sample 0 only: KL 2.0
    p = GaussianParams(Tensor(mu), Tensor(np.zeros_like(mu)))
    with precision("float64"):
        _, per_step = kl_weighted(p, KLWeights.uniform(1.0, 2), 2)
    np.testing.assert_allclose(per_step.data, [0.0, 1.0])


def test_kl_weights_validation_and_constructors():
    with pytest.raises(ConfigError):
        KLWeights((1.0, -0.1))
    with pytest.raises(ConfigError):
        KLWeights((1.0, float("nan")))
    assert KLWeights.head_tail(3e-4, 2e-4, 8).weights == (3e-4,) * 3 + (2e-4,) * 5
    assert KLWeights.from_alphas((0.0, 0.0)).weights == (1.0, 1.0)
    p = GaussianParams(Tensor(np.zeros((1, 4, 1, 1))), Tensor(np.zeros((1, 4, 1, 1))))
    with pytest.raises(ConfigError):
        kl_weighted(p, KLWeights.uniform(1.0, 3), 4)


def test_logvar_clamped_in_from_raw():
    g = GaussianParams.from_raw(Tensor(np.zeros(3)), Tensor(np.array([-50.0, 0.0, 50.0])))
    assert np.array_equal(g.logvar.data, [-10.0, 0.0, 10.0])


# --- parameter counts ----------------------------------------------------------------------

def test_recurrent_count_formula():
    p = RecurrentParams.init(6, np.random.default_rng(0))
    assert sum(t.size for t in p.tensors()) == recurrent_param_count(6)


def test_recurrent_count_strictly_decreases_with_t():
    d = 32 * 4 * 4
    counts = [recurrent_param_count(d // T) for T in (1, 2, 4, 8, 16, 32)]
    assert all(a > b for a, b in zip(counts, counts[1:]))


def test_recurrent_beats_dense_from_t4():
    # 9(d/T)^2 + 5d/T against d^2 + d: the LSTM with square projection is smaller
    # than one dense d -> d map only once T >= 4
    d = 32 * 4 * 4
    dense = dense_transform_count(d)
    for T in (4, 8, 16, 32):
        assert recurrent_param_count(d // T) < dense
    for T in (2,):
        assert recurrent_param_count(d // T) > dense
