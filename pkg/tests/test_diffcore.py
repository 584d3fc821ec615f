import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import crvae.diffcore as dc
from crvae.checks import CHECK_NAMES, GRADCHECK_TOL, run_check
from crvae.diffcore import (
    AdamState, DimensionError, DomainError, NonFiniteError, Tape, TapeError, Tensor, adam_step,
    grad_check, kernels, no_grad, precision,
)


# --- independent oracles -------------------------------------------------------------------

def conv_loop(x, k, stride, pad):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for y in range(ho):
                for q in range(wo):
                    patch = xp[b, :, y * stride:y * stride + kh, q * stride:q * stride + kw]
                    out[b, o, y, q] = np.sum(patch * k[o])
    return out


def deconv_loop(x, k, stride, pad):
    """Scatter form of the transposed convolution (kernel [Cin, Cout, kh, kw])."""
    n, ci, h, w = x.shape
    _, co, kh, kw = k.shape
    full = np.zeros((n, co, (h - 1) * stride + kh, (w - 1) * stride + kw))
    for b in range(n):
        for c in range(ci):
            for y in range(h):
                for q in range(w):
                    full[b, :, y * stride:y * stride + kh, q * stride:q * stride + kw] += x[b, c, y, q] * k[c]
    return full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


# --- tape semantics ------------------------------------------------------------------------

def test_sum_grad_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        tape.backward(dc.sum(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_square_grad_is_2x():
    x = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
    with Tape() as tape:
        tape.backward(dc.sum(dc.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        tape.backward(dc.sum(dc.add(x, x)))
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_second_backward_raises_and_reset_allows_reuse():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = dc.sum(dc.square(x))
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)
    tape.reset()
    with tape:
        x.grad = None
        tape.backward(dc.sum(x))
    assert np.array_equal(x.grad, np.ones(3))


def test_non_scalar_loss_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with pytest.raises(TapeError):
            tape.backward(dc.square(x))


def test_backward_without_tape_raises():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(TapeError):
        dc.backward(dc.sum(x))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        with no_grad():
            dc.sum(dc.square(x))
    assert len(tape) == 0


def test_leaf_grads_accumulate_across_tapes():
    x = Tensor(np.ones(2), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            tape.backward(dc.sum(x))
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_default_precision_and_float64_mode():
    assert Tensor([1, 2]).dtype == np.float32
    with precision("float64"):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


# --- elementwise / reduction suite ---------------------------------------------------------

def test_log_domain_error():
    with pytest.raises(DomainError):
        dc.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        dc.log(Tensor(np.array([-1.0])))


def test_exp_overflow_is_an_error():
    with pytest.raises(NonFiniteError):
        dc.exp(Tensor(np.array([1000.0], dtype=np.float64)))


def test_mean_of_constant():
    assert dc.mean(Tensor(np.full((2, 3, 4), 2.5))).item() == 2.5


def test_leaky_relu_slope():
    y = dc.leaky_relu(Tensor(np.array([-2.0, 0.0, 3.0])))
    np.testing.assert_allclose(y.data, [-0.2, 0.0, 3.0])


def test_broadcast_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
        dc.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2 ** 31 - 1))
def test_split_concat_round_trip_bitwise(sizes, seed):
    x = np.random.default_rng(seed).standard_normal((2, sum(sizes), 3)).astype(np.float32)
    t = Tensor(x)
    parts, start = [], 0
    for s in sizes:
        parts.append(dc.slice_axis(t, 1, start, start + s))
        start += s
    back = dc.concat(parts, axis=1)
    assert back.data.tobytes() == x.tobytes()


@given(st.integers(0, 2 ** 31 - 1))
def test_reshape_round_trip_bitwise(seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4)).astype(np.float32)
    back = dc.reshape(dc.reshape(Tensor(x), (6, 4)), (2, 3, 4))
    assert back.data.tobytes() == x.tobytes()


@pytest.mark.parametrize("name", [n for n in CHECK_NAMES if not n.startswith("path_")])
def test_operator_gradcheck(name):
    rep = run_check(name, max_per_input=None)
    assert rep.result.checked > 0
    assert rep.result.max_rel_error < GRADCHECK_TOL, rep.line()


def test_gradcheck_on_random_2x3x4_unary_ops():
    rng = np.random.default_rng(5)
    with precision("float64"):
        for op in (dc.exp, dc.tanh, dc.logistic, dc.square, dc.leaky_relu):
            x = Tensor(rng.standard_normal((2, 3, 4)) + 0.05, requires_grad=True)
            w = Tensor(rng.standard_normal((2, 3, 4)))
            res = grad_check(lambda v: dc.sum(dc.mul(op(v), w)), [x])
            assert res.max_rel_error < 1e-4, op.__name__


def test_grad_check_reports_mismatch_instead_of_raising():
    def wrong(x):  # gradient cut on purpose
        return dc.sum(dc.mul(dc.stop_gradient(x), x))

    with precision("float64"):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        res = grad_check(wrong, [x])
    assert res.max_rel_error > 0.4 and res.input_index == 0


def test_grad_check_preconditions():
    with pytest.raises(ValueError):
        grad_check(dc.sum, [Tensor(np.ones(2, dtype=np.float32), requires_grad=True)])
    with precision("float64"):
        with pytest.raises(ValueError):
            grad_check(dc.sum, [Tensor(np.ones(2), requires_grad=True)], h=1e-2)


# --- convolution ---------------------------------------------------------------------------

def test_conv_scales_by_single_tap():
    y = dc.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
    assert np.array_equal(y.data, np.full((1, 1, 3, 3), 2.0))


def test_zero_kernel_gives_zero_output_and_input_grad():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 5, 5)), requires_grad=True)
    k = Tensor(np.zeros((4, 3, 3, 3)), requires_grad=True)
    with Tape() as tape:
        y = dc.conv2d(x, k, 1, 1)
        tape.backward(dc.sum(y))
    assert not y.data.any() and not x.grad.any()


@pytest.mark.parametrize("stride,pad,ksz", [(1, 0, 3), (2, 1, 4), (1, 1, 3), (2, 0, 2), (3, 2, 5)])
def test_conv_matches_loop_oracle(stride, pad, ksz):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 3, 8, 7))
    k = rng.standard_normal((4, 3, ksz, ksz))
    with precision("float64"):
        y = dc.conv2d(Tensor(x), Tensor(k), stride, pad)
    np.testing.assert_allclose(y.data, conv_loop(x, k, stride, pad), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,pad,ksz", [(1, 0, 3), (2, 1, 4), (1, 1, 3), (2, 0, 2)])
def test_deconv_matches_scatter_oracle(stride, pad, ksz):
    rng = np.random.default_rng(stride * 7 + pad)
    x = rng.standard_normal((2, 3, 4, 5))
    k = rng.standard_normal((3, 2, ksz, ksz))
    with precision("float64"):
        y = dc.deconv2d(Tensor(x), Tensor(k), stride, pad)
    assert y.shape[2] == (4 - 1) * stride - 2 * pad + ksz
    np.testing.assert_allclose(y.data, deconv_loop(x, k, stride, pad), rtol=1e-12, atol=1e-12)


def test_deconv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 1, 4, 4))
    with precision("float64"):
        y = dc.deconv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(y.data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
def test_deconv_forward_is_conv_input_gradient(stride, pad):
    rng = np.random.default_rng(3)
    with precision("float64"):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        k = Tensor(rng.standard_normal((4, 3, 4, 4)))
        out_shape = dc.conv2d(x, k, stride, pad).shape
        g = rng.standard_normal(out_shape)
        with Tape() as tape:
            tape.backward(dc.sum(dc.mul(dc.conv2d(x, k, stride, pad), Tensor(g))))
        # conv kernel [F,C,..] read as a deconv kernel [Cin=F, Cout=C, ..]
        y = dc.deconv2d(Tensor(g), k, stride, pad)
    assert y.shape == x.shape
    np.testing.assert_allclose(y.data, x.grad, rtol=1e-12, atol=1e-12)


def test_conv_shape_error_names_axes():
    with pytest.raises(DimensionError, match="channel"):
        dc.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(DimensionError):
        dc.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv_gradcheck_2x3x8x8():
    rng = np.random.default_rng(11)
    with precision("float64"):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        k = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 4, 6, 6)))
        res = grad_check(lambda x, k: dc.sum(dc.mul(dc.conv2d(x, k), w)), [x, k], h=1e-5)
    assert res.max_rel_error < 1e-4


def test_conv_relu_mean_composite_gradcheck():
    rng = np.random.default_rng(12)
    with precision("float64"):
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        res = grad_check(lambda x, k: dc.mean(dc.relu(dc.conv2d(x, k, 1, 1))), [x, k])
    assert res.max_rel_error < 1e-4


@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(3, 9), w=st.integers(3, 9),
       k=st.integers(1, 3), stride=st.integers(1, 3), pad=st.integers(0, 2),
       seed=st.integers(0, 2 ** 31 - 1), dbl=st.booleans())
def test_backends_agree_bitwise(n, c, h, w, k, stride, pad, seed, dbl):
    if kernels.compiled_im2col is None:
        pytest.skip("compiled kernels not built")
    dtype = np.float64 if dbl else np.float32
    x = np.random.default_rng(seed).standard_normal((n, c, h, w)).astype(dtype)
    a = kernels.python_im2col(x, k, k, stride, pad)
    b = kernels.compiled_im2col(x, k, k, stride, pad)
    assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    cols = np.random.default_rng(seed + 1).standard_normal(a.shape).astype(dtype)
    ca = kernels.python_col2im(cols, x.shape, k, k, stride, pad)
    cb = kernels.compiled_col2im(cols, x.shape, k, k, stride, pad)
    assert ca.tobytes() == cb.tobytes()


def test_use_backend_switches_and_validates():
    prev = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.im2col is kernels.python_im2col
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(prev)


# --- LSTM ----------------------------------------------------------------------------------

def test_lstm_zero_weights_c1():
    z = lambda *s: Tensor(np.zeros(s, dtype=np.float64))  # noqa: E731
    h, c = dc.lstm_cell(z(1, 2), z(1, 3), Tensor(np.ones((1, 3))), z(2, 12), z(3, 12), z(12))
    np.testing.assert_allclose(c.data, 0.5)
    np.testing.assert_allclose(h.data, 0.5 * math.tanh(0.5))
    assert abs(h.data[0, 0] - 0.23106) < 1e-5


def test_lstm_zero_weights_c0():
    z = lambda *s: Tensor(np.zeros(s, dtype=np.float64))  # noqa: E731
    h, c = dc.lstm_cell(z(1, 2), z(1, 3), z(1, 3), z(2, 12), z(3, 12), z(12))
    assert not h.data.any() and not c.data.any()


def test_lstm_matches_reference_gate_layout():
    rng = np.random.default_rng(4)
    B, I, H = 3, 2, 4
    x, h, c = rng.standard_normal((B, I)), rng.standard_normal((B, H)), rng.standard_normal((B, H))
    wx, wh, b = rng.standard_normal((I, 4 * H)), rng.standard_normal((H, 4 * H)), rng.standard_normal(4 * H)
    pre = x @ wx + h @ wh + b
    i, f, g, o = (pre[:, k * H:(k + 1) * H] for k in range(4))  # (i, f, g, o)
    c_ref = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
    h_ref = sigmoid(o) * np.tanh(c_ref)
    with precision("float64"):
        h2, c2 = dc.lstm_cell(*(Tensor(a) for a in (x, h, c, wx, wh, b)))
    np.testing.assert_allclose(c2.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(h2.data, h_ref, rtol=1e-12)


def test_lstm_shape_error():
    with pytest.raises(DimensionError):
        dc.lstm_cell(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))),
                     Tensor(np.ones((2, 8))), Tensor(np.ones((3, 12))), Tensor(np.ones(12)))


# --- Adam ----------------------------------------------------------------------------------

def adam_reference(w, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def test_adam_first_step_is_lr_sign():
    p = Tensor(np.zeros(4, dtype=np.float64))
    g = np.array([3.0, -0.01, 1e-3, -50.0])
    st_ = AdamState.for_params([p], lr=0.01)
    adam_step([p], [g], st_)
    np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-4)
    assert st_.t == 1


def test_adam_zero_grad_leaves_params():
    p = Tensor(np.array([1.0, 2.0]))
    st_ = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], st_)
    assert np.array_equal(p.data, [1.0, 2.0]) and st_.t == 1


def test_adam_on_w_squared_matches_reference_loop():
    p = Tensor(np.array([1.0]))
    st_ = AdamState.for_params([p], lr=0.1)
    ref = adam_reference(1.0, lambda w: 2 * w, 0.1, 3)
    prev = 1.0
    for k in range(3):
        adam_step([p], [2 * p.data.copy()], st_)
        assert abs(p.data[0]) < abs(prev)
        prev = p.data[0]
        assert p.data[0] == pytest.approx(ref[k], rel=1e-12)


def test_adam_nan_aborts_before_touching_params():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    st_ = AdamState.for_params([a, b])
    with pytest.raises(NonFiniteError, match="w2"):
        adam_step([a, b], [np.ones(2), np.array([np.nan, 0.0])], st_, names=["w1", "w2"])
    assert np.array_equal(a.data, [1.0, 1.0]) and st_.t == 0


def test_adam_rejects_nonpositive_lr():
    p = Tensor(np.ones(1))
    with pytest.raises(ValueError):
        adam_step([p], [np.ones(1)], AdamState.for_params([p], lr=0.0))
