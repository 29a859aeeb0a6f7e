import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scribble_sod.gradcheck import check_gradient
from scribble_sod.losses import lsc_loss
from scribble_sod.ops import (RunningStats, batch_norm, conv2d, conv_gap, global_avg_pool, relu, resize_bilinear,
                              sigmoid)
from scribble_sod.tensor import Parameter, ShapeError, Tensor, add, mul, no_grad, tsum


def conv_loop(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, c, y * stride + u, xx * stride + v] * w[o, c, u, v]
                    out[i, o, y, xx] = acc + (b[o] if b is not None else 0.0)
    return out


# -- conv2d -----------------------------------------------------------------
def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_constant_field_interior_and_corner():
    c = 1.7
    out = conv2d(Tensor(np.full((1, 1, 5, 5), c)), Tensor(np.ones((1, 1, 3, 3))), padding=1).data
    assert out[0, 0, 2, 2] == pytest.approx(9 * c, abs=1e-12)
    assert out[0, 0, 0, 0] == pytest.approx(4 * c, abs=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_loop_oracle(rng, stride, pad):
    x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(out, conv_loop(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv_wide_padding_gradient(rng):
    x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 1, 3, 3)), requires_grad=True)
    rep = check_gradient(lambda: tsum(mul(conv2d(x, w, None, 1, 3), 1.0)), [x, w])
    assert rep.passed, rep.line()


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_conv_linear_in_input_and_weight(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 2, 6, 6)), r.normal(size=(2, 2, 6, 6))
    w, v = r.normal(size=(3, 2, 3, 3)), r.normal(size=(3, 2, 3, 3))

    def c(inp, ker):
        return conv2d(Tensor(inp), Tensor(ker), None, 1, 1).data

    np.testing.assert_allclose(c(a * x + b * y, w), a * c(x, w) + b * c(y, w), atol=1e-10)
    np.testing.assert_allclose(c(x, a * w + b * v), a * c(x, w) + b * c(x, v), atol=1e-10)


def test_conv_errors_name_dimension():
    x = Tensor(np.zeros((1, 2, 5, 5)))
    with pytest.raises(ShapeError, match="channel"):
        conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="odd"):
        conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ShapeError, match="bias"):
        conv2d(x, Tensor(np.zeros((4, 2, 3, 3))), Tensor(np.zeros(3)))


def test_conv_gap_equals_composed_ops(rng):
    x = Tensor(rng.normal(size=(2, 3, 6, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    coef = rng.normal(size=(2, 4, 1, 1))
    fused = tsum(mul(conv_gap(x, w, b), coef))
    fused.backward()
    g_fused = [t.grad.copy() for t in (x, w, b)]
    for t in (x, w, b):
        t.grad = None
    composed = tsum(mul(global_avg_pool(conv2d(x, w, b, 1, 1)), coef))
    composed.backward()
    assert fused.item() == pytest.approx(composed.item(), abs=1e-12)
    for a, t in zip(g_fused, (x, w, b)):
        np.testing.assert_allclose(a, t.grad, atol=1e-12)


# -- batch norm -------------------------------------------------------------
def _ones_zeros(c):
    return Tensor(np.ones(c)), Tensor(np.zeros(c))


def test_bn_standardized_input_is_unchanged(rng):
    x = rng.normal(size=(4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = batch_norm(Tensor(x), *_ones_zeros(2), RunningStats.fresh(2), True, eps=1e-5).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)  # only eps separates them
    out = batch_norm(Tensor(x), *_ones_zeros(2), RunningStats.fresh(2), True, eps=1e-7).data
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_bn_constant_channels_give_zeros():
    x = np.ones((2, 3, 4, 4)) * np.array([1.0, -2.0, 5.0])[None, :, None, None]
    out = batch_norm(Tensor(x), *_ones_zeros(3), RunningStats.fresh(3), True).data
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_bn_matches_loop_oracle_and_updates_running_stats(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    gamma, beta = rng.uniform(0.5, 2, 3), rng.normal(size=3)
    run = RunningStats.fresh(3)
    out = batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), run, True, eps=1e-5, momentum=0.1).data
    for c in range(3):
        vals = [x[n, c, i, j] for n in range(2) for i in range(4) for j in range(4)]
        m = sum(vals) / len(vals)
        var = sum((v - m) ** 2 for v in vals) / len(vals)
        for n in range(2):
            for i in range(4):
                for j in range(4):
                    expect = gamma[c] * (x[n, c, i, j] - m) / np.sqrt(var + 1e-5) + beta[c]
                    assert abs(out[n, c, i, j] - expect) <= 1e-12
        assert run.mean[c] == pytest.approx(0.1 * m, abs=1e-12)
        assert run.var[c] == pytest.approx(0.9 + 0.1 * var * len(vals) / (len(vals) - 1), abs=1e-12)


def test_bn_eval_uses_frozen_running_stats(rng):
    x = rng.normal(size=(2, 2, 3, 3))
    run = RunningStats(np.array([0.5, -1.0]), np.array([4.0, 0.25]))
    out = batch_norm(Tensor(x), *_ones_zeros(2), run, False, eps=1e-5).data
    expect = (x - run.mean[None, :, None, None]) / np.sqrt(run.var[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, expect, atol=1e-12)
    assert np.array_equal(run.mean, [0.5, -1.0])


def test_bn_channel_mismatch():
    with pytest.raises(ShapeError, match="channel"):
        batch_norm(Tensor(np.zeros((1, 3, 2, 2))), *_ones_zeros(2), RunningStats.fresh(2), True)


# -- activations --------------------------------------------------------------
def test_activation_values():
    assert sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    np.testing.assert_array_equal(relu(Tensor(np.array([-3.2, 3.2]))).data, [0.0, 3.2])


def test_relu_subgradient_zero_at_origin():
    x = Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
    tsum(relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sigmoid_gradient_tight(rng):
    # one point per closure keeps finite-difference round-off well below 1e-8
    for v in rng.uniform(-3, 3, size=20):
        x = Tensor(np.array([v]), requires_grad=True)
        rep = check_gradient(lambda: tsum(sigmoid(x)), [x], tol=1e-8)
        assert rep.passed, rep.line()


def test_sigmoid_stays_finite_in_open_interval():
    y = sigmoid(Tensor(np.array([-800.0, -30.0, 30.0, 800.0]))).data
    assert np.all(np.isfinite(y)) and np.all(y >= 0) and np.all(y <= 1)


# -- resize -----------------------------------------------------------------
def test_resize_same_size_is_identity(rng):
    x = rng.normal(size=(2, 3, 5, 7))
    assert np.array_equal(resize_bilinear(Tensor(x), 5, 7).data, x)


def test_resize_constant_and_half_pixel_value():
    out = resize_bilinear(Tensor(np.full((1, 1, 3, 4), 2.5)), 7, 2).data
    np.testing.assert_allclose(out, 2.5, atol=1e-15)
    one = resize_bilinear(Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]])), 1, 1).data
    assert one[0, 0, 0, 0] == pytest.approx(1.5, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), oh=st.integers(1, 12), ow=st.integers(1, 12),
       seed=st.integers(0, 2**16))
def test_resize_preserves_range(h, w, oh, ow, seed):
    x = np.random.default_rng(seed).normal(size=(1, 2, h, w))
    out = resize_bilinear(Tensor(x), oh, ow).data
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


# -- pooling ----------------------------------------------------------------
def test_gap_values():
    assert global_avg_pool(Tensor(np.full((1, 2, 3, 3), 4.0))).data.ravel().tolist() == [4.0, 4.0]
    assert global_avg_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 2.5


def test_gap_gradient_tight(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    coef = rng.normal(size=(2, 3, 1, 1))
    rep = check_gradient(lambda: tsum(mul(global_avg_pool(x), coef)), [x], tol=1e-8)
    assert rep.passed, rep.line()


# -- gradient checker ----------------------------------------------------------
def test_gradcheck_linear_closure():
    x = Tensor(np.random.default_rng(0).normal(size=10), requires_grad=True)
    rep = check_gradient(lambda: tsum(x), [x])
    assert rep.max_rel_error < 1e-8
    np.testing.assert_array_equal(x.grad, np.ones(10))


def test_gradcheck_lsc_small_map(rng):
    p = Tensor(rng.uniform(0.1, 0.9, size=(4, 4)), requires_grad=True)
    img = rng.uniform(size=(3, 4, 4))
    rep = check_gradient(lambda: lsc_loss(p, img), [p])
    assert rep.passed and rep.max_rel_error <= 1e-4, rep.line()


def test_gradcheck_rejects_bad_inputs():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        check_gradient(lambda: mul(x, 2.0), [x])
    with pytest.raises(ValueError):
        check_gradient(lambda: tsum(x), [x], h=1e-3)


def test_gradcheck_detects_wrong_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def broken():
        return Tensor.from_op(np.array((x.data ** 2).sum()), (x,), lambda g: (g * x.data,))

    assert not check_gradient(broken, [x]).passed


# -- autodiff engine -----------------------------------------------------------
def test_gradient_accumulates_over_shared_inputs():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = add(mul(x, x), x)
    y.backward(np.ones(1))
    assert x.grad[0] == 7.0


def test_no_grad_builds_no_graph():
    x = Parameter(np.ones(2))
    with no_grad():
        y = mul(x, 2.0)
    assert not y.requires_grad


def test_forward_is_bit_deterministic(rng):
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    a = resize_bilinear(relu(conv2d(Tensor(x), Tensor(w), None, 2, 1)), 9, 9).data
    b = resize_bilinear(relu(conv2d(Tensor(x), Tensor(w), None, 2, 1)), 9, 9).data
    assert a.tobytes() == b.tobytes()


def test_values_stay_finite(rng):
    x = Tensor(rng.normal(size=(1, 2, 6, 6)) * 50, requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    out = sigmoid(conv2d(x, w, None, 1, 1))
    tsum(out).backward()
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(x.grad)) and np.all(np.isfinite(w.grad))
