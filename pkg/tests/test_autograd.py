import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsdigraph import autograd as ag
from tsdigraph.autograd import Tensor
from tsdigraph.checks import PRIMITIVES
from tsdigraph.nn import (Adam, AdamState, BatchNormState, adam_step, dropout, finite_diff_check,
                          norm_dropout)


def conv_oracle(x, kernel, bias, dilation, causal):
    """Direct summation over taps, channels and time."""
    n, cin = x.shape
    cout, _, f = kernel.shape
    span = dilation * (f - 1)
    xp = np.vstack([np.zeros((span, cin)), x]) if causal else x
    n_out = xp.shape[0] - span
    out = np.zeros((n_out, cout))
    for t in range(n_out):
        for o in range(cout):
            s = bias[o]
            for c in range(cin):
                for i in range(f):
                    s += kernel[o, c, i] * xp[t + dilation * i, c]
            out[t, o] = s
    return out


# -- conv1d -----------------------------------------------------------------

def test_conv_identity_kernel():
    out = ag.conv1d(np.array([[1.0], [2.0], [3.0]]), np.ones((1, 1, 1)))
    np.testing.assert_array_equal(out.data[:, 0], [1, 2, 3])


def test_conv_causal_two_taps():
    out = ag.conv1d(np.array([[1.0], [2.0], [3.0]]), np.ones((1, 1, 2)), causal=True)
    np.testing.assert_array_equal(out.data[:, 0], [1, 3, 5])


def test_conv_causal_keeps_length_with_dilation():
    x = np.random.default_rng(0).normal(size=(128, 1))
    out = ag.conv1d(x, np.ones((2, 1, 7)), dilation=4, causal=True)
    assert out.shape == (128, 2)


def test_conv_valid_length():
    x = np.zeros((20, 3))
    out = ag.conv1d(x, np.ones((2, 3, 4)), dilation=2, causal=False)
    assert out.shape == (20 - 6, 2)


@pytest.mark.parametrize("causal", [True, False])
@pytest.mark.parametrize("dilation", [1, 2, 3])
def test_conv_matches_direct_summation(causal, dilation):
    rng = np.random.default_rng(dilation)
    x = rng.normal(size=(17, 3))
    k = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=2)
    out = ag.conv1d(x, k, b, dilation, causal)
    np.testing.assert_allclose(out.data, conv_oracle(x, k, b, dilation, causal), atol=1e-12)


def test_conv_batched_equals_per_series():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 10, 2))
    k = rng.normal(size=(4, 2, 3))
    out = ag.conv1d(x, k, dilation=2).data
    for i in range(3):
        np.testing.assert_allclose(out[i], ag.conv1d(x[i], k, dilation=2).data, atol=1e-13)


def test_conv_errors():
    with pytest.raises(ValueError):
        ag.conv1d(np.zeros((0, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        ag.conv1d(np.zeros((5, 2)), np.ones((1, 3, 1)))
    with pytest.raises(ValueError):
        ag.conv1d(np.zeros((3, 1)), np.ones((1, 1, 3)), dilation=2, causal=False)


def test_conv_causality_exact():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(40, 2))
    k = rng.normal(size=(3, 2, 5))
    base = ag.conv1d(x, k, dilation=3).data
    x2 = x.copy()
    x2[25:] += rng.normal(size=(15, 2))
    pert = ag.conv1d(x2, k, dilation=3).data
    assert np.array_equal(base[:25], pert[:25])
    assert not np.array_equal(base[25:], pert[25:])


# -- elementwise and shape ops ----------------------------------------------

def test_silu_values():
    out = ag.silu(np.array([0.0, 1.0, 50.0])).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-15)
    assert out[2] == pytest.approx(50.0, rel=1e-12)


def test_silu_grad_at_zero():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    ag.silu(x).sum().backward()
    np.testing.assert_allclose(x.grad, 0.5)


def test_sigmoid_extremes_finite():
    s = ag.sigmoid(np.array([-800.0, 0.0, 800.0])).data
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_pool_avg_and_max():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    np.testing.assert_array_equal(ag.pool_time(x, 2, "avg").data[:, 0], [1.5, 3.5])
    y = np.array([[1.0], [5.0], [2.0], [2.0]])
    np.testing.assert_array_equal(ag.pool_time(y, 2, "max").data[:, 0], [5, 2])
    np.testing.assert_array_equal(ag.pool_time(x, 1).data, x)


def test_pool_requires_divisor():
    with pytest.raises(ValueError):
        ag.pool_time(np.zeros((5, 1)), 2)


def test_upsample():
    x = np.array([[1.0], [2.0]])
    np.testing.assert_array_equal(ag.upsample_time(x, 2).data[:, 0], [1, 1, 2, 2])
    np.testing.assert_array_equal(ag.upsample_time(x, 1).data, x)
    with pytest.raises(ValueError):
        ag.upsample_time(x, 0)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)),
              elements=st.floats(-1e3, 1e3)), st.integers(1, 4))
def test_pool_inverts_upsample(x, s):
    back = ag.pool_time(ag.upsample_time(x, s), s, "avg").data
    np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12)


def test_mse():
    assert ag.mse_loss(np.ones(3), np.ones(3)).item() == 0.0
    assert ag.mse_loss(np.ones(2), np.zeros(2)).item() == 1.0
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    direct = sum((a[i, j] - b[i, j]) ** 2 for i in range(4) for j in range(5)) / 20
    assert abs(ag.mse_loss(a, b).item() - direct) <= 1e-12
    with pytest.raises(ValueError):
        ag.mse_loss(np.ones(2), np.ones(3))


def test_cross_entropy_uniform_logits():
    loss = ag.cross_entropy(np.zeros((4, 2)), [0, 1, 1, 0])
    assert loss.item() == pytest.approx(np.log(2))


# -- backward ---------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 2.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [4, 4, 4])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ag.backward(x * 2.0)


def test_shared_subexpression_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_deep_chain_no_recursion_limit():
    x = Tensor(np.ones(2), requires_grad=True)
    h = x
    for _ in range(5000):
        h = h + 1.0
    h.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1])


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 4)))
    err = finite_diff_check(lambda t: PRIMITIVES[name](t, c), x, h=1e-6)
    assert err <= 1e-5


def test_conv_and_bn_gradients():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(2, 9, 3)), requires_grad=True)
    k = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    t = rng.normal(size=(2, 9, 2))
    g = Tensor(rng.normal(size=2), requires_grad=True)
    be = Tensor(rng.normal(size=2), requires_grad=True)

    def f(_):
        out = ag.conv1d(x, k, b, dilation=2)
        out, _, _ = ag.batch_norm_train(out, g, be)
        return ag.mse_loss(out, t)

    for p in (x, k, b, g, be):
        assert finite_diff_check(f, p) <= 1e-5


def test_gradcheck_quadratic_and_errors():
    x = Tensor(np.random.default_rng(0).normal(size=5), requires_grad=True)
    assert finite_diff_check(lambda t: (t * t).sum() * 0.5, x) <= 1e-9
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: t.sum(), x, h=0.0)


def test_gradcheck_flags_maxpool_tie():
    x = Tensor(np.array([[1.0], [1.0]]), requires_grad=True)
    res = finite_diff_check(lambda t: ag.pool_time(t, 2, "max").sum(), x, details=True)
    assert res.nonsmooth == [0, 1]
    assert res.checked == 0


def test_float32_stays_float32():
    x = Tensor(np.ones((2, 5, 1), dtype=np.float32))
    k = Tensor(np.ones((1, 1, 2), dtype=np.float32), requires_grad=True)
    out = ag.silu(ag.conv1d(x, k, Tensor(np.zeros(1, np.float32), requires_grad=True)))
    assert out.data.dtype == np.float32
    out.sum().backward()
    assert k.grad.dtype == np.float32


# -- norm / dropout / adam --------------------------------------------------

def test_norm_dropout_eval_identity():
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = norm_dropout(x, "eval", BatchNormState.fresh(3), 0.0)
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), rtol=1e-15)


def test_norm_constant_channel_is_zero_mean():
    x = np.full((6, 2), 3.0)
    out = norm_dropout(x, "train", BatchNormState.fresh(2), 0.0)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_norm_updates_running_stats():
    st_ = BatchNormState.fresh(1)
    x = np.array([[1.0], [3.0]])
    norm_dropout(x, "train", st_, 0.0)
    assert st_.running_mean[0] == pytest.approx(0.2)
    assert st_.running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)


def test_dropout_density():
    rng = np.random.default_rng(11)
    out = dropout(np.ones(100_000), 0.5, True, rng).data
    kept = np.mean(out != 0)
    assert abs(kept - 0.5) <= 0.01
    np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])


def test_dropout_rate_validation():
    with pytest.raises(ValueError):
        norm_dropout(np.ones((2, 1)), "train", BatchNormState.fresh(1), 1.0)


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState())
    np.testing.assert_array_equal(p, [1.0, -2.0])
    s = AdamState()
    s.m, s.v = [np.array([0.5])], [np.array([1.0])]
    adam_step([np.zeros(1)], [np.zeros(1)], s)
    assert s.m[0][0] == pytest.approx(0.45)
    assert s.v[0][0] == pytest.approx(0.999)
    assert s.step == 1


def test_adam_first_step_displacement():
    g = np.array([0.3, -2.0, 1e-3])
    p = np.zeros(3)
    adam_step([p], [g], AdamState(lr=0.01))
    np.testing.assert_allclose(p, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_constant_gradient_step_tends_to_lr():
    p = np.zeros(1)
    s = AdamState(lr=0.05)
    for _ in range(2000):
        prev = p.copy()
        adam_step([p], [np.array([4.0])], s)
    assert abs(prev[0] - p[0]) == pytest.approx(0.05, rel=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_class_uses_grads():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    (w * w).sum().backward()
    opt.step()
    assert w.data[0] == pytest.approx(0.9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 16))
def test_conv_causal_property(f, dilation, ch, seed):
    rng = np.random.default_rng(seed)
    n = 12
    x = rng.normal(size=(n, ch))
    k = rng.normal(size=(2, ch, f))
    t0 = int(rng.integers(0, n))
    y = x.copy()
    y[t0:] = rng.normal(size=(n - t0, ch))
    a, b = ag.conv1d(x, k, dilation=dilation).data, ag.conv1d(y, k, dilation=dilation).data
    assert a.shape[0] == n
    assert np.array_equal(a[:t0], b[:t0])
