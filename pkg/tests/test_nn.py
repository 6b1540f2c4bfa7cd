import itertools

import numpy as np
import pytest

from conftest import naive_conv2d
from tirseg import nn
from tirseg.nn import functional as F
from tirseg.nn.layers import ASPP, Conv2d, GlobalPoolBranch, Param, ResBlock


def test_identity_conv():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out, _ = F.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_dilated_output_size():
    x = np.zeros((1, 1, 7, 7))
    out, _ = F.conv2d(x, np.zeros((1, 1, 3, 3)), None, stride=1, padding=2, dilation=2)
    assert out.shape == (1, 1, 7, 7)


@pytest.mark.parametrize("stride, dilation, padding", list(itertools.product([1, 2], [1, 2, 4], [0, 1, 2])))
def test_conv_matches_naive(stride, dilation, padding, rng):
    x = rng.normal(size=(2, 3, 11, 10))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out, _ = F.conv2d(x, w, b, stride, padding, dilation)
    np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, padding, dilation), rtol=0, atol=1e-10)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        F.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)), None)
    with pytest.raises(ValueError):
        F.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), None, dilation=2)


def test_elementwise_examples():
    out, _ = F.relu(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))
    np.testing.assert_array_equal(out.ravel(), [0, 0, 2])
    up, _ = F.upsample_nearest(np.full((1, 1, 1, 1), 5.0), 2)
    np.testing.assert_array_equal(up, np.full((1, 1, 2, 2), 5.0))
    pooled, _ = F.avg_pool_global(np.full((1, 2, 3, 4), 0.7))
    np.testing.assert_allclose(pooled, 0.7, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        F.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
    with pytest.raises(ValueError):
        F.concat_channels([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2))])


def test_softmax2_examples():
    def sm(zb, zt):
        p_t, p_b = F.softmax2(np.array([zb, zt], dtype=float).reshape(1, 2, 1, 1))
        return p_t.item(), p_b.item()

    assert sm(0, 0) == (0.5, 0.5)
    p_t, p_b = sm(0, np.log(3))
    assert abs(p_t - 0.75) < 1e-15 and abs(p_b - 0.25) < 1e-15
    assert sm(0, 1000) == (1.0, 0.0)
    assert sm(1000, 0) == (0.0, 1.0)
    with pytest.raises(ValueError):
        F.softmax2(np.zeros((1, 3, 1, 1)))


def test_softmax2_sums_to_one(rng):
    z = rng.normal(size=(3, 2, 8, 8)) * 50
    p_t, p_b = F.softmax2(z)
    assert np.abs(p_t + p_b - 1).max() < 1e-6
    assert np.all(p_t >= 0) and np.all(p_b >= 0)


def test_bce_examples():
    y = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert F.bce_loss(y, 1 - y, y) <= 1e-6
    half = np.full(y.shape, 0.5)
    assert abs(F.bce_loss(half, half, y) - np.log(2)) < 1e-6
    # only the target-pixel term scales with pos_weight
    p_t = np.array([[[0.3, 0.2], [0.6, 0.9]]])
    bg_part = F.bce_loss(p_t, 1 - p_t, y, 1e-300)
    one = F.bce_loss(p_t, 1 - p_t, y, 1.0)
    two = F.bce_loss(p_t, 1 - p_t, y, 2.0)
    assert abs((two - bg_part) - 2 * (one - bg_part)) < 1e-12
    with pytest.raises(ValueError):
        F.bce_loss(p_t, 1 - p_t, np.zeros((1, 3, 3)))


def test_fused_softmax_bce_gradient_closed_form(rng):
    z = rng.normal(size=(2, 2, 4, 4))
    y = (rng.random((2, 4, 4)) > 0.7).astype(float)
    _, g = F.softmax_bce(z, y, 1.0)
    p_t, _ = F.softmax2(z)
    expected = (p_t - y) / y.size
    assert np.abs(g[:, 1] - expected).max() < 1e-10
    assert np.abs(g[:, 0] + expected).max() < 1e-10


def test_grad_check_linear():
    a = np.array([1.5, -2.0, 0.25])
    err = nn.grad_check(lambda x: (float(a @ x), a.copy()), np.array([0.3, 0.1, -0.7]))
    assert err < 1e-10


# --- per-layer finite-difference checks ---------------------------------------

def _layer_check(layer, x, rng):
    """Check input and parameter gradients of loss = sum(out * r)."""
    out = layer.forward(x)
    r = rng.normal(size=out.shape)

    def f_input(z):
        for _, p in layer.named_params():
            p.zero_grad()
        o = layer.forward(z)
        return float((o * r).sum()), layer.backward(r)

    sig = lambda: nn.relu_signature(layer)  # noqa: E731
    reports = [nn.grad_check_report(f_input, x.copy(), signature=sig)]
    for _, p in layer.named_params():
        def f_param(v, p=p):
            p.value[...] = v
            for _, q in layer.named_params():
                q.zero_grad()
            o = layer.forward(x)
            layer.backward(r)
            return float((o * r).sum()), p.grad.copy()
        reports.append(nn.grad_check_report(f_param, p.value.copy(), signature=sig))
    checked = sum(r["checked"] for r in reports)
    skipped = sum(len(r["skipped"]) for r in reports)
    assert checked >= 0.5 * (checked + skipped), (checked, skipped)
    return max(r["max_error"] for r in reports)


SHAPES = [(1, 2, 5, 5), (2, 3, 6, 4), (1, 1, 7, 7), (2, 2, 4, 8), (1, 4, 6, 6)]


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("kind", ["conv", "conv_s2", "conv_d2", "resblock", "resblock_proj", "pool", "aspp"])
def test_layer_gradients(kind, shape, rng):
    c = shape[1]
    layers = {
        "conv": lambda: Conv2d(c, 3, 3, rng=rng),
        "conv_s2": lambda: Conv2d(c, 2, 3, stride=2, padding=1, rng=rng),
        "conv_d2": lambda: Conv2d(c, 2, 3, dilation=2, rng=rng),
        "resblock": lambda: ResBlock(c, c, rng),
        "resblock_proj": lambda: ResBlock(c, c + 1, rng),
        "pool": lambda: GlobalPoolBranch(c, 2, rng),
        "aspp": lambda: ASPP(c, 2, [1, 2], rng),
    }
    layer = layers[kind]()
    for _, p in layer.named_params():
        p.value += rng.normal(scale=0.1, size=p.shape)  # nonzero biases keep ReLUs off their kinks
    x = rng.normal(size=shape)
    assert _layer_check(layer, x, rng) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
def test_structural_op_gradients(shape, rng):
    x = rng.normal(size=shape)
    y = rng.normal(size=shape)
    n, c, h, w = shape

    up, f = F.upsample_nearest(x, 2)
    r = rng.normal(size=up.shape)
    err = nn.grad_check(lambda z: (float((F.upsample_nearest(z, 2)[0] * r).sum()),
                                   F.upsample_nearest_backward(r, 2)), x.copy())
    assert err < 1e-4

    r2 = rng.normal(size=(n, 2 * c, h, w))
    def f_cat(z):
        out, sizes = F.concat_channels([z, y])
        return float((out * r2).sum()), F.concat_channels_backward(r2, sizes)[0]
    assert nn.grad_check(f_cat, x.copy()) < 1e-4

    r3 = rng.normal(size=shape)
    assert nn.grad_check(lambda z: (float((F.add(z, y) * r3).sum()), F.add_backward(r3)[0]), x.copy()) < 1e-4

    xr = x + np.sign(x) * 0.05  # keep away from the relu kink
    def f_relu(z):
        out, m = F.relu(z)
        return float((out * r3).sum()), F.relu_backward(r3, m)
    assert nn.grad_check(f_relu, xr) < 1e-4

    def f_pool(z):
        out, s = F.avg_pool_global(z)
        return float((out * r3).sum()), F.avg_pool_global_backward(r3, s)
    assert nn.grad_check(f_pool, x.copy()) < 1e-4


@pytest.mark.parametrize("pos_weight", [1.0, 3.5])
def test_softmax_bce_gradient(pos_weight, rng):
    y = (rng.random((2, 5, 5)) > 0.6).astype(float)
    err = nn.grad_check(lambda z: F.softmax_bce(z, y, pos_weight), rng.normal(size=(2, 2, 5, 5)))
    assert err < 1e-4


def test_conv_relu_bce_composite(rng):
    conv = Conv2d(4, 2, 3, rng=rng)
    conv.bias.value[:] = rng.normal(size=2)
    y = (rng.random((1, 8, 8)) > 0.8).astype(float)

    act = nn.ReLU()

    def f(x):
        out = act.forward(conv.forward(x))
        loss, d = F.softmax_bce(out, y)
        conv.weight.zero_grad()
        conv.bias.zero_grad()
        return loss, conv.backward(act.backward(d))

    rep = nn.grad_check_report(f, rng.normal(size=(1, 4, 8, 8)), signature=lambda: act._mask.copy())
    assert rep["checked"] >= 0.9 * 4 * 8 * 8
    assert rep["max_error"] < 1e-4


def test_deterministic_forward_backward(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    results = []
    for _ in range(2):
        layer = ResBlock(3, 5, np.random.default_rng(7))
        out = layer.forward(x)
        dx = layer.backward(np.ones_like(out))
        results.append((out, dx, layer.conv1.weight.grad))
    for a, b in zip(*results):
        assert np.array_equal(a, b)


# --- optimizers ---------------------------------------------------------------

def test_sgd_closed_form():
    (w,) = nn.sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)  # d/dw w^2 = 2w
    assert w == pytest.approx(0.8, abs=1e-15)


def test_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -2.0])]
    g = [np.zeros(2)]
    assert np.array_equal(nn.sgd_step(p, g, 0.5)[0], p[0])
    new, state = nn.adam_step(p, g, {}, lr=0.1)
    assert np.array_equal(new[0], p[0])


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e6])
def test_adam_first_step_magnitude(scale):
    new, state = nn.adam_step([np.zeros(3)], [np.array([1.0, -2.0, 0.5]) * scale], {}, lr=0.01)
    np.testing.assert_allclose(np.abs(new[0]), 0.01, rtol=1e-3)
    assert state["t"] == 1


def test_adam_class_matches_function(rng):
    p = Param(rng.normal(size=4))
    opt = nn.Adam([p], lr=0.05)
    vals, state = [p.value.copy()], {}
    for _ in range(5):
        g = rng.normal(size=4)
        p.grad[...] = g
        opt.step()
        vals, state = nn.adam_step(vals, [g], state, lr=0.05)
        np.testing.assert_allclose(p.value, vals[0], rtol=1e-14)


def test_optimizer_shape_mismatch():
    with pytest.raises(ValueError):
        nn.sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)
    with pytest.raises(ValueError):
        nn.adam_step([np.zeros(2)], [np.zeros(3)], {})


def test_optimizers_skip_frozen_params():
    frozen = Param(np.ones(2), trainable=False)
    frozen.grad[:] = 1.0
    nn.Adam([frozen]).step()
    nn.SGD([frozen], lr=1.0).step()
    assert np.array_equal(frozen.value, np.ones(2))


# --- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    layer = ResBlock(2, 3, rng)
    nn.save_checkpoint(tmp_path, layer.named_params(), {"note": "x"})
    raw = (tmp_path / "conv1.weight.f64").read_bytes()
    assert len(raw) == 3 * 2 * 3 * 3 * 8
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8"), layer.conv1.weight.value.ravel())
    other = ResBlock(2, 3, np.random.default_rng(99))
    manifest = nn.load_into(tmp_path, other.named_params())
    assert manifest["version"] == 1 and manifest["hyperparameters"] == {"note": "x"}
    for (_, a), (_, b) in zip(layer.named_params(), other.named_params()):
        assert np.array_equal(a.value, b.value)
