"""Forward/backward pairs for rank-4 (N, C, H, W) float64 arrays.

Every forward returns ``(out, cache)``; the matching ``*_backward`` takes the
upstream gradient and the cache.  Convolution is cross-correlation (no
kernel flip) with zero padding.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

BCE_EPS = 1e-7


def _check4(x, name="x"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be rank-4 (N, C, H, W), got shape {x.shape}")


def conv_output_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp, kh, kw, ho, wo, stride, dilation):
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(c, kh, kw, n, ho, wo),
        strides=(sc, dilation * sh, dilation * sw, sn, stride * sh, stride * sw),
        writeable=False,
    )


def conv2d(x, w, b, stride=1, padding=0, dilation=1):
    _check4(x)
    _check4(w, "w")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"input has {c} channels, weights expect {ci}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"bias shape {b.shape} does not match {o} output channels")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("stride and dilation must be >= 1, padding >= 0")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(wd, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError("input too small for kernel/dilation/padding")
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(x)
    cols = _windows(xp, kh, kw, ho, wo, stride, dilation).reshape(c * kh * kw, n * ho * wo)
    out = w.reshape(o, -1) @ cols
    if b is not None:
        out += b[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    cache = (xp, cols, w, b is not None, stride, padding, dilation, (ho, wo))
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout, cache):
    xp, cols, w, has_bias, stride, padding, dilation, (ho, wo) = cache
    n, c, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    dmat = dout.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1) if has_bias else None
    if stride == 1 and kh == kw and padding == dilation * (kh // 2):
        # "same" convolution: the input gradient is itself a same-size correlation
        # of dout with the spatially flipped, channel-transposed kernel
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv2d(dout, w_t, None, 1, padding, dilation)
        return dx, dw, db
    dcols = (w.reshape(o, -1).T @ dmat).reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((n, c, hp, wp))
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            dxp[:, :, r0:r0 + hspan:stride, c0:c0 + wspan:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
    if padding:
        dxp = dxp[:, :, padding:hp - padding, padding:wp - padding]
    return np.ascontiguousarray(dxp), dw, db


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def add(x, y):
    if x.shape != y.shape:
        raise ValueError(f"cannot add shapes {x.shape} and {y.shape}")
    return x + y


def add_backward(dout):
    return dout, dout


def concat_channels(xs):
    if not xs:
        raise ValueError("nothing to concatenate")
    for x in xs:
        _check4(x)
    ref = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ValueError(f"cannot concatenate {x.shape} with {ref}")
    return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]


def concat_channels_backward(dout, sizes):
    return np.split(dout, np.cumsum(sizes)[:-1], axis=1)


def avg_pool_global(x):
    """Per-channel spatial mean broadcast back over H x W."""
    _check4(x)
    m = x.mean(axis=(2, 3), keepdims=True)
    return np.broadcast_to(m, x.shape).copy(), x.shape


def avg_pool_global_backward(dout, shape):
    h, w = shape[2], shape[3]
    g = dout.sum(axis=(2, 3), keepdims=True) / (h * w)
    return np.broadcast_to(g, shape).copy()


def upsample_nearest(x, factor=2):
    _check4(x)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    return x.repeat(factor, axis=2).repeat(factor, axis=3), factor


def upsample_nearest_backward(dout, factor):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def softmax2(logits):
    """Two-channel softmax over axis 1.

    Channel 0 holds the background logit, channel 1 the target logit.
    Returns (p_target, p_background), each of shape (N, H, W).
    """
    _check4(logits, "logits")
    if logits.shape[1] != 2:
        raise ValueError(f"softmax2 needs exactly 2 channels, got {logits.shape[1]}")
    zb, zt = logits[:, 0], logits[:, 1]
    m = np.maximum(zb, zt)
    eb = np.exp(zb - m)
    et = np.exp(zt - m)
    s = eb + et
    p_t = et / s
    # p_b computed as 1 - p_t keeps the sum exact up to one rounding
    return p_t, 1.0 - p_t


def bce_loss(p_t, p_b, target, pos_weight=1.0):
    """Weighted binary cross-entropy averaged over all pixels (and batch).

    Probabilities are clamped from below at BCE_EPS before the log.
    """
    y = np.asarray(target, dtype=np.float64)
    if p_t.shape != y.shape or p_b.shape != y.shape:
        raise ValueError(f"likelihood shape {p_t.shape} does not match target {y.shape}")
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    per_pixel = (pos_weight * y * np.log(np.maximum(p_t, BCE_EPS))
                 + (1.0 - y) * np.log(np.maximum(p_b, BCE_EPS)))
    return -per_pixel.sum() / y.size


def softmax_bce_backward(p_t, target, pos_weight=1.0):
    """Gradient of bce_loss(softmax2(logits)) w.r.t. the 2-channel logits.

    Exact wherever both probabilities exceed the clamp; at pos_weight 1 the
    target channel gradient is (p_t - y) / n_pixels.
    """
    y = np.asarray(target, dtype=np.float64)
    g_t = (-pos_weight * y * (1.0 - p_t) + (1.0 - y) * p_t) / y.size
    return np.stack([-g_t, g_t], axis=1)


def softmax_bce(logits, target, pos_weight=1.0):
    p_t, p_b = softmax2(logits)
    loss = bce_loss(p_t, p_b, target, pos_weight)
    return loss, softmax_bce_backward(p_t, target, pos_weight)
