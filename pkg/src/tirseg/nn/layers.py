"""Stateful layers built on the functional ops.

A layer's ``forward`` stores what its ``backward`` needs; ``backward`` returns
the input gradient and accumulates parameter gradients into ``Param.grad``.
"""

import numpy as np

from . import functional as F


class Param:
    """A trainable array with its gradient accumulator."""

    def __init__(self, value, trainable=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def he_uniform(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def named_params(self, prefix=""):
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Param):
                out.append((prefix + name, val))
            elif isinstance(val, Layer):
                out.extend(val.named_params(f"{prefix}{name}."))
            elif isinstance(val, list) and val and isinstance(val[0], Layer):
                for i, sub in enumerate(val):
                    out.extend(sub.named_params(f"{prefix}{name}.{i}."))
        return out


def relu_signature(layer):
    """Concatenated activation masks of every ReLU inside ``layer`` (after a forward)."""
    masks = []

    def walk(obj):
        if isinstance(obj, ReLU):
            masks.append(obj._mask.ravel())
        elif isinstance(obj, Layer):
            for val in vars(obj).values():
                if isinstance(val, (Layer, list)):
                    walk(val)
        elif isinstance(obj, list):
            for v in obj:
                walk(v)

    walk(layer)
    return np.concatenate(masks) if masks else np.zeros(0, dtype=bool)


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, k=3, stride=1, padding=None, dilation=1, rng=None, bias=True):
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        if dilation < 1 or stride < 1:
            raise ValueError("stride and dilation must be >= 1")
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Param(he_uniform(rng, (out_ch, in_ch, k, k)))
        self.bias = Param(np.zeros(out_ch)) if bias else None
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (k // 2) if padding is None else padding
        self._cache = None

    def forward(self, x):
        b = None if self.bias is None else self.bias.value
        out, self._cache = F.conv2d(x, self.weight.value, b, self.stride, self.padding, self.dilation)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class ReLU(Layer):
    def forward(self, x):
        out, self._mask = F.relu(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class ConvReLU(Layer):
    def __init__(self, *args, **kwargs):
        self.conv = Conv2d(*args, **kwargs)
        self.act = ReLU()

    def forward(self, x):
        return self.act.forward(self.conv.forward(x))

    def backward(self, dout):
        return self.conv.backward(self.act.backward(dout))


class ResBlock(Layer):
    """conv3x3-relu-conv3x3 plus identity (or 1x1 projection) shortcut, then relu."""

    def __init__(self, in_ch, out_ch, rng):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng=rng)
        self.act1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng=rng)
        self.proj = Conv2d(in_ch, out_ch, 1, rng=rng) if in_ch != out_ch else None
        self.act2 = ReLU()

    def forward(self, x):
        h = self.conv2.forward(self.act1.forward(self.conv1.forward(x)))
        skip = x if self.proj is None else self.proj.forward(x)
        return self.act2.forward(F.add(h, skip))

    def backward(self, dout):
        d = self.act2.backward(dout)
        dh, dskip = F.add_backward(d)
        dx = self.conv1.backward(self.act1.backward(self.conv2.backward(dh)))
        if self.proj is None:
            return dx + dskip
        return dx + self.proj.backward(dskip)


class GlobalPoolBranch(Layer):
    """Global average pool -> 1x1 conv -> relu, broadcast over the map."""

    def __init__(self, in_ch, out_ch, rng):
        self.conv = Conv2d(in_ch, out_ch, 1, rng=rng)
        self.act = ReLU()

    def forward(self, x):
        pooled, self._shape = F.avg_pool_global(x)
        return self.act.forward(self.conv.forward(pooled))

    def backward(self, dout):
        d = self.conv.backward(self.act.backward(dout))
        return F.avg_pool_global_backward(d, self._shape)


class ASPP(Layer):
    """Parallel dilated 3x3 branches (+ optional global-pool branch), concatenated and fused by 1x1."""

    def __init__(self, in_ch, out_ch, rates, rng, global_pool=True):
        self.branches = [ConvReLU(in_ch, out_ch, 3, dilation=r, rng=rng) for r in rates]
        self.pool = GlobalPoolBranch(in_ch, out_ch, rng) if global_pool else None
        n = len(rates) + (1 if global_pool else 0)
        self.fuse = ConvReLU(n * out_ch, out_ch, 1, rng=rng)

    def forward(self, x):
        outs = [br.forward(x) for br in self.branches]
        if self.pool is not None:
            outs.append(self.pool.forward(x))
        cat, self._sizes = F.concat_channels(outs)
        return self.fuse.forward(cat)

    def backward(self, dout):
        parts = F.concat_channels_backward(self.fuse.backward(dout), self._sizes)
        dx = None
        mods = self.branches + ([self.pool] if self.pool is not None else [])
        for mod, d in zip(mods, parts):
            g = mod.backward(d)
            dx = g if dx is None else dx + g
        return dx
