"""Segmentation network: kernel-enhancement head, residual U-Net, ASPP bridge, 2-class head."""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .enhance import build_default_bank, enhance_stack
from .imgio import as_image
from .nn import functional as F
from .nn.layers import ASPP, Conv2d, ConvReLU, Layer, ResBlock


@dataclass
class NetConfig:
    input_channels: int = 16
    widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 1
    aspp_rates: tuple = (1, 2, 4, 8)
    aspp_global_pool: bool = True
    head: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)
        if len(self.widths) < 2:
            raise ValueError("need at least two encoder stages")
        if any(w < 1 for w in self.widths):
            raise ValueError("channel widths must be positive")
        if len(set(self.aspp_rates)) < 2 or min(self.aspp_rates) < 1:
            raise ValueError("need at least two distinct positive dilation rates")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.head not in ("fixed", "free"):
            raise ValueError(f"head must be 'fixed' or 'free', got {self.head!r}")
        expected = 1 + len(build_default_bank())
        if self.input_channels != expected:
            raise ValueError(f"input_channels must be {expected} for the default kernel bank")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["aspp_rates"] = list(self.aspp_rates)
        return d


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 2e-3
    optimizer: str = "adam"
    pos_weight: object = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.pos_weight != "auto" and not float(self.pos_weight) > 0:
            raise ValueError("pos_weight must be positive or 'auto'")


@dataclass
class LikelihoodMap:
    p_t: np.ndarray
    p_b: np.ndarray


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    pos_weight: float = 1.0
    steps: int = 0

    def to_dict(self):
        return asdict(self)


class FixedHead(Layer):
    """Raw image plus the fixed-kernel responses; holds no trainable state."""

    def __init__(self, bank):
        self.bank = bank

    def forward(self, images):
        return np.concatenate([enhance_stack(img, self.bank) for img in images])

    def backward(self, dout):
        return None


class FreeHead(Layer):
    """Same window sizes and replicate padding as the fixed bank, but learned weights."""

    def __init__(self, bank, rng):
        self.sizes = [k.size for k in bank]
        self.kernels = [Conv2d(1, 1, s, padding=0, rng=rng, bias=False) for s in self.sizes]

    def forward(self, images):
        x = images[:, None]
        chans = [x]
        for s, conv in zip(self.sizes, self.kernels):
            h = s // 2
            xp = np.pad(x, ((0, 0), (0, 0), (h, h), (h, h)), mode="edge")
            chans.append(conv.forward(xp))
        return np.concatenate(chans, axis=1)

    def backward(self, dout):
        for i, conv in enumerate(self.kernels):
            conv.backward(dout[:, i + 1:i + 2])
        return None


class Network(Layer):
    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        bank = build_default_bank()
        self.bank = bank
        self.head = FixedHead(bank) if config.head == "fixed" else FreeHead(bank, rng)
        widths = config.widths
        nb = config.blocks_per_stage

        self.enc = []
        self.down = []
        ch = config.input_channels
        for w in widths:
            blocks = [ResBlock(ch if i == 0 else w, w, rng) for i in range(nb)]
            self.enc.append(Stage(blocks))
            self.down.append(ConvReLU(w, w, 3, stride=2, padding=1, rng=rng))
            ch = w
        self.aspp = ASPP(ch, ch, config.aspp_rates, rng, config.aspp_global_pool)
        self.dec = []
        for i in reversed(range(len(widths))):
            w = widths[i]
            blocks = [ResBlock(ch + w if j == 0 else w, w, rng) for j in range(nb)]
            self.dec.append(Stage(blocks))
            ch = w
        self.classifier = Conv2d(ch, 2, 1, rng=rng)

    @property
    def n_stages(self):
        return len(self.config.widths)

    def parameters(self):
        return [p for _, p in self.named_params() if p.trainable]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def check_input(self, shape):
        h, w = shape[-2:]
        f = 2 ** self.n_stages
        if h % f or w % f:
            raise ValueError(f"image {h}x{w} must be divisible by {f} in both axes")

    def forward_features(self, x):
        """Encoder/ASPP/decoder from a head output (N, C, H, W) to 2-channel logits."""
        self.check_input(x.shape)
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc.forward(x)
            skips.append(x)
            x = down.forward(x)
        x = self.aspp.forward(x)
        self._cat_sizes = []
        for dec, skip in zip(self.dec, reversed(skips)):
            x, _ = F.upsample_nearest(x, 2)
            x, sizes = F.concat_channels([x, skip])
            self._cat_sizes.append(sizes)
            x = dec.forward(x)
        return self.classifier.forward(x)

    def backward_features(self, dlogits):
        d = self.classifier.backward(dlogits)
        dskips = []
        for dec, sizes in zip(reversed(self.dec), reversed(self._cat_sizes)):
            d = dec.backward(d)
            dup, dskip = F.concat_channels_backward(d, sizes)
            dskips.append(dskip)
            d = F.upsample_nearest_backward(dup, 2)
        d = self.aspp.backward(d)
        for enc, down, dskip in zip(reversed(self.enc), reversed(self.down), reversed(dskips)):
            d = down.backward(d)
            d = enc.backward(d + dskip)
        return d

    def logits(self, images):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        self.check_input(images.shape)
        return self.forward_features(self.head.forward(images))

    def backward(self, dlogits):
        d = self.backward_features(dlogits)
        self.head.backward(d)
        return d


class Stage(Layer):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, x):
        for b in self.blocks:
            x = b.forward(x)
        return x

    def backward(self, d):
        for b in reversed(self.blocks):
            d = b.backward(d)
        return d


def build_network(config=None):
    return Network(config or NetConfig())


def forward(net, image):
    img = as_image(image)
    p_t, p_b = F.softmax2(net.logits(img))
    return LikelihoodMap(p_t[0], p_b[0])


def binarize(lmap):
    return (lmap.p_b < lmap.p_t).astype(np.uint8)


def infer(net, image):
    """Returns (likelihood map, binary mask, overlay image)."""
    img = as_image(image)
    lmap = forward(net, img)
    mask = binarize(lmap)
    overlay = img.copy()
    overlay[mask == 1] = 1.0
    return lmap, mask, overlay


def auto_pos_weight(masks):
    pos = sum(int(m.sum()) for m in masks)
    total = sum(m.size for m in masks)
    if pos == 0:
        return 1.0
    return float(np.clip((total - pos) / pos, 1.0, 100.0))


def train(net, train_set, cfg=None, log=None, until=None):
    """Mini-batch training on (image, mask) pairs.  Returns (net, TrainReport).

    ``log(epoch, loss)`` is called after every epoch; if ``until(epoch, loss)``
    returns True, training stops after that epoch.
    """
    cfg = cfg or TrainConfig()
    if not train_set:
        raise ValueError("training set is empty")
    shape = train_set[0].image.shape
    for item in train_set:
        if item.image.shape != shape or item.mask.shape != shape:
            raise ValueError("all training images and masks must share one size")
    net.check_input(shape)

    images = np.stack([it.image for it in train_set])
    masks = np.stack([it.mask for it in train_set]).astype(np.float64)
    pw = auto_pos_weight(list(masks)) if cfg.pos_weight == "auto" else float(cfg.pos_weight)

    # the fixed head never changes, so its output is computed once
    fixed = isinstance(net.head, FixedHead)
    head_out = net.head.forward(images) if fixed else None

    params = net.parameters()
    opt = nn.Adam(params, lr=cfg.lr) if cfg.optimizer == "adam" else nn.SGD(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport(pos_weight=pw)
    n = len(train_set)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            net.zero_grad()
            if fixed:
                logits = net.forward_features(head_out[idx])
            else:
                logits = net.logits(images[idx])
            loss, dlogits = F.softmax_bce(logits, masks[idx], pw)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            if fixed:
                net.backward_features(dlogits)
            else:
                net.backward(dlogits)
            opt.step()
            total += loss * len(idx)
            report.steps += 1
        report.epoch_loss.append(total / n)
        report.epoch_seconds.append(time.perf_counter() - t0)
        if log is not None:
            log(epoch, report.epoch_loss[-1])
        if until is not None and until(epoch, report.epoch_loss[-1]):
            break
    return net, report


def network_grad_check(net, image, mask, n_samples=100, seed=0, step=nn.gradcheck.STEP, pos_weight=1.0):
    """Finite-difference check of the full loss gradient on randomly sampled parameters.

    ``image`` is either a 2-D image (run through the whole network) or a
    rank-4 head output (run through the body only, which is how inputs smaller
    than the largest enhancement kernel are checked).  Returns the
    grad_check_report dict merged over all sampled coordinates, plus
    ``sampled``.  Coordinates whose stencil flips a ReLU are skipped.
    """
    image = np.asarray(image, dtype=np.float64)
    body_only = image.ndim == 4
    target = np.asarray(mask, dtype=np.float64)[None]
    named = [(name, p) for name, p in net.named_params() if p.trainable]
    if body_only:
        named = [(name, p) for name, p in named if not name.startswith("head.")]

    def run():
        if body_only:
            return net.forward_features(image)
        return net.logits(as_image(image)[None])

    def back(dlogits):
        if body_only:
            net.backward_features(dlogits)
        else:
            net.backward(dlogits)

    sizes = np.array([p.value.size for _, p in named])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(n_samples, total), replace=False))
    owner = np.searchsorted(np.cumsum(sizes), picks, side="right")
    offsets = picks - np.concatenate([[0], np.cumsum(sizes)[:-1]])[owner]

    def make_f(param):
        def f(v):
            param.value[...] = v
            net.zero_grad()
            loss, dlogits = F.softmax_bce(run(), target, pos_weight)
            back(dlogits)
            return loss, param.grad.copy()
        return f

    out = {"max_error": 0.0, "checked": 0, "skipped": [], "sampled": len(picks)}
    for k in np.unique(owner):
        name, param = named[k]
        original = param.value.copy()
        rep = nn.grad_check_report(make_f(param), original.copy(), offsets[owner == k], step,
                                   signature=lambda: nn.relu_signature(net))
        param.value[...] = original
        out["max_error"] = max(out["max_error"], rep["max_error"])
        out["checked"] += rep["checked"]
        out["skipped"] += [f"{name}[{i}]" for i in rep["skipped"]]
    net.zero_grad()
    return out


def save_network(net, directory):
    nn.save_checkpoint(directory, net.named_params(), {"net_config": net.config.to_dict()})


def load_network(directory):
    manifest = nn.checkpoint.read_manifest(directory)
    net = Network(NetConfig(**manifest["hyperparameters"]["net_config"]))
    nn.load_into(directory, net.named_params())
    return net
