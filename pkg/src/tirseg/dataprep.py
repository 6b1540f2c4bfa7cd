"""Target-background separated style translation.

Targets are cut out of a labeled image (each target pixel replaced by the
mean of the background pixels in its row), only the background goes through
a translation function, and the original target pixels are pasted back.
"""

import math
from dataclasses import dataclass

import numpy as np

from .imgio import as_image, as_mask, read_pgm


@dataclass
class LabeledImage:
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = as_image(self.image)
        self.mask = as_mask(self.mask)
        if self.image.shape != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ in size")


@dataclass
class LossBreakdown:
    adv_s_to_t: float
    adv_t_to_s: float
    recon_s: float
    recon_t: float

    @property
    def total(self):
        return self.adv_s_to_t + self.adv_t_to_s + self.recon_s + self.recon_t

    def to_dict(self):
        return {"adv_s_to_t": self.adv_s_to_t, "adv_t_to_s": self.adv_t_to_s,
                "recon_s": self.recon_s, "recon_t": self.recon_t, "total": self.total}


def separate_background(item):
    img, mask = item.image, item.mask.astype(bool)
    bg = ~mask
    if not bg.any():
        raise ValueError("mask covers the whole image; no background to fill from")
    out = img.copy()
    if not mask.any():
        return out
    global_mean = img[bg].mean()
    for r in np.flatnonzero(mask.any(axis=1)):
        row_bg = bg[r]
        fill = img[r, row_bg].mean() if row_bg.any() else global_mean
        out[r, mask[r]] = fill
    return out


def compose(translated_bg, original):
    bg = as_image(translated_bg)
    if bg.shape != original.image.shape:
        raise ValueError(f"translated background {bg.shape} vs original {original.image.shape}")
    return np.where(original.mask == 1, original.image, bg)


def adaptation_pipeline(item, translate):
    background = separate_background(item)
    translated = np.asarray(translate(background), dtype=np.float64)
    if translated.shape != background.shape:
        raise ValueError("translation function changed the image size")
    return compose(translated, item)


@dataclass
class SurrogateConfig:
    reference: object = None
    sigma_row: float = 0.0
    sigma_px: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_row < 0 or self.sigma_px < 0:
            raise ValueError("noise amplitudes must be non-negative")


def match_histogram(image, reference):
    """Quantile mapping of ``image`` intensities onto the ``reference`` distribution."""
    src = image.ravel()
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())
    s_vals, s_idx, s_counts = np.unique(src, return_inverse=True, return_counts=True)
    s_q = (np.cumsum(s_counts) - 0.5 * s_counts) / src.size
    r_q = (np.arange(ref.size) + 0.5) / ref.size
    mapped = np.interp(s_q, r_q, ref)
    return mapped[s_idx].reshape(image.shape)


def translate_surrogate(image, params, rng=None):
    """Stand-in style translation: histogram match, row offsets, pixel noise, clamp."""
    img = as_image(image)
    if rng is None:
        rng = np.random.default_rng(params.seed)
    ref = params.reference
    if isinstance(ref, str):
        ref = read_pgm(ref)
    out = match_histogram(img, ref) if ref is not None else img.copy()
    h, w = img.shape
    if params.sigma_row > 0:
        out = out + rng.normal(0.0, params.sigma_row, size=(h, 1))
    if params.sigma_px > 0:
        out = out + rng.normal(0.0, params.sigma_px, size=(h, w))
    return np.clip(out, 0.0, 1.0)


def surrogate_fn(params):
    """Wrap translate_surrogate as a one-argument translation function with a fixed seed."""
    def fn(image):
        return translate_surrogate(image, params, np.random.default_rng(params.seed))
    return fn


def _batch_mean(values):
    # fsum is exactly rounded, so the result does not depend on batch order
    return math.fsum(float(v) for v in values) / len(values)


def _score(d, x):
    v = float(d(x))
    if not (np.isfinite(v) and 0.0 <= v <= 1.0):
        raise ValueError(f"discriminator score {v} outside [0, 1]")
    return v


def translation_losses(src_batch, tgt_batch, p, q, d_s, d_t):
    """Adversarial + cycle reconstruction objective over two image batches.

    The adversarial terms apply the discriminators exactly as
        adv_s_to_t = E_T[d_s(x_t)] + E_S[1 - d_t(p(x_s))]
        adv_t_to_s = E_S[d_t(x_s)] + E_T[1 - d_s(q(x_t))]
    and reconstruction terms are mean absolute errors over pixels and batch.
    """
    if len(src_batch) == 0 or len(tgt_batch) == 0:
        raise ValueError("source and target batches must be non-empty")
    src = [as_image(x) for x in src_batch]
    tgt = [as_image(x) for x in tgt_batch]
    adv_st = _batch_mean([_score(d_s, x) for x in tgt]) + _batch_mean([1.0 - _score(d_t, p(x)) for x in src])
    adv_ts = _batch_mean([_score(d_t, x) for x in src]) + _batch_mean([1.0 - _score(d_s, q(x)) for x in tgt])
    recon_s = _batch_mean([np.abs(q(p(x)) - x).mean() for x in src])
    recon_t = _batch_mean([np.abs(p(q(x)) - x).mean() for x in tgt])
    return LossBreakdown(adv_st, adv_ts, recon_s, recon_t)
