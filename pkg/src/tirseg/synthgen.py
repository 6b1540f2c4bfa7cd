"""Synthetic maritime thermal scenes with small bright targets."""

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .dataprep import LabeledImage
from .imgio import read_mask, read_pgm, write_mask, write_pgm

MAX_PLACEMENT_TRIES = 1000


@dataclass
class SceneParams:
    width: int = 64
    height: int = 64
    n_targets: int = 3
    target_extent: int = 3
    target_snr: float = 4.0
    clutter_amplitude: float = 0.03
    clutter_wavelength: float = 12.0
    row_noise_sigma: float = 0.01
    pixel_noise_sigma: float = 0.02
    horizon_gradient: float = 0.1
    background_level: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene size must be positive")
        if self.n_targets < 0:
            raise ValueError("n_targets must be >= 0")
        if not 1 <= self.target_extent <= 7:
            raise ValueError("target_extent must lie in [1, 7]")
        if self.target_extent + 2 > min(self.width, self.height) and self.n_targets:
            raise ValueError("targets do not fit inside the frame")
        if self.target_snr <= 0:
            raise ValueError("target_snr must be positive")
        if min(self.clutter_amplitude, self.row_noise_sigma, self.pixel_noise_sigma) < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.clutter_wavelength <= 0:
            raise ValueError("clutter_wavelength must be positive")
        vals = (self.target_snr, self.clutter_amplitude, self.clutter_wavelength,
                self.row_noise_sigma, self.pixel_noise_sigma, self.horizon_gradient,
                self.background_level)
        if not all(np.isfinite(vals)):
            raise ValueError("scene parameters must be finite")


@dataclass
class Dataset:
    items: list
    manifest: list


def snr(item):
    mask = item.mask.astype(bool)
    if not mask.any() or mask.all():
        raise ValueError("snr needs at least one target and one background pixel")
    bg = item.image[~mask]
    if np.ptp(bg) == 0:
        raise ValueError("background has zero variance")
    return float((item.image[mask].mean() - bg.mean()) / bg.std())


def _background(p, rng):
    h, w = p.height, p.width
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    img = np.full((h, w), p.background_level) + p.horizon_gradient * (y / max(h - 1, 1) - 0.5)
    if p.clutter_amplitude > 0:
        # crests mostly horizontal, slight random tilt
        tilt = rng.uniform(-0.3, 0.3)
        phase = rng.uniform(0, 2 * np.pi)
        img = img + p.clutter_amplitude * np.sin(2 * np.pi * (y + tilt * x) / p.clutter_wavelength + phase)
    if p.row_noise_sigma > 0:
        # AR(1) across rows gives vertically correlated banding
        rho = 0.7
        e = rng.normal(0.0, p.row_noise_sigma * np.sqrt(1 - rho ** 2), size=h)
        rows = np.empty(h)
        rows[0] = rng.normal(0.0, p.row_noise_sigma)
        for i in range(1, h):
            rows[i] = rho * rows[i - 1] + e[i]
        img = img + rows[:, None]
    if p.pixel_noise_sigma > 0:
        img = img + rng.normal(0.0, p.pixel_noise_sigma, size=(h, w))
    return img


def _place_targets(p, rng):
    """Non-overlapping target boxes: list of (cy, cx, ext_y, ext_x)."""
    placed = []
    boxes = []
    e = p.target_extent
    lo = (e + 1) // 2
    for _ in range(p.n_targets):
        for _attempt in range(MAX_PLACEMENT_TRIES):
            ey = int(rng.integers(lo, e + 1))
            ex = int(rng.integers(lo, e + 1))
            # box of half-size e//2 + 1 must sit inside the frame
            r = e // 2 + 1
            cy = int(rng.integers(r, p.height - r)) if p.height > 2 * r else p.height // 2
            cx = int(rng.integers(r, p.width - r)) if p.width > 2 * r else p.width // 2
            box = (cy - r, cy + r, cx - r, cx + r)
            if all(box[1] < b[0] or box[0] > b[1] or box[3] < b[2] or box[2] > b[3] for b in boxes):
                off = rng.uniform(-0.25, 0.25, size=2)
                placed.append((cy + off[0], cx + off[1], ey, ex))
                boxes.append(box)
                break
        else:
            raise RuntimeError(f"could not place {p.n_targets} non-overlapping targets")
    return placed


def _target_profile(p, targets):
    """Unit-peak Gaussian blobs (max over targets) and the half-peak mask."""
    h, w = p.height, p.width
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    prof = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=np.uint8)
    fwhm_to_sigma = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    for cy, cx, ey, ex in targets:
        sy, sx = ey * fwhm_to_sigma, ex * fwhm_to_sigma
        g = np.exp(-0.5 * (((y - cy) / sy) ** 2 + ((x - cx) / sx) ** 2))
        # keep each blob local so neighbouring labels stay separate
        r = p.target_extent // 2 + 1
        iy, ix = int(round(cy)), int(round(cx))
        local = np.zeros_like(g)
        local[max(iy - r, 0):iy + r + 1, max(ix - r, 0):ix + r + 1] = 1.0
        g = g * local
        prof = np.maximum(prof, g)
        mask[g > 0.5] = 1
    return prof, mask


def gen_scene(params):
    rng = np.random.default_rng(params.seed)
    bg = _background(params, rng)
    if params.n_targets == 0:
        return LabeledImage(np.clip(bg, 0.0, 1.0), np.zeros(bg.shape, dtype=np.uint8))
    targets = _place_targets(params, rng)
    prof, mask = _target_profile(params, targets)

    def measured(amp):
        return snr(LabeledImage(np.clip(bg + amp * prof, 0.0, 1.0), mask))

    goal = params.target_snr
    hi = 1.0
    if measured(hi) < goal:
        raise ValueError(f"target_snr {goal} unreachable with intensities clamped to [0, 1]")
    amp = brentq(lambda a: measured(a) - goal, 0.0, hi, xtol=1e-10)
    return LabeledImage(np.clip(bg + amp * prof, 0.0, 1.0), mask)


def item_seeds(seed, n):
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, dtype=np.uint64)[0] >> 1) for s in ss.spawn(n)]


def gen_dataset(base, n, seed, out_dir=None, snr_jitter=0.3):
    """``n`` scenes around ``base``; SNR drawn uniformly in base*(1 +/- snr_jitter)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    seeds = item_seeds(seed, n)
    items, manifest = [], []
    for i, s in enumerate(seeds):
        snr_i = float(base.target_snr * rng.uniform(1 - snr_jitter, 1 + snr_jitter))
        p = replace(base, seed=s, target_snr=snr_i)
        items.append(gen_scene(p))
        manifest.append({"index": i, "seed": s, "params": asdict(p)})
    if out_dir is not None:
        manifest = write_dataset(out_dir, items, manifest)
    return Dataset(items, manifest)


def write_dataset(out_dir, items, manifest=None):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    entries = []
    for i, item in enumerate(items):
        img_rel = os.path.join("images", f"{i:04d}.pgm")
        mask_rel = os.path.join("masks", f"{i:04d}.pgm")
        write_pgm(item.image, os.path.join(out_dir, img_rel), maxval=65535)
        write_mask(item.mask, os.path.join(out_dir, mask_rel))
        entry = dict(manifest[i]) if manifest else {"index": i}
        entry.update(image=img_rel, mask=mask_rel)
        entries.append(entry)
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(entries, fh, indent=2)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return entries


def load_dataset(manifest_path):
    """Load a JSON list of {image, mask} entries; relative paths resolve against the manifest's folder."""
    with open(manifest_path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValueError("dataset manifest must be a JSON list")
    root = os.path.dirname(os.path.abspath(manifest_path))
    items = []
    for e in entries:
        img = read_pgm(os.path.join(root, e["image"]))
        mask = read_mask(os.path.join(root, e["mask"]))
        items.append(LabeledImage(img, mask))
    return Dataset(items, entries)
