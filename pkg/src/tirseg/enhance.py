"""Fixed-weight center-surround kernels.

Each kernel splits an s x s window into a centered rectangle of "red" cells
and the surrounding "blue" cells.  The response at a pixel is the mean over
red cells minus the mean over blue cells, evaluated on a replicate-padded
image so that a uniform image gives exactly zero everywhere.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imgio import as_image, replicate_pad

KERNEL_SIZES = (3, 5, 7, 9, 11)
CENTER_EXTENT = {3: 1, 5: 3, 7: 3, 9: 5, 11: 5}
ASPECTS = ("square", "horizontal", "vertical")


@dataclass(frozen=True)
class KernelSpec:
    size: int
    red_cells: frozenset
    blue_cells: frozenset
    aspect: str = ""

    def __post_init__(self):
        s = self.size
        if s % 2 != 1 or s < 1:
            raise ValueError(f"kernel size must be odd, got {s}")
        half = s // 2
        full = {(r, c) for r in range(-half, half + 1) for c in range(-half, half + 1)}
        if self.red_cells & self.blue_cells:
            raise ValueError("red and blue cells overlap")
        if (self.red_cells | self.blue_cells) != full:
            raise ValueError("red and blue cells must cover the whole window")
        if not self.red_cells or not self.blue_cells:
            raise ValueError("both red and blue regions need at least one cell")

    @property
    def n_red(self):
        return len(self.red_cells)

    @property
    def n_blue(self):
        return len(self.blue_cells)

    def weights(self):
        """Dense s x s weight array: 1/n_r on red cells, -1/n_b on blue cells."""
        half = self.size // 2
        w = np.empty((self.size, self.size))
        for r, c in self.blue_cells:
            w[r + half, c + half] = -1.0 / self.n_blue
        for r, c in self.red_cells:
            w[r + half, c + half] = 1.0 / self.n_red
        return w

    def to_dict(self):
        return {
            "size": self.size,
            "aspect": self.aspect,
            "n_red": self.n_red,
            "n_blue": self.n_blue,
            "red_cells": sorted(list(c) for c in self.red_cells),
        }


def centered_kernel(size, red_rows, red_cols, aspect=""):
    half = size // 2
    rh, rw = red_rows // 2, red_cols // 2
    red = {(r, c) for r in range(-rh, rh + 1) for c in range(-rw, rw + 1)}
    allc = {(r, c) for r in range(-half, half + 1) for c in range(-half, half + 1)}
    return KernelSpec(size, frozenset(red), frozenset(allc - red), aspect)


def build_default_bank():
    """15 kernels: sizes 3..11, each as square, horizontal and vertical center."""
    bank = []
    for s in KERNEL_SIZES:
        m = CENTER_EXTENT[s]
        bank.append(centered_kernel(s, m, m, "square"))
        bank.append(centered_kernel(s, 1, m, "horizontal"))
        bank.append(centered_kernel(s, m, 1, "vertical"))
    return bank


def kernel_response(image, spec):
    img = as_image(image)
    h, w = img.shape
    s = spec.size
    if h < s or w < s:
        raise ValueError(f"image {h}x{w} is smaller than kernel {s}x{s}")
    half = s // 2
    padded = replicate_pad(img, half, half, half, half)
    windows = sliding_window_view(padded, (s, s))
    # fixed reduction order per pixel: weights flattened row-major
    return np.tensordot(windows, spec.weights(), axes=([2, 3], [0, 1]))


def enhance_stack(image, bank=None):
    """Raw image followed by one response channel per kernel, shape (1, 1+K, H, W)."""
    img = as_image(image)
    if bank is None:
        bank = build_default_bank()
    chans = [img] + [kernel_response(img, k) for k in bank]
    return np.stack(chans)[None]
