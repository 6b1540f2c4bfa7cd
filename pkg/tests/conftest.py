import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_kernel_response(img, spec):
    """Per-pixel double loop over red and blue cells with clamped (replicate) indexing."""
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            red = sum(img[min(max(y + dr, 0), h - 1), min(max(x + dc, 0), w - 1)] for dr, dc in spec.red_cells)
            blue = sum(img[min(max(y + dr, 0), h - 1), min(max(x + dc, 0), w - 1)] for dr, dc in spec.blue_cells)
            out[y, x] = red / spec.n_red - blue / spec.n_blue
    return out


def naive_conv2d(x, w, b, stride, padding, dilation):
    """Seven nested loops, zero padding by bounds checks."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[oc]
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride - padding + u * dilation
                                xx = j * stride - padding + v * dilation
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += w[oc, ic, u, v] * x[bi, ic, y, xx]
                    out[bi, oc, i, j] = acc
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
