"""Image/mask arrays and Netpbm (PGM) I/O.

Images are 2-D float64 arrays of shape (height, width); masks are 2-D uint8
arrays holding only 0 and 1.  On disk masks are PGMs with values {0, 255}.
"""

import os
import tempfile

import numpy as np


class PGMError(ValueError):
    """Base class for PGM decoding problems."""


class PGMMagicError(PGMError):
    pass


class PGMHeaderError(PGMError):
    pass


class PGMTruncatedError(PGMError):
    pass


def as_image(data):
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def as_mask(data):
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask values must be 0 or 1")
    return arr.astype(np.uint8)


def _tokens(buf, count, pos):
    """Pull `count` whitespace-separated header tokens starting at `pos`.

    Returns (tokens, position just past the last token).
    """
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos] in b" \t\r\n":
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise PGMHeaderError("unexpected end of file inside header")
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n#":
            pos += 1
        out.append(buf[start:pos])
    return out, pos


def _header_int(tok, name):
    try:
        value = int(tok)
    except ValueError:
        raise PGMHeaderError(f"bad {name} field {tok!r}") from None
    if value < 1:
        raise PGMHeaderError(f"{name} must be positive, got {value}")
    return value


def decode_pgm(buf):
    """Decode PGM bytes to (raw integer samples as uint16/uint8 array, maxval)."""
    magic = bytes(buf[:2])
    if magic not in (b"P2", b"P5"):
        raise PGMMagicError(f"unsupported magic {magic!r}; expected P2 or P5")
    (w, h, mv), pos = _tokens(buf, 3, 2)
    width = _header_int(w, "width")
    height = _header_int(h, "height")
    maxval = _header_int(mv, "maxval")
    if maxval > 65535:
        raise PGMHeaderError(f"maxval {maxval} exceeds 65535")
    npix = width * height

    if magic == b"P5":
        if pos >= len(buf) or buf[pos] not in b" \t\r\n":
            raise PGMHeaderError("missing whitespace after maxval")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = npix * dtype.itemsize
        payload = buf[pos:pos + need]
        if len(payload) < need:
            raise PGMTruncatedError(f"expected {need} payload bytes, found {len(payload)}")
        samples = np.frombuffer(payload, dtype=dtype).astype(np.uint16)
    else:
        body = bytes(buf[pos:])
        # strip comments, which are legal between samples in practice
        lines = [ln.split(b"#", 1)[0] for ln in body.splitlines()]
        toks = b" ".join(lines).split()
        if len(toks) < npix:
            raise PGMTruncatedError(f"expected {npix} samples, found {len(toks)}")
        try:
            samples = np.array([int(t) for t in toks[:npix]], dtype=np.int64)
        except ValueError:
            raise PGMHeaderError("non-integer sample in P2 payload") from None
    if samples.max(initial=0) > maxval or samples.min(initial=0) < 0:
        raise PGMHeaderError("sample outside [0, maxval]")
    return samples.reshape(height, width), maxval


def read_pgm(path):
    """Read a P2 or P5 file; intensities are scaled by 1/maxval into [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    samples, maxval = decode_pgm(buf)
    return samples.astype(np.float64) / maxval


def quantize(image, maxval):
    """Round-half-up quantization to integers in [0, maxval]."""
    q = np.floor(np.asarray(image, dtype=np.float64) * maxval + 0.5)
    return np.clip(q, 0, maxval).astype(np.int64)


def encode_pgm(image, maxval=255):
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    img = as_image(image)
    h, w = img.shape
    q = quantize(img, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def _atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(image, path, maxval=255):
    """Write a binary (P5) PGM."""
    _atomic_write(path, encode_pgm(image, maxval))


def read_mask(path):
    samples, maxval = decode_pgm(open(path, "rb").read())
    return (samples * 2 > maxval).astype(np.uint8)


def write_mask(mask, path):
    write_pgm(as_mask(mask).astype(np.float64), path, maxval=255)


def normalize(image):
    """Min-max scale to [0, 1]; a constant image maps to zeros."""
    img = as_image(image)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    out = (img - lo) / (hi - lo)
    # pin the extremes so min is exactly 0 and max exactly 1
    out[img == lo] = 0.0
    out[img == hi] = 1.0
    return out


def replicate_pad(image, top, bottom, left, right):
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding margins must be non-negative")
    return np.pad(as_image(image), ((top, bottom), (left, right)), mode="edge")


def crop(image, top, bottom, left, right):
    h, w = image.shape
    return image[top:h - bottom, left:w - right]
