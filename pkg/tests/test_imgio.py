import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tirseg import imgio


def write_bytes(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data)
    return p


def test_read_p2_scales_by_maxval(tmp_path):
    p = write_bytes(tmp_path, "a.pgm", b"P2\n# comment line\n2 2\n255\n0 255\n255 0\n")
    np.testing.assert_array_equal(imgio.read_pgm(p), [[0, 1], [1, 0]])


def test_read_p5_16bit_matches_hand_decode(tmp_path):
    # samples 0x1234 = 4660 and 0xfffe = 65534, big-endian
    p = write_bytes(tmp_path, "b.pgm", b"P5\n2 1\n65535\n\x12\x34\xff\xfe")
    img = imgio.read_pgm(p)
    assert img.shape == (1, 2)
    assert img[0, 0] == 4660 / 65535
    assert img[0, 1] == 65534 / 65535


def test_comment_inside_header(tmp_path):
    p = write_bytes(tmp_path, "c.pgm", b"P5 #c1\n1 #c2\n1\n#c3\n255\n\x80")
    assert imgio.read_pgm(p)[0, 0] == 128 / 255


@pytest.mark.parametrize("data, exc", [
    (b"P6\n1 1\n255\n\x00\x00\x00", imgio.PGMMagicError),
    (b"P5\n1 x\n255\n\x00", imgio.PGMHeaderError),
    (b"P5\n2 2\n70000\n", imgio.PGMHeaderError),
    (b"P5\n2 2", imgio.PGMHeaderError),
    (b"P5\n2 2\n255\n\x00\x01", imgio.PGMTruncatedError),
    (b"P2\n2 2\n255\n1 2 3", imgio.PGMTruncatedError),
])
def test_read_errors_are_distinct(tmp_path, data, exc):
    p = write_bytes(tmp_path, "bad.pgm", data)
    with pytest.raises(exc):
        imgio.read_pgm(p)


def test_write_endpoints_and_rounding(tmp_path):
    p = tmp_path / "w.pgm"
    imgio.write_pgm(np.array([[0.0, 1.0, 0.5]]), p, 255)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n3 1\n255\n")
    assert raw[-3:] == bytes([0, 255, 128])


def test_write_clamps(tmp_path):
    p = tmp_path / "w.pgm"
    imgio.write_pgm(np.array([[-0.3, 1.7]]), p, 255)
    assert p.read_bytes()[-2:] == bytes([0, 255])


def test_write_rejects_odd_maxval(tmp_path):
    with pytest.raises(ValueError):
        imgio.write_pgm(np.zeros((1, 1)), tmp_path / "x.pgm", 1000)


def test_unwritable_path_raises(tmp_path):
    with pytest.raises(OSError):
        imgio.write_pgm(np.zeros((1, 1)), tmp_path / "missing" / "x.pgm")


@pytest.mark.parametrize("maxval", [255, 65535])
def test_round_trip_on_grid_is_exact(tmp_path, maxval):
    rng = np.random.default_rng(0)
    img = rng.integers(0, maxval + 1, size=(7, 5)) / maxval
    p = tmp_path / "r.pgm"
    imgio.write_pgm(img, p, maxval)
    back = imgio.read_pgm(p)
    np.testing.assert_array_equal(back, img)
    p2 = tmp_path / "r2.pgm"
    imgio.write_pgm(back, p2, maxval)
    assert p2.read_bytes() == p.read_bytes()


def test_16bit_round_trip_quantization_bound(tmp_path):
    img = np.random.default_rng(1).random((9, 11))
    p = tmp_path / "q.pgm"
    imgio.write_pgm(img, p, 65535)
    assert np.abs(imgio.read_pgm(p) - img).max() <= 1 / 65535


def test_mask_round_trip(tmp_path):
    m = (np.random.default_rng(2).random((6, 6)) > 0.7).astype(np.uint8)
    p = tmp_path / "m.pgm"
    imgio.write_mask(m, p)
    assert set(np.unique(np.frombuffer(p.read_bytes()[-36:], np.uint8))) <= {0, 255}
    np.testing.assert_array_equal(imgio.read_mask(p), m)


def test_normalize_examples():
    np.testing.assert_array_equal(imgio.normalize(np.array([[2.0, 4.0, 6.0]])), [[0, 0.5, 1]])
    np.testing.assert_array_equal(imgio.normalize(np.full((1, 3), 5.0)), [[0, 0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_normalize_range_and_idempotent(seed, h, w):
    img = np.random.default_rng(seed).normal(size=(h, w)) * 7 + 3
    n = imgio.normalize(img)
    if img.max() > img.min():
        assert n.min() == 0.0 and n.max() == 1.0
    np.testing.assert_array_equal(imgio.normalize(n), n)


def test_replicate_pad_examples():
    np.testing.assert_array_equal(imgio.replicate_pad(np.array([[7.0]]), 1, 1, 1, 1), np.full((3, 3), 7.0))
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(imgio.replicate_pad(a, 0, 0, 0, 0), a)
    np.testing.assert_array_equal(imgio.replicate_pad(a, 0, 0, 1, 0), [[1, 1, 2], [3, 3, 4]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), *[st.integers(0, 4)] * 4)
def test_pad_then_crop_is_identity(seed, t, b, l, r):
    img = np.random.default_rng(seed).random((5, 4))
    padded = imgio.replicate_pad(img, t, b, l, r)
    np.testing.assert_array_equal(imgio.crop(padded, t, b, l, r), img)


def test_image_validation():
    with pytest.raises(ValueError):
        imgio.as_image(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        imgio.as_mask(np.array([[0, 2]]))
