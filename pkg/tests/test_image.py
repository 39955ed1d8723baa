import math

import numpy as np
import pytest

from advkit import png as pnglib
from advkit.errors import ParseError, ShapeError, UnsupportedFormatError, WriteError
from advkit.image import (
    Image,
    QualityMetrics,
    encode_ppm,
    load_image,
    luma,
    psnr,
    save_image,
    ssim,
)
from conftest import natural_image, random_image

# ------------------------------------------------------------ brute oracles


def psnr_oracle(a: Image, b: Image) -> float:
    """Literal per-pixel transcription of 10*log10(255^2/MSE)."""
    total = 0.0
    n = 0
    for y in range(a.height):
        for x in range(a.width):
            for c in range(3):
                d = float(a.array[y, x, c]) - float(b.array[y, x, c])
                total += d * d
                n += 1
    mse = total / n
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def ssim_oracle(a: Image, b: Image) -> float:
    """Windowwise transcription of the SSIM definition on luma."""
    x = luma(a)
    y = luma(b)
    n = 11
    sigma = 1.5
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    w = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            di, dj = i - 5, j - 5
            w[i, j] = math.exp(-(di * di + dj * dj) / (2 * sigma * sigma))
    w /= w.sum()
    vals = []
    for wy in range(a.height - n + 1):
        for wx in range(a.width - n + 1):
            px = x[wy : wy + n, wx : wx + n]
            py = y[wy : wy + n, wx : wx + n]
            mu1 = (w * px).sum()
            mu2 = (w * py).sum()
            s1 = (w * (px - mu1) ** 2).sum()
            s2 = (w * (py - mu2) ** 2).sum()
            s12 = (w * (px - mu1) * (py - mu2)).sum()
            vals.append(
                ((2 * mu1 * mu2 + c1) * (2 * s12 + c2))
                / ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2))
            )
    return float(np.mean(vals))


# ------------------------------------------------------------------- Image


def test_image_validation():
    with pytest.raises(ShapeError):
        Image(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ShapeError):
        Image(np.zeros((0, 4, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), 300.0))


def test_image_is_read_only():
    img = random_image(0, size=4)
    with pytest.raises(ValueError):
        img.array[0, 0, 0] = 5


def test_from_flat_and_equality():
    img = Image.from_flat(2, 1, bytes([0, 0, 0, 255, 255, 255]))
    assert (img.width, img.height) == (2, 1)
    assert img == Image.from_flat(2, 1, bytes([0, 0, 0, 255, 255, 255]))
    assert img != Image.from_flat(2, 1, bytes([0, 0, 0, 255, 255, 254]))
    with pytest.raises(ShapeError):
        Image.from_flat(2, 2, bytes(6))


# --------------------------------------------------------------------- PPM


def test_ppm_header_bytes_spec():
    img = Image.from_flat(2, 1, bytes([0, 0, 0, 255, 255, 255]))
    data = encode_ppm(img)
    assert data == b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255])


def test_ppm_parse_example():
    img = Image.from_flat(2, 1, bytes([0, 0, 0, 255, 255, 255]))
    assert list(img.array.reshape(-1)) == [0, 0, 0, 255, 255, 255]


def test_ppm_single_black_pixel(tmp_path):
    path = tmp_path / "one.ppm"
    path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    img = load_image(path)
    assert (img.width, img.height) == (1, 1)
    assert img.array.sum() == 0


def test_ppm_size_64(tmp_path):
    img = random_image(1, size=64)
    path = tmp_path / "r.ppm"
    save_image(img, path, format="ppm")
    header = b"P6\n64 64\n255\n"
    assert path.stat().st_size == len(header) + 64 * 64 * 3


def test_ppm_round_trip_bytes(tmp_path):
    # byte-compare oracle over 20 random images
    for seed in range(20):
        img = random_image(seed, size=9)
        path = tmp_path / f"rt{seed}.ppm"
        save_image(img, path, format="ppm")
        reloaded = load_image(path)
        assert reloaded == img
        path2 = tmp_path / f"rt{seed}b.ppm"
        save_image(reloaded, path2, format="ppm")
        assert path.read_bytes() == path2.read_bytes()


def test_ppm_errors(tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n2 1\n255\n\x00\x00")
    with pytest.raises(ParseError):
        load_image(bad)
    bad.write_bytes(b"P6\n2 1\n65535\n" + bytes(12))
    with pytest.raises(UnsupportedFormatError):
        load_image(bad)
    bad.write_bytes(b"P3\n2 1\n255\n0 0 0 0 0 0")
    with pytest.raises(UnsupportedFormatError):
        load_image(bad)


def test_write_error_on_missing_directory(tmp_path):
    img = random_image(0, size=2)
    with pytest.raises(WriteError):
        save_image(img, tmp_path / "no" / "such" / "dir.ppm", format="ppm")


# --------------------------------------------------------------------- PNG


def test_png_round_trip(tmp_path):
    for seed in range(5):
        img = random_image(seed, size=13)
        path = tmp_path / f"x{seed}.png"
        save_image(img, path, format="png")
        assert load_image(path) == img


def test_png_gray_and_alpha_expansion():
    gray = np.arange(16, dtype=np.uint8).reshape(4, 4)
    data = _encode_png_raw(gray[..., None], color_type=0)
    out = pnglib.decode(data)
    assert np.array_equal(out[:, :, 0], gray)
    assert np.array_equal(out[:, :, 1], gray)

    rgba = np.random.default_rng(0).integers(0, 256, size=(4, 4, 4), dtype=np.uint8)
    out = pnglib.decode(_encode_png_raw(rgba, color_type=6))
    assert np.array_equal(out, rgba[:, :, :3])


def test_png_filters_roundtrip_against_pil(tmp_path):
    pil = pytest.importorskip("PIL.Image")
    img = random_image(11, size=24)
    # PIL picks adaptive row filters, exercising Sub/Up/Average/Paeth
    path = tmp_path / "pil.png"
    pil.fromarray(img.array).save(path, optimize=True)
    assert load_image(path) == img


def test_png_rejects_16_bit():
    gray = np.zeros((2, 2, 1), dtype=np.uint8)
    data = bytearray(_encode_png_raw(gray, color_type=0))
    # corrupt the depth byte inside IHDR and fix its CRC
    import struct
    import zlib

    ihdr_body = bytearray(data[16 : 16 + 13])
    ihdr_body[8] = 16
    crc = zlib.crc32(b"IHDR" + bytes(ihdr_body)) & 0xFFFFFFFF
    data[16 : 16 + 13] = ihdr_body
    data[29:33] = struct.pack(">I", crc)
    with pytest.raises(UnsupportedFormatError):
        pnglib.decode(bytes(data))


def test_png_bad_crc():
    img = random_image(0, size=4)
    data = bytearray(pnglib.encode(img.array))
    data[-5] ^= 0xFF  # flip a bit inside IEND's CRC
    with pytest.raises(ParseError):
        pnglib.decode(bytes(data))


def _encode_png_raw(arr: np.ndarray, color_type: int) -> bytes:
    import struct
    import zlib

    h, w = arr.shape[:2]
    raw = b"".join(b"\x00" + arr[i].tobytes() for i in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)

    def chunk(ctype, body):
        return (
            struct.pack(">I", len(body))
            + ctype
            + body
            + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
        )

    return (
        pnglib.SIGNATURE
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


# ----------------------------------------------------------------- metrics


def test_psnr_identical_is_inf():
    img = random_image(2, size=8)
    assert math.isinf(psnr(img, img))


def test_psnr_black_vs_white_is_zero():
    black = Image(np.zeros((8, 8, 3), dtype=np.uint8))
    white = Image(np.full((8, 8, 3), 255, dtype=np.uint8))
    assert psnr(black, white) == 0.0


def test_psnr_matches_oracle():
    a = random_image(3, size=8)
    b = random_image(4, size=8)
    got = psnr(a, b)
    want = psnr_oracle(a, b)
    assert abs(got - want) <= 1e-9 * abs(want)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(random_image(0, size=8), random_image(0, size=9))


def test_ssim_self_is_exactly_one():
    img = random_image(5, size=16)
    assert ssim(img, img) == 1.0


def test_ssim_uniform_offset_below_one():
    a = Image(np.full((16, 16, 3), 0, dtype=np.uint8))
    b = Image(np.full((16, 16, 3), 255, dtype=np.uint8))
    assert ssim(a, b) < 1.0


def test_ssim_matches_oracle():
    a = random_image(6, size=32)
    b = random_image(7, size=32)
    assert abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-6


def test_ssim_window_too_small():
    with pytest.raises(ShapeError):
        ssim(random_image(0, size=8), random_image(1, size=8))


def test_metrics_symmetry():
    a = random_image(8, size=16)
    b = random_image(9, size=16)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_range():
    for seed in range(6):
        a = random_image(20 + seed, size=12)
        b = random_image(40 + seed, size=12)
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0


def test_psnr_monotone_in_noise_amplitude():
    base = natural_image(1, size=32)
    arr = base.to_float()
    means = []
    for amp in (4, 8, 16, 32):
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            noisy = np.clip(arr + rng.normal(0, amp, arr.shape), 0, 255)
            vals.append(psnr(base, Image(np.floor(noisy + 0.5).astype(np.uint8))))
        means.append(np.mean(vals))
    assert all(means[i] > means[i + 1] for i in range(len(means) - 1))


def test_quality_metrics_json_round_trip():
    qm = QualityMetrics(psnr_db=math.inf, ssim=1.0)
    assert QualityMetrics.from_json(qm.to_json()) == qm
    qm2 = QualityMetrics(psnr_db=31.5, ssim=0.77)
    assert QualityMetrics.from_json(qm2.to_json()) == qm2
