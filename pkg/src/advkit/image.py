"""Canonical image representation, file I/O, and quality metrics.

An :class:`Image` is an immutable H x W x 3 grid of 8-bit RGB intensities.
PSNR and SSIM are the similarity measures the rest of the toolkit uses to
decide whether a perturbed image is still acceptably close to its original.
All metric arithmetic runs in float64 regardless of the 8-bit storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from advkit import png as _png
from advkit.errors import ParseError, ShapeError, UnsupportedFormatError, WriteError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


class Image:
    """Immutable 8-bit RGB image.

    Wraps an (height, width, 3) uint8 array. The buffer is copied on
    construction and marked read-only, so Image values can be shared across
    threads freely.
    """

    __slots__ = ("_array",)

    def __init__(self, array: np.ndarray):
        arr = np.asarray(array)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected (h, w, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
                if arr.min() < 0 or arr.max() > 255:
                    raise ValueError("pixel values outside [0, 255]")
                arr = np.round(arr).astype(np.uint8) if np.issubdtype(arr.dtype, np.floating) else arr.astype(np.uint8)
            else:
                raise TypeError(f"unsupported dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        """Read-only (h, w, 3) uint8 view of the pixels."""
        return self._array

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, pixels) -> "Image":
        """Build from a row-major flat RGB byte sequence of length w*h*3."""
        buf = np.frombuffer(bytes(pixels), dtype=np.uint8) if not isinstance(pixels, np.ndarray) else pixels
        if buf.size != width * height * 3:
            raise ShapeError(f"expected {width * height * 3} bytes, got {buf.size}")
        return cls(buf.reshape(height, width, 3))

    def to_float(self) -> np.ndarray:
        """Writable float64 copy in [0, 255]."""
        return self._array.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self._array.shape == other._array.shape and bool(
            np.array_equal(self._array, other._array)
        )

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq

    __hash__ = None

    def __repr__(self) -> str:
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True)
class QualityMetrics:
    """PSNR (dB) and SSIM for one (clean, perturbed) pair.

    ``psnr_db`` is ``math.inf`` when the pair is identical (zero MSE); that
    sentinel serializes to JSON ``null``.
    """

    psnr_db: float
    ssim: float

    def to_json(self) -> dict:
        return {
            "psnr_db": None if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QualityMetrics":
        p = obj["psnr_db"]
        return cls(psnr_db=math.inf if p is None else float(p), ssim=float(obj["ssim"]))


# ---------------------------------------------------------------- file I/O


def load_image(path, format: str | None = None) -> Image:
    """Load a PPM (P6, maxval 255) or PNG file.

    Format is sniffed from the file magic unless given explicitly.
    Grayscale/alpha PNG inputs are expanded to RGB (alpha discarded).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if format is None:
        if data[:8] == _png.SIGNATURE:
            format = "png"
        elif data[:2] == b"P6":
            format = "ppm"
        else:
            raise UnsupportedFormatError(f"unrecognized image format in {path}")
    if format == "ppm":
        return _decode_ppm(data)
    if format == "png":
        return Image(_png.decode(data))
    raise UnsupportedFormatError(f"unknown format {format!r}")


def save_image(img: Image, path, format: str | None = None) -> None:
    """Write ``img`` to ``path`` as PPM or PNG (inferred from extension)."""
    if format is None:
        name = str(path).lower()
        format = "png" if name.endswith(".png") else "ppm"
    if format == "ppm":
        payload = encode_ppm(img)
    elif format == "png":
        payload = _png.encode(img.array)
    else:
        raise UnsupportedFormatError(f"unknown format {format!r}")
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def encode_ppm(img: Image) -> bytes:
    """Canonical binary PPM: ``P6\\n<w> <h>\\n255\\n`` + raw RGB bytes."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.array.tobytes()


def _decode_ppm(data: bytes) -> Image:
    if data[:2] != b"P6":
        raise ParseError("not a binary PPM (missing P6 magic)", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PPM header", offset=start)
        token = data[start:pos]
        if not token.isdigit():
            raise ParseError(f"non-numeric header token {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(data):
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1  # exactly one whitespace byte separates header from payload
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} not supported (only 255)")
    if width < 1 or height < 1:
        raise ParseError("zero image dimension", offset=2)
    need = width * height * 3
    payload = data[pos:]
    if len(payload) != need:
        raise ParseError(
            f"payload is {len(payload)} bytes, expected {need}", offset=pos
        )
    return Image.from_flat(width, height, payload)


# ---------------------------------------------------------------- metrics


def luma(img: Image) -> np.ndarray:
    """Rec.601 luma plane in float64 (not rounded)."""
    a = img.to_float()
    return 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB over all channels.

    Returns ``math.inf`` for identical images (the distinguished zero-MSE
    value); otherwise ``10*log10(255^2 / MSE)``.
    """
    _require_same_shape(a, b)
    diff = a.to_float() - b.to_float()
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_taps(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (n - 1) / 2.0
    x = np.arange(n, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a normalized 1-D kernel."""
    rows = sliding_window_view(plane, len(taps), axis=0) @ taps
    return sliding_window_view(rows, len(taps), axis=1) @ taps


def ssim(a: Image, b: Image) -> float:
    """Mean local SSIM over an 11x11 Gaussian window (sigma 1.5) on luma.

    Constants C1=(0.01*255)^2, C2=(0.03*255)^2. Both dimensions must be at
    least the window size.
    """
    _require_same_shape(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ShapeError(
            f"image {a.width}x{a.height} smaller than SSIM window {SSIM_WINDOW}"
        )
    x = luma(a)
    y = luma(b)
    taps = _gaussian_taps()
    mu1 = _filter_valid(x, taps)
    mu2 = _filter_valid(y, taps)
    s1 = _filter_valid(x * x, taps) - mu1 * mu1
    s2 = _filter_valid(y * y, taps) - mu2 * mu2
    s12 = _filter_valid(x * y, taps) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s1 + s2 + SSIM_C2)
    local = num / den
    # true SSIM lies in [-1, 1]; clip shields the invariant from ulp spill
    return float(np.mean(np.clip(local, -1.0, 1.0)))


def measure(a: Image, b: Image) -> QualityMetrics:
    """Convenience: PSNR and SSIM for one pair."""
    return QualityMetrics(psnr_db=psnr(a, b), ssim=ssim(a, b))


def _require_same_shape(a: Image, b: Image) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
