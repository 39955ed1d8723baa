"""Minimal PNG codec for the 8-bit subset the toolkit exchanges.

Reads color types 0 (gray), 2 (RGB), 4 (gray+alpha), 6 (RGBA) at bit depth
8, non-interlaced; anything else raises. Gray is expanded to RGB, alpha is
discarded. Writes 8-bit RGB, filter 0 rows, single IDAT chunk.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from advkit.errors import ParseError, UnsupportedFormatError

SIGNATURE = b"\x89PNG\r\n\x1a\n"

_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def encode(array: np.ndarray) -> bytes:
    """Encode an (h, w, 3) uint8 array as an RGB PNG."""
    h, w = array.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + array[i].tobytes() for i in range(h))
    out = [SIGNATURE, _chunk(b"IHDR", ihdr), _chunk(b"IDAT", zlib.compress(raw)), _chunk(b"IEND", b"")]
    return b"".join(out)


def decode(data: bytes) -> np.ndarray:
    """Decode a PNG into an (h, w, 3) uint8 array."""
    if data[:8] != SIGNATURE:
        raise ParseError("not a PNG file", offset=0)
    pos = 8
    ihdr = None
    idat = []
    seen_iend = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise ParseError("truncated chunk header", offset=pos)
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body_start = pos + 8
        crc_start = body_start + length
        if crc_start + 4 > len(data):
            raise ParseError("truncated chunk body", offset=pos)
        body = data[body_start:crc_start]
        (crc,) = struct.unpack(">I", data[crc_start : crc_start + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise ParseError(f"bad CRC in {ctype.decode('latin1')} chunk", offset=crc_start)
        if ctype == b"IHDR":
            ihdr = body
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            seen_iend = True
            break
        # ancillary chunks (and PLTE on truecolor) are skipped
        pos = crc_start + 4
    if ihdr is None:
        raise ParseError("missing IHDR", offset=8)
    if not seen_iend:
        raise ParseError("missing IEND", offset=len(data))
    if not idat:
        raise ParseError("missing IDAT", offset=len(data))

    w, h, depth, color, comp, filt, interlace = struct.unpack(">IIBBBBB", ihdr)
    if depth != 8:
        raise UnsupportedFormatError(f"bit depth {depth} not supported (only 8)")
    if color not in _CHANNELS:
        raise UnsupportedFormatError(f"color type {color} not supported")
    if interlace != 0:
        raise UnsupportedFormatError("interlaced PNG not supported")
    if comp != 0 or filt != 0:
        raise UnsupportedFormatError("nonstandard compression/filter method")
    if w < 1 or h < 1:
        raise ParseError("zero image dimension", offset=16)

    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ParseError(f"IDAT inflate failed: {exc}", offset=33) from exc

    nch = _CHANNELS[color]
    stride = w * nch
    if len(raw) != h * (stride + 1):
        raise ParseError(
            f"decompressed size {len(raw)} != expected {h * (stride + 1)}", offset=33
        )
    pixels = _unfilter(raw, h, stride, nch)
    img = pixels.reshape(h, w, nch)
    if color == 0:
        img = np.repeat(img, 3, axis=2)
    elif color == 4:
        img = np.repeat(img[:, :, :1], 3, axis=2)
    elif color == 6:
        img = img[:, :, :3]
    return np.ascontiguousarray(img)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(
        ">I", zlib.crc32(ctype + body) & 0xFFFFFFFF
    )


def _unfilter(raw: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(h, stride + 1)
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(h):
        ftype = int(rows[y, 0])
        cur = rows[y, 1:].copy()
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub: cumulative per channel lane
            cur = _sub_unfilter(cur, bpp)
        elif ftype == 2:  # Up
            cur = (cur.astype(np.uint16) + prev).astype(np.uint8)
        elif ftype == 3:  # Average
            cur = _avg_unfilter(cur, prev, bpp)
        elif ftype == 4:  # Paeth
            cur = _paeth_unfilter(cur, prev, bpp)
        else:
            raise ParseError(f"unknown row filter {ftype}", offset=0)
        out[y] = cur
        prev = out[y]
    return out


def _sub_unfilter(cur: np.ndarray, bpp: int) -> np.ndarray:
    out = cur.copy()
    for k in range(bpp):
        lane = np.cumsum(out[k::bpp], dtype=np.uint64) & 0xFF
        out[k::bpp] = lane.astype(np.uint8)
    return out


def _avg_unfilter(cur: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    out = np.zeros_like(cur)
    for i in range(len(cur)):
        left = int(out[i - bpp]) if i >= bpp else 0
        out[i] = (int(cur[i]) + (left + int(prev[i])) // 2) & 0xFF
    return out


def _paeth_unfilter(cur: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    out = np.zeros_like(cur)
    for i in range(len(cur)):
        left = int(out[i - bpp]) if i >= bpp else 0
        up = int(prev[i])
        upleft = int(prev[i - bpp]) if i >= bpp else 0
        out[i] = (int(cur[i]) + _paeth_predict(left, up, upleft)) & 0xFF
    return out


def _paeth_predict(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c
