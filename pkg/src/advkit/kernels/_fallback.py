"""Vectorized numpy implementations of the hot kernels.

Array contracts (shared with the native backend):

* ``x``: (h, w, c_in) float64, ``w``: (c_out, c_in, kh, kw) float64 with odd
  kh/kw, ``b``: (c_out,) float64. Convolutions use same-padding with zeros.
* ``median_filter`` takes (h, w, c) uint8 and an odd ksize, pads by edge
  replication, and returns uint8 (odd window -> the median is exact).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    return np.einsum("ijckl,ockl->ijo", cols, w, optimize=True) + b


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of the same-padded convolution: returns (dx, dw, db)."""
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    dw = np.einsum("ijo,ijckl->ockl", dy, cols, optimize=True)
    db = dy.sum(axis=(0, 1))
    dyp = np.pad(dy, ((ph, ph), (pw, pw), (0, 0)))
    dycols = sliding_window_view(dyp, (kh, kw), axis=(0, 1))
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1])
    dx = np.einsum("ijokl,ockl->ijc", dycols, wflip, optimize=True)
    return dx, dw, db


def median_filter(img: np.ndarray, ksize: int) -> np.ndarray:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if ksize == 1:
        return img.copy()
    h, w, c = img.shape
    p = ksize // 2
    xp = np.pad(img, ((p, p), (p, p), (0, 0)), mode="edge")
    out = np.empty((h, w, c), dtype=np.uint8)
    # row blocks bound the materialized window buffer to ~8 MB
    block = max(1, 8_000_000 // (w * c * ksize * ksize))
    for y0 in range(0, h, block):
        y1 = min(h, y0 + block)
        win = sliding_window_view(xp[y0 : y1 + 2 * p], (ksize, ksize), axis=(0, 1))
        med = np.median(win.reshape(y1 - y0, w, c, ksize * ksize), axis=-1)
        out[y0:y1] = med.astype(np.uint8)
    return out
