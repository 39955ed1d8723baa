"""Hot numeric kernels with a compiled core and a numpy fallback.

The Cython extension (``advkit.kernels._native``) implements the three
loops that dominate runtime: same-padding 3x3-style convolution forward and
backward, and the square median filter. When the extension is absent (pure
source checkout, or a build without a C toolchain) the numpy implementation
in ``_fallback`` is selected instead. Both backends satisfy the same
contracts; ``ADVKIT_BACKEND=fallback|native`` forces a choice.

``benchmarks/bench_kernels.py`` times one against the other.
"""

import os

from advkit.kernels import _fallback

_forced = os.environ.get("ADVKIT_BACKEND")

if _forced == "fallback":
    _impl = _fallback
    BACKEND = "fallback"
else:
    try:
        from advkit.kernels import _native as _impl

        BACKEND = "native"
    except ImportError:
        if _forced == "native":
            raise
        _impl = _fallback
        BACKEND = "fallback"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
median_filter = _impl.median_filter

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "median_filter"]
