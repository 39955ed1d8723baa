"""Spatial corruption operators: parameterized, seeded, deterministic.

Every method maps an image to an equally sized image, clamps to [0, 255],
and is bit-reproducible from (method, severity or raw_params, seed). The
severity tables below are the published parameter schedule; raw_params
entries supersede the table entry of the same name.

Severity schedule (frozen by golden tests):

========== ============================ =================================
method      parameter                    severity 1..5
========== ============================ =================================
gaussian_noise   sigma                   8, 16, 24, 32, 40
uniform_noise    amplitude               8, 16, 24, 32, 40
salt_pepper      prob                    0.01, 0.03, 0.06, 0.10, 0.15
brightness       delta                   16, 32, 48, 64, 80
contrast         shift (factor = 1-s)    0.15, 0.25, 0.35, 0.5, 0.65
rotation         angle (sign seeded)     30, 45, 90, 135, 180
gaussian_blur    ksize                   5, 11, 17, 23, 29
median_blur      ksize                   5, 9, 11, 15, 19
average_blur     ksize                   5, 11, 17, 23, 29
shake            length (angle seeded)   5, 7, 11, 15, 19
grayscale        mix                     1 (all severities)
monochrome_*     mix                     1 (all severities)
binarization     threshold 128, mix 1    (all severities)
occlusion        fraction                0.05, 0.10, 0.15, 0.20, 0.25
rain             density                 .001, .003, .006, .012, .020
snow             density                 .005, .010, .018, .028, .040
frost            alpha (cell 8)          0.15, 0.25, 0.35, 0.45, 0.55
fog              t (plateau 220)         0.15, 0.30, 0.45, 0.60, 0.75
flare            amplitude / radius      60/0.3, 90/0.4, 120/0.5,
                                         150/0.6, 180/0.7
========== ============================ =================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from advkit import kernels
from advkit.errors import InvalidSpecError
from advkit.image import Image
from advkit.rng import SplitMix64, derive_seed

SEVERITY_MIN = 1
SEVERITY_MAX = 5


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption invocation: method + severity/raw_params + seed."""

    method: str
    severity: int = 1
    seed: int = 0
    raw_params: dict | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidSpecError(f"unknown corruption method {self.method!r}")
        if not SEVERITY_MIN <= self.severity <= SEVERITY_MAX:
            raise InvalidSpecError(f"severity {self.severity} outside [1, 5]")

    def params(self) -> dict:
        """Effective parameters: severity table overridden by raw_params."""
        base = dict(METHODS[self.method].severity_table[self.severity - 1])
        if self.raw_params:
            info = METHODS[self.method]
            for key, value in self.raw_params.items():
                if key not in info.ranges:
                    raise InvalidSpecError(
                        f"{self.method} has no parameter {key!r}"
                    )
                lo, hi = info.ranges[key]
                if not (lo <= value <= hi):
                    raise InvalidSpecError(
                        f"{self.method}.{key}={value} outside [{lo}, {hi}]"
                    )
                base[key] = value
        for key in ("ksize", "length"):
            if key in base:
                v = base[key]
                if int(v) != v or int(v) % 2 == 0:
                    raise InvalidSpecError(
                        f"{self.method}.{key} must be an odd integer, got {v}"
                    )
        return base

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "severity": self.severity,
            "seed": self.seed,
            "raw_params": self.raw_params,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorruptionSpec":
        return cls(
            method=obj["method"],
            severity=int(obj.get("severity", 1)),
            seed=int(obj.get("seed", 0)),
            raw_params=obj.get("raw_params"),
        )


@dataclass(frozen=True)
class MethodInfo:
    name: str
    category: str
    severity_table: tuple
    ranges: dict
    zero_params: dict
    calibrate_param: str | None = None
    calibrate_range: tuple | None = None


def list_methods() -> list[MethodInfo]:
    """All supported corruption methods with category and severity range."""
    return [METHODS[name] for name in sorted(METHODS)]


def severity_params(method: str, severity: int) -> dict:
    """The documented parameter vector for (method, severity)."""
    if method not in METHODS:
        raise InvalidSpecError(f"unknown corruption method {method!r}")
    if not SEVERITY_MIN <= severity <= SEVERITY_MAX:
        raise InvalidSpecError(f"severity {severity} outside [1, 5]")
    return dict(METHODS[method].severity_table[severity - 1])


def apply_corruption(img: Image, spec: CorruptionSpec) -> Image:
    """Apply ``spec`` to ``img``; output has identical dimensions."""
    params = spec.params()
    rng = SplitMix64(derive_seed(spec.seed, "corruption", spec.method))
    seeded_sign = spec.raw_params is None or "angle" not in (spec.raw_params or {})
    fn = _APPLY[spec.method]
    out = fn(img.array, params, rng, seeded_sign)
    return Image(_quantize(out))


def _quantize(arr: np.ndarray) -> np.ndarray:
    """Round half-up and clamp to the 8-bit range."""
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.floor(arr + 0.5), 0.0, 255.0).astype(np.uint8)


# ------------------------------------------------------------- primitives


def _sep_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable correlation with replicate padding, per channel."""
    k = len(taps)
    if k == 1:
        return x * taps[0]
    p = k // 2
    xp = np.pad(x, ((p, p), (0, 0), (0, 0)), mode="edge")
    x1 = np.einsum("ijck,k->ijc", sliding_window_view(xp, k, axis=0), taps)
    xp = np.pad(x1, ((0, 0), (p, p), (0, 0)), mode="edge")
    return np.einsum("ijck,k->ijc", sliding_window_view(xp, k, axis=1), taps)


def _conv2d_replicate(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    k = kern.shape[0]
    if k == 1:
        return x * kern[0, 0]
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)), mode="edge")
    win = sliding_window_view(xp, (k, k), axis=(0, 1))
    return np.einsum("ijckl,kl->ijc", win, kern)


def _gaussian_taps(ksize: int) -> np.ndarray:
    sigma = (ksize - 1) / 6.0 if ksize > 1 else 1.0
    half = (ksize - 1) / 2.0
    x = np.arange(ksize, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _luma_f(arr: np.ndarray) -> np.ndarray:
    a = arr.astype(np.float64)
    return 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]


def _value_noise(h: int, w: int, cell: float, rng: SplitMix64) -> np.ndarray:
    """Smooth seeded noise field in [0, 1] on a bilinear lattice."""
    gh = int(math.ceil(h / cell)) + 2
    gw = int(math.ceil(w / cell)) + 2
    grid = rng.uniforms(gh * gw).reshape(gh, gw)
    ys = np.arange(h, dtype=np.float64) / cell
    xs = np.arange(w, dtype=np.float64) / cell
    yi = np.floor(ys).astype(np.int64)
    xi = np.floor(xs).astype(np.int64)
    ty = ys - yi
    tx = xs - xi
    # smoothstep fade on the interpolation weights
    ty = ty * ty * (3.0 - 2.0 * ty)
    tx = tx * tx * (3.0 - 2.0 * tx)
    y0 = grid[yi][:, xi]
    y1 = grid[yi + 1][:, xi]
    y2 = grid[yi][:, xi + 1]
    y3 = grid[yi + 1][:, xi + 1]
    top = y0 + (y2 - y0) * tx[None, :]
    bot = y1 + (y3 - y1) * tx[None, :]
    return top + (bot - top) * ty[:, None]


def _rotate(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the center, bilinear, black fill, original dims kept."""
    h, w = arr.shape[:2]
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    sx = c * dx + s * dy + cx
    sy = -s * dx + c * dy + cy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((h, w, 3), dtype=np.float64)
    src = arr.astype(np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        yy = y0 + oy
        xx = x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        ycl = np.clip(yy, 0, h - 1)
        xcl = np.clip(xx, 0, w - 1)
        out += (wgt * valid)[:, :, None] * src[ycl, xcl]
    return out


# ---------------------------------------------------------------- methods


def _gaussian_noise(arr, params, rng, _):
    sigma = params["sigma"]
    noise = rng.normals(arr.size).reshape(arr.shape)
    return arr.astype(np.float64) + sigma * noise


def _uniform_noise(arr, params, rng, _):
    amp = params["amplitude"]
    noise = rng.uniforms(arr.size).reshape(arr.shape) * 2.0 - 1.0
    return arr.astype(np.float64) + amp * noise


def _salt_pepper(arr, params, rng, _):
    prob = params["prob"]
    h, w = arr.shape[:2]
    u = rng.uniforms(h * w).reshape(h, w)
    salt = rng.uniforms(h * w).reshape(h, w) < 0.5
    out = arr.astype(np.float64).copy()
    flip = u < prob
    out[flip & salt] = 255.0
    out[flip & ~salt] = 0.0
    return out


def _brightness(arr, params, rng, _):
    return arr.astype(np.float64) + params["delta"]


def _contrast(arr, params, rng, _):
    factor = 1.0 - params["shift"]
    return (arr.astype(np.float64) - 128.0) * factor + 128.0


def _rotation(arr, params, rng, seeded_sign):
    angle = params["angle"]
    if seeded_sign:
        angle = angle if rng.bit() == 0 else -angle
    return _rotate(arr, angle)


def _gaussian_blur(arr, params, rng, _):
    k = int(params["ksize"])
    return _sep_filter(arr.astype(np.float64), _gaussian_taps(k))


def _median_blur(arr, params, rng, _):
    return kernels.median_filter(arr, int(params["ksize"]))


def _average_blur(arr, params, rng, _):
    k = int(params["ksize"])
    taps = np.full(k, 1.0 / k)
    return _sep_filter(arr.astype(np.float64), taps)


def _shake(arr, params, rng, _):
    length = int(params["length"])
    if length == 1:
        return arr.astype(np.float64)
    angle = rng.uniform() * math.pi
    kern = np.zeros((length, length), dtype=np.float64)
    c = (length - 1) / 2.0
    for t in np.linspace(-c, c, length):
        px = int(math.floor(c + t * math.cos(angle) + 0.5))
        py = int(math.floor(c + t * math.sin(angle) + 0.5))
        kern[py, px] += 1.0
    kern /= kern.sum()
    return _conv2d_replicate(arr.astype(np.float64), kern)


def _grayscale(arr, params, rng, _):
    mix = params["mix"]
    gray = _luma_f(arr)[:, :, None].repeat(3, axis=2)
    return (1.0 - mix) * arr.astype(np.float64) + mix * gray


def _monochrome(channel):
    def fn(arr, params, rng, _):
        mix = params["mix"]
        mono = np.zeros(arr.shape, dtype=np.float64)
        mono[:, :, channel] = arr[:, :, channel]
        return (1.0 - mix) * arr.astype(np.float64) + mix * mono

    return fn


def _binarization(arr, params, rng, _):
    mix = params["mix"]
    bw = np.where(_luma_f(arr) >= params["threshold"], 255.0, 0.0)
    bw = bw[:, :, None].repeat(3, axis=2)
    return (1.0 - mix) * arr.astype(np.float64) + mix * bw


def _occlusion(arr, params, rng, _):
    frac = params["fraction"]
    h, w = arr.shape[:2]
    out = arr.astype(np.float64).copy()
    area = frac * h * w
    if area < 1.0:
        return out
    aspect = math.exp((rng.uniform() * 2.0 - 1.0) * math.log(2.0))
    rw = min(w, max(1, int(math.floor(math.sqrt(area * aspect) + 0.5))))
    rh = min(h, max(1, int(math.floor(area / rw + 0.5))))
    x0 = rng.randint(w - rw + 1)
    y0 = rng.randint(h - rh + 1)
    out[y0 : y0 + rh, x0 : x0 + rw] = 0.0
    return out


def _rain(arr, params, rng, _):
    density = params["density"]
    length = int(params.get("length", 7))
    alpha = params.get("alpha", 0.7)
    h, w = arr.shape[:2]
    count = int(math.floor(density * h * w + 0.5))
    out = arr.astype(np.float64).copy()
    src = arr.astype(np.float64)
    color = np.array([200.0, 205.0, 225.0])
    for _i in range(count):
        x0 = rng.randint(w)
        y0 = rng.randint(h)
        slant = (rng.uniform() - 0.5) * 0.6
        for s in range(length):
            xx = int(math.floor(x0 + s * math.sin(slant) + 0.5))
            yy = y0 + s
            if 0 <= xx < w and 0 <= yy < h:
                out[yy, xx] = (1.0 - alpha) * src[yy, xx] + alpha * color
    return out


def _snow(arr, params, rng, _):
    density = params["density"]
    h, w = arr.shape[:2]
    count = int(math.floor(density * h * w + 0.5))
    out = arr.astype(np.float64).copy()
    src = arr.astype(np.float64)
    if count == 0:
        return out
    u = rng.uniforms(2 * count)
    xs = np.minimum((u[0::2] * w).astype(np.int64), w - 1)
    ys = np.minimum((u[1::2] * h).astype(np.int64), h - 1)
    alpha = 0.9
    # blend against the source so overlapping flakes stay deterministic
    for dy, dx in ((0, 0), (0, 1), (1, 0)):
        yy = np.clip(ys + dy, 0, h - 1)
        xx = np.clip(xs + dx, 0, w - 1)
        out[yy, xx] = (1.0 - alpha) * src[yy, xx] + alpha * 250.0
    return out


def _frost(arr, params, rng, _):
    alpha = params["alpha"]
    cell = params.get("cell", 8.0)
    h, w = arr.shape[:2]
    fld = _value_noise(h, w, cell, rng)
    weight = (alpha * fld)[:, :, None]
    tint = np.array([230.0, 240.0, 250.0])
    return (1.0 - weight) * arr.astype(np.float64) + weight * tint


def _fog(arr, params, rng, _):
    t = params["t"]
    plateau = params.get("plateau", 220.0)
    return (1.0 - t) * arr.astype(np.float64) + t * plateau


def _flare(arr, params, rng, _):
    amp = params["amplitude"]
    rfrac = params.get("radius_frac", 0.5)
    h, w = arr.shape[:2]
    cx = w * (0.2 + 0.6 * rng.uniform())
    cy = h * (0.2 + 0.6 * rng.uniform())
    radius = max(1.0, rfrac * max(h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    glow = np.maximum(0.0, 1.0 - d / radius) ** 2
    warm = np.array([1.0, 0.97, 0.9])
    return arr.astype(np.float64) + amp * glow[:, :, None] * warm


_APPLY = {
    "gaussian_noise": _gaussian_noise,
    "uniform_noise": _uniform_noise,
    "salt_pepper": _salt_pepper,
    "brightness": _brightness,
    "contrast": _contrast,
    "rotation": _rotation,
    "gaussian_blur": _gaussian_blur,
    "median_blur": _median_blur,
    "average_blur": _average_blur,
    "grayscale": _grayscale,
    "monochrome_red": _monochrome(0),
    "monochrome_green": _monochrome(1),
    "monochrome_blue": _monochrome(2),
    "binarization": _binarization,
    "occlusion": _occlusion,
    "rain": _rain,
    "snow": _snow,
    "frost": _frost,
    "fog": _fog,
    "flare": _flare,
    "shake": _shake,
}


def _tbl(param, values, **extra):
    return tuple({param: v, **extra} for v in values)


METHODS = {
    "gaussian_noise": MethodInfo(
        "gaussian_noise", "noise", _tbl("sigma", (8, 16, 24, 32, 40)),
        {"sigma": (0.0, 100.0)}, {"sigma": 0.0}, "sigma", (0.0, 100.0),
    ),
    "uniform_noise": MethodInfo(
        "uniform_noise", "noise", _tbl("amplitude", (8, 16, 24, 32, 40)),
        {"amplitude": (0.0, 255.0)}, {"amplitude": 0.0}, "amplitude", (0.0, 255.0),
    ),
    "salt_pepper": MethodInfo(
        "salt_pepper", "noise", _tbl("prob", (0.01, 0.03, 0.06, 0.10, 0.15)),
        {"prob": (0.0, 1.0)}, {"prob": 0.0}, "prob", (0.0, 1.0),
    ),
    "brightness": MethodInfo(
        "brightness", "photometric", _tbl("delta", (16, 32, 48, 64, 80)),
        {"delta": (-255.0, 255.0)}, {"delta": 0.0}, "delta", (0.0, 255.0),
    ),
    "contrast": MethodInfo(
        "contrast", "photometric", _tbl("shift", (0.15, 0.25, 0.35, 0.5, 0.65)),
        {"shift": (0.0, 1.0)}, {"shift": 0.0}, "shift", (0.0, 1.0),
    ),
    "rotation": MethodInfo(
        "rotation", "geometric", _tbl("angle", (30, 45, 90, 135, 180)),
        {"angle": (-360.0, 360.0)}, {"angle": 0.0},
    ),
    "gaussian_blur": MethodInfo(
        "gaussian_blur", "blur", _tbl("ksize", (5, 11, 17, 23, 29)),
        {"ksize": (1, 63)}, {"ksize": 1},
    ),
    "median_blur": MethodInfo(
        "median_blur", "blur", _tbl("ksize", (5, 9, 11, 15, 19)),
        {"ksize": (1, 63)}, {"ksize": 1},
    ),
    "average_blur": MethodInfo(
        "average_blur", "blur", _tbl("ksize", (5, 11, 17, 23, 29)),
        {"ksize": (1, 63)}, {"ksize": 1},
    ),
    "shake": MethodInfo(
        "shake", "blur", _tbl("length", (5, 7, 11, 15, 19)),
        {"length": (1, 63)}, {"length": 1},
    ),
    "grayscale": MethodInfo(
        "grayscale", "color", _tbl("mix", (1.0,) * 5),
        {"mix": (0.0, 1.0)}, {"mix": 0.0},
    ),
    "monochrome_red": MethodInfo(
        "monochrome_red", "color", _tbl("mix", (1.0,) * 5),
        {"mix": (0.0, 1.0)}, {"mix": 0.0},
    ),
    "monochrome_green": MethodInfo(
        "monochrome_green", "color", _tbl("mix", (1.0,) * 5),
        {"mix": (0.0, 1.0)}, {"mix": 0.0},
    ),
    "monochrome_blue": MethodInfo(
        "monochrome_blue", "color", _tbl("mix", (1.0,) * 5),
        {"mix": (0.0, 1.0)}, {"mix": 0.0},
    ),
    "binarization": MethodInfo(
        "binarization", "color", _tbl("mix", (1.0,) * 5, threshold=128.0),
        {"mix": (0.0, 1.0), "threshold": (0.0, 255.0)}, {"mix": 0.0},
    ),
    "occlusion": MethodInfo(
        "occlusion", "occlusion", _tbl("fraction", (0.05, 0.10, 0.15, 0.20, 0.25)),
        {"fraction": (0.0, 0.9)}, {"fraction": 0.0},
    ),
    "rain": MethodInfo(
        "rain", "weather",
        _tbl("density", (0.001, 0.003, 0.006, 0.012, 0.020), length=7, alpha=0.7),
        {"density": (0.0, 0.2), "length": (1, 63), "alpha": (0.0, 1.0)},
        {"density": 0.0},
    ),
    "snow": MethodInfo(
        "snow", "weather", _tbl("density", (0.005, 0.010, 0.018, 0.028, 0.040)),
        {"density": (0.0, 0.2)}, {"density": 0.0},
    ),
    "frost": MethodInfo(
        "frost", "weather", _tbl("alpha", (0.15, 0.25, 0.35, 0.45, 0.55), cell=8.0),
        {"alpha": (0.0, 1.0), "cell": (2.0, 64.0)}, {"alpha": 0.0},
        "alpha", (0.0, 1.0),
    ),
    "fog": MethodInfo(
        "fog", "weather", _tbl("t", (0.15, 0.30, 0.45, 0.60, 0.75), plateau=220.0),
        {"t": (0.0, 1.0), "plateau": (0.0, 255.0)}, {"t": 0.0},
        "t", (0.0, 1.0),
    ),
    "flare": MethodInfo(
        "flare", "weather",
        tuple(
            {"amplitude": a, "radius_frac": r}
            for a, r in ((60, 0.3), (90, 0.4), (120, 0.5), (150, 0.6), (180, 0.7))
        ),
        {"amplitude": (0.0, 255.0), "radius_frac": (0.05, 2.0)},
        {"amplitude": 0.0}, "amplitude", (0.0, 255.0),
    ),
}
