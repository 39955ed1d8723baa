"""Quality gate: is a perturbed image still acceptably close to its source?

The thresholds are policy, not ground truth: the defaults (15 dB, SSIM
0.30) are deliberately loose and every campaign records which policy was in
force. ``mode`` decides whether failing images are dropped ("reject") or
kept but marked ("flag").
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from advkit.corruption import METHODS, CorruptionSpec, apply_corruption
from advkit.errors import UnsupportedCalibrationError
from advkit.image import Image, QualityMetrics, psnr, ssim

DEFAULT_MIN_PSNR_DB = 15.0
DEFAULT_MIN_SSIM = 0.30


@dataclass(frozen=True)
class GatePolicy:
    min_psnr_db: float = DEFAULT_MIN_PSNR_DB
    min_ssim: float = DEFAULT_MIN_SSIM
    mode: str = "reject"

    def __post_init__(self):
        if self.min_psnr_db < 0:
            raise ValueError("min_psnr_db must be >= 0")
        if not 0.0 <= self.min_ssim <= 1.0:
            raise ValueError("min_ssim must be in [0, 1]")
        if self.mode not in ("reject", "flag"):
            raise ValueError(f"unknown gate mode {self.mode!r}")

    def to_json(self) -> dict:
        return {"min_psnr_db": self.min_psnr_db, "min_ssim": self.min_ssim, "mode": self.mode}

    @classmethod
    def from_json(cls, obj: dict) -> "GatePolicy":
        return cls(
            min_psnr_db=float(obj.get("min_psnr_db", DEFAULT_MIN_PSNR_DB)),
            min_ssim=float(obj.get("min_ssim", DEFAULT_MIN_SSIM)),
            mode=obj.get("mode", "reject"),
        )


@dataclass(frozen=True)
class GateResult:
    passed: bool
    metrics: QualityMetrics


def gate(original: Image, perturbed: Image, policy: GatePolicy) -> GateResult:
    """Pure predicate: pass iff PSNR and SSIM both meet the policy floor."""
    metrics = QualityMetrics(psnr_db=psnr(original, perturbed), ssim=ssim(original, perturbed))
    passed = metrics.psnr_db >= policy.min_psnr_db and metrics.ssim >= policy.min_ssim
    return GateResult(passed=passed, metrics=metrics)


@dataclass(frozen=True)
class CalibrationResult:
    spec: CorruptionSpec
    realized_psnr_db: float
    reachable: bool


CALIBRATION_TOLERANCE_DB = 0.5
_MAX_ITERATIONS = 24


def calibrate_severity(
    img: Image, method: str, target_psnr_db: float, seed: int = 0
) -> CalibrationResult:
    """Binary-search a method's continuous parameter to hit a PSNR target.

    Only methods whose strength parameter moves PSNR monotonically are
    supported (noise amplitudes, brightness, contrast, fog/frost/flare
    strength); geometric and kernel-size methods raise. The search keeps
    the seed fixed, so re-applying the returned spec reproduces the
    realized PSNR bit-for-bit. If the target is outside what the parameter
    range can reach, the boundary spec is returned with ``reachable=False``.
    """
    info = METHODS.get(method)
    if info is None or info.calibrate_param is None:
        raise UnsupportedCalibrationError(
            f"{method!r} has no continuous PSNR-monotone parameter"
        )
    pname = info.calibrate_param
    lo, hi = info.calibrate_range

    def realized(value: float) -> tuple[float, CorruptionSpec]:
        spec = CorruptionSpec(method=method, severity=1, seed=seed, raw_params={pname: value})
        return psnr(img, apply_corruption(img, spec)), spec

    psnr_hi, spec_lo = realized(lo)   # weakest corruption -> highest PSNR
    psnr_lo, spec_hi = realized(hi)   # strongest corruption -> lowest PSNR
    if target_psnr_db > psnr_hi:
        return CalibrationResult(spec_lo, psnr_hi, reachable=_close(psnr_hi, target_psnr_db))
    if target_psnr_db < psnr_lo:
        return CalibrationResult(spec_hi, psnr_lo, reachable=_close(psnr_lo, target_psnr_db))

    best_spec, best_psnr = spec_lo, psnr_hi
    a, b = lo, hi
    for _ in range(_MAX_ITERATIONS):
        mid = 0.5 * (a + b)
        got, spec = realized(mid)
        if abs(got - target_psnr_db) < abs(best_psnr - target_psnr_db):
            best_spec, best_psnr = spec, got
        if got > target_psnr_db:
            a = mid  # too clean: push the parameter up
        else:
            b = mid
    return CalibrationResult(best_spec, best_psnr, reachable=_close(best_psnr, target_psnr_db))


def _close(got: float, target: float) -> bool:
    if math.isinf(got):
        return False
    return abs(got - target) <= CALIBRATION_TOLERANCE_DB
