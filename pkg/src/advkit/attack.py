"""Gradient attacks and the two-step low-query transfer attack.

All attacks move in continuous [0, 255] space and round exactly once on
emission; the L-inf budget is enforced on the emitted integer pixels, so
``max |adv - orig|`` never exceeds epsilon regardless of rounding. ``label``
is the reference class index: campaigns pass the target's clean top-1, so
``escaped`` means the prediction moved off that class.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from advkit.corruption import _gaussian_taps, _sep_filter
from advkit.errors import PartialShadowError, TransportError, UndefinedRateError
from advkit.image import Image, QualityMetrics, psnr, save_image, ssim
from advkit.model import ModelParams, _loss_and_grad_full, forward, train
from advkit.dataset import Dataset, LABEL_NAMES
from advkit.rng import SplitMix64, derive_seed

ATTACK_KINDS = ("fgsm", "pgd", "ffl_pgd")

DEFAULT_STEPS = 20
# weight of the low-feature term; the objective sums over the whole
# first-conv activation map, so workable values are small
DEFAULT_LAMBDA = 1e-3
# gradient-smoothing kernel for the transfer attack's backup candidate
FFL_SMOOTH_KSIZE = 9


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = 8.0
    steps: int = DEFAULT_STEPS
    step_size: float | None = None  # defaults to epsilon / 8
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    random_start: bool = True

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 < self.epsilon <= 64.0:
            raise ValueError("epsilon must be in (0, 64]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 8.0

    def with_seed(self, seed: int) -> "AttackConfig":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "step_size": self.step_size,
            "lam": self.lam,
            "seed": self.seed,
            "random_start": self.random_start,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttackConfig":
        return cls(
            kind=obj["kind"],
            epsilon=float(obj.get("epsilon", 8.0)),
            steps=int(obj.get("steps", DEFAULT_STEPS)),
            step_size=obj.get("step_size"),
            lam=float(obj.get("lam", DEFAULT_LAMBDA)),
            seed=int(obj.get("seed", 0)),
            random_start=bool(obj.get("random_start", True)),
        )


@dataclass(frozen=True)
class AdversarialResult:
    adversarial: Image
    escaped: bool
    metrics: QualityMetrics
    queries_used: int
    label: int
    adv_prediction: object = None


def _emit(orig: np.ndarray, x: np.ndarray, eps: float) -> Image:
    """Quantize once and clamp so the integer L-inf budget holds exactly."""
    lo = np.maximum(np.ceil(orig - eps), 0.0)
    hi = np.minimum(np.floor(orig + eps), 255.0)
    q = np.clip(np.floor(x + 0.5), lo, hi)
    return Image(q.astype(np.uint8))


def _project(orig: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(x, orig - eps, orig + eps), 0.0, 255.0)


def _result(params_or_none, orig_img: Image, adv: Image, label: int, queries: int,
            prediction=None) -> AdversarialResult:
    if prediction is None:
        prediction = forward(params_or_none, adv).prediction
    escaped = prediction.top1_index != label
    metrics = QualityMetrics(psnr_db=psnr(orig_img, adv), ssim=ssim(orig_img, adv))
    return AdversarialResult(
        adversarial=adv,
        escaped=escaped,
        metrics=metrics,
        queries_used=queries,
        label=label,
        adv_prediction=prediction,
    )


def fgsm(params: ModelParams, img: Image, label: int, cfg: AttackConfig) -> AdversarialResult:
    """Single signed-gradient step of size epsilon."""
    orig = img.to_float()
    _, _, gx, _ = _loss_and_grad_full(params, orig, label)
    x = _project(orig, orig + cfg.epsilon * np.sign(gx), cfg.epsilon)
    return _result(params, img, _emit(orig, x, cfg.epsilon), label, queries=0)


def pgd(params: ModelParams, img: Image, label: int, cfg: AttackConfig) -> AdversarialResult:
    """Iterated projected signed-gradient ascent on the class loss."""
    orig = img.to_float()
    x = _pgd_iterate(params, orig, label, cfg, lam=0.0, ref_low=None)
    return _result(params, img, _emit(orig, x, cfg.epsilon), label, queries=0)


def _pgd_iterate(params, orig, label, cfg, lam, ref_low, smooth_taps=None):
    """Projected signed-gradient ascent; returns the final iterate.

    With ``smooth_taps`` the gradient is spatially averaged before the
    sign step, which yields spatially coherent perturbations.
    """
    x = orig.copy()
    if cfg.random_start:
        rng = SplitMix64(derive_seed(cfg.seed, "pgd-start"))
        jitter = (rng.uniforms(orig.size).reshape(orig.shape) * 2.0 - 1.0) * cfg.epsilon
        x = _project(orig, orig + jitter, cfg.epsilon)
    for _ in range(cfg.steps):
        _, _, gx, _ = _loss_and_grad_full(params, x, label, lam=lam, ref_low=ref_low)
        if smooth_taps is not None:
            gx = _sep_filter(gx, smooth_taps)
        x = _project(orig, x + cfg.alpha * np.sign(gx), cfg.epsilon)
    return x


def ffl_pgd_attack(
    shadow: ModelParams, target, img: Image, label: int, cfg: AttackConfig
) -> AdversarialResult:
    """Craft on the shadow with the feature-map loss, spend <= 2 queries.

    Runs PGD on the shadow with the combined objective (raise class loss,
    keep first-conv features near the original's) as one trajectory with a
    mid-way random restart. The pre-restart intermediate is crafted with a
    spatially smoothed gradient, the kind of coherent low-frequency
    perturbation that carries across models; the post-restart final is the
    plain feature-consistent iterate. Local crafting compute is
    unconstrained in this threat model; only oracle queries are scarce.
    The target is asked about the final candidate and, only if that fails
    to move the label, about the intermediate - two queries at most.
    ``target`` is anything with a ``classify(img) -> Prediction`` method.
    """
    orig = img.to_float()
    ref_low = forward(shadow, img).low_feature
    cfg_a = replace(cfg, seed=derive_seed(cfg.seed, "leg-a"))
    cfg_b = replace(cfg, seed=derive_seed(cfg.seed, "leg-b"))
    final_x = _pgd_iterate(shadow, orig, label, cfg_a, lam=cfg.lam, ref_low=ref_low)
    alternate_x = _pgd_iterate(shadow, orig, label, cfg_b, lam=cfg.lam, ref_low=ref_low,
                               smooth_taps=_gaussian_taps(FFL_SMOOTH_KSIZE))

    final_img = _emit(orig, final_x, cfg.epsilon)
    pred = target.classify(final_img)
    queries = 1
    adv, adv_pred = final_img, pred
    if pred.top1_index == label:
        alt_img = _emit(orig, alternate_x, cfg.epsilon)
        if alt_img != final_img:
            pred2 = target.classify(alt_img)
            queries = 2
            if pred2.top1_index != label:
                adv, adv_pred = alt_img, pred2
    metrics = QualityMetrics(psnr_db=psnr(img, adv), ssim=ssim(img, adv))
    return AdversarialResult(
        adversarial=adv,
        escaped=adv_pred.top1_index != label,
        metrics=metrics,
        queries_used=queries,
        label=label,
        adv_prediction=adv_pred,
    )


@dataclass(frozen=True)
class ShadowResult:
    params: ModelParams
    queries_used: int
    agreement: float


def train_shadow(
    query_budget: int,
    target,
    unlabeled: list,
    seed: int = 0,
    epochs: int = 10,
    label_names: tuple = LABEL_NAMES,
    holdout_fraction: float = 0.2,
) -> ShadowResult:
    """Label images through the target, then fit the local architecture.

    Spends at most ``query_budget`` classify calls (subsampling the given
    images when the budget is smaller), holds out a slice of the labeled
    set, and reports shadow/target top-1 agreement on it.
    """
    if query_budget <= 0:
        raise PartialShadowError("query budget exhausted before labeling", params=None, queries_used=0)
    images = unlabeled[: min(query_budget, len(unlabeled))]
    labeled = []
    queries = 0
    name_to_index = {name: i for i, name in enumerate(label_names)}
    for img in images:
        try:
            pred = target.classify(img)
        except TransportError as exc:
            raise PartialShadowError(
                f"labeling failed after {queries} queries: {exc}",
                params=None,
                queries_used=queries,
            ) from exc
        queries += 1
        name = pred.top1_label
        if name not in name_to_index:
            raise PartialShadowError(
                f"oracle label {name!r} not in the configured label set",
                params=None,
                queries_used=queries,
            )
        labeled.append((img, name_to_index[name]))

    n_hold = max(1, int(len(labeled) * holdout_fraction))
    if len(labeled) <= n_hold:
        raise PartialShadowError(
            f"budget {query_budget} labels too few images to train and hold out",
            params=None,
            queries_used=queries,
        )
    hold = labeled[-n_hold:]
    fit = labeled[:-n_hold]
    ds = Dataset(items=fit, split="shadow", label_names=tuple(label_names))
    params, _ = train(ds, epochs=epochs, seed=derive_seed(seed, "shadow"))
    agree = sum(
        1 for img, lbl in hold if forward(params, img).prediction.top1_index == lbl
    ) / len(hold)
    return ShadowResult(params=params, queries_used=queries, agreement=agree)


def escape_rate(results: list, clean_correct_mask: list) -> float:
    """Fraction of clean-correct items whose perturbed version escaped."""
    if len(results) != len(clean_correct_mask):
        raise ValueError(
            f"results ({len(results)}) and mask ({len(clean_correct_mask)}) must align"
        )
    eligible = [r for r, ok in zip(results, clean_correct_mask) if ok]
    if not eligible:
        raise UndefinedRateError("no clean-correct items: escape rate undefined")
    return sum(1 for r in eligible if r.escaped) / len(eligible)


def save_corpus(out_dir, results: list, cfg: AttackConfig, original_names: list = None,
                fmt: str = "ppm") -> str:
    """Write adversarial images plus a manifest JSON; returns manifest path.

    Manifest entries carry the original's name, the attack config, the
    quality metrics, the escape flag, and the queries spent.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, res in enumerate(results):
        name = f"adv_{i:05d}.{fmt}"
        save_image(res.adversarial, os.path.join(out_dir, name), format=fmt)
        entries.append(
            {
                "file": name,
                "original": original_names[i] if original_names else f"index_{i}",
                "attack": cfg.to_json(),
                "metrics": res.metrics.to_json(),
                "escaped": res.escaped,
                "queries": res.queries_used,
            }
        )
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump({"entries": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
