"""Robustness evaluation and hardening toolkit for image classifiers.

Core pieces: seeded spatial corruptions gated by PSNR/SSIM, gradient and
low-query transfer attacks against a built-in trainable CNN, defense
pipelines (augmentation, input reconstruction, adversarial training), an
adversarial-input detector, and a campaign harness that scores local or
remote classifiers.
"""

from advkit.attack import (
    AdversarialResult,
    AttackConfig,
    escape_rate,
    ffl_pgd_attack,
    fgsm,
    pgd,
    train_shadow,
)
from advkit.corruption import CorruptionSpec, apply_corruption, list_methods, severity_params
from advkit.dataset import Dataset, generate_dataset, load_dataset, save_dataset
from advkit.defense import (
    DetectorParams,
    PreprocessPipeline,
    Stage,
    adversarially_train,
    default_inference_pipeline,
    default_training_pipeline,
    defended_deployment_pipeline,
    detect,
    preprocess,
    spatial_defense_rate,
    train_defended,
    train_detector,
)
from advkit.gate import CalibrationResult, GatePolicy, GateResult, calibrate_severity, gate
from advkit.harness import (
    EvaluationReport,
    LocalTarget,
    run_attack_campaign,
    run_corruption_campaign,
)
from advkit.image import Image, QualityMetrics, load_image, psnr, save_image, ssim
from advkit.model import ModelParams, Prediction, forward, load_params, loss_and_grad, predict, save_params, train
from advkit.remote import FieldMap, RemoteTarget
from advkit.report import emit_report

__version__ = "0.1.0"
