import numpy as np
import pytest

from advkit.attack import AttackConfig, pgd
from advkit.defense import (
    DetectorParams,
    PreprocessPipeline,
    Stage,
    adversarially_train,
    default_inference_pipeline,
    default_training_pipeline,
    defended_deployment_pipeline,
    detect,
    detector_features,
    load_detector,
    preprocess,
    roc_auc,
    save_detector,
    spatial_defense_rate,
    train_detector,
)
from advkit.errors import InvalidPipelineError, TrainingError
from advkit.image import Image
from advkit.model import predict
from advkit.rng import derive_seed
from conftest import random_image


def test_stage_validation():
    with pytest.raises(InvalidPipelineError):
        Stage("sharpen")
    with pytest.raises(InvalidPipelineError):
        Stage("median_filter", {"ksize": 4})
    with pytest.raises(InvalidPipelineError):
        Stage("gaussian_filter", {"ksize": 1})


def test_inference_mode_rejects_random_stages():
    with pytest.raises(InvalidPipelineError):
        PreprocessPipeline(stages=(Stage("random_horizontal_flip", {"p": 0.5}),), mode="inference")
    with pytest.raises(InvalidPipelineError):
        PreprocessPipeline(stages=(Stage("resize_crop", {"size": 32}),), mode="inference")


def test_empty_pipeline_is_identity():
    img = random_image(0)
    pipe = PreprocessPipeline(stages=(), mode="inference")
    assert preprocess(img, pipe) == img


def test_median_restores_salt_pixel():
    arr = np.full((16, 16, 3), 80, dtype=np.uint8)
    arr[8, 8] = 255
    pipe = PreprocessPipeline(stages=(Stage("median_filter", {"ksize": 3}),), mode="inference")
    out = preprocess(Image(arr), pipe)
    assert out.array[8, 8, 0] == 80


def test_training_pipeline_deterministic_per_seed():
    img = random_image(1)
    pipe = default_training_pipeline(seed=9, input_size=32)
    assert preprocess(img, pipe) == preprocess(img, pipe)
    other = default_training_pipeline(seed=10, input_size=32)
    assert preprocess(img, pipe) != preprocess(img, other)


def test_default_training_pipeline_published_parameters():
    pipe = default_training_pipeline()
    stages = {s.kind: s.params for s in pipe.stages}
    assert stages["random_rotation"]["degrees"] == (0.0, 360.0)
    assert stages["random_grayscale"]["p"] == 0.5
    assert stages["random_horizontal_flip"]["p"] == 0.5
    assert stages["resize_crop"]["size"] == 224
    assert stages["gaussian_filter"]["ksize"] == 29
    assert stages["median_filter"]["ksize"] == 11


def test_default_pipelines_scale_to_local_input():
    pipe = default_training_pipeline(input_size=32)
    stages = {s.kind: s.params for s in pipe.stages}
    assert stages["resize_crop"]["size"] == 32
    assert stages["gaussian_filter"]["ksize"] == 5
    assert stages["median_filter"]["ksize"] == 3
    inf = default_inference_pipeline(input_size=32)
    kinds = [s.kind for s in inf.stages]
    assert kinds == ["median_filter", "grayscale"]
    assert inf.stages[0].params["ksize"] == 3


def test_grayscale_terminated_pipeline_idempotent():
    img = random_image(2)
    pipe = default_inference_pipeline(input_size=32)
    once = preprocess(img, pipe)
    gray_only = PreprocessPipeline(stages=(Stage("grayscale"),), mode="inference")
    assert preprocess(once, gray_only) == once


def test_pipeline_json_round_trip():
    pipe = default_training_pipeline(seed=3, input_size=32)
    assert PreprocessPipeline.from_json(pipe.to_json()) == pipe


# --------------------------------------------------------------- hardening


def test_adversarially_train_zero_epochs(small_data):
    train_ds, _ = small_data
    cfg = AttackConfig(kind="pgd", epsilon=8.0, steps=3, seed=0)
    params = adversarially_train(train_ds, cfg, epochs=0, seed=4)
    from advkit.model import ModelParams

    init = ModelParams.initialize(4, k=3)
    assert np.array_equal(params.conv1_w, init.conv1_w)


def test_identity_corruption_gives_perfect_defense_rate(small_params, small_data):
    _, test_ds = small_data
    rate = spatial_defense_rate(
        small_params, test_ds, "gaussian_noise", severity=1,
        raw_params={"sigma": 0.0}, seed=1,
    )
    assert rate == 1.0


def test_defended_deployment_pipeline_stages():
    pipe = defended_deployment_pipeline(input_size=32)
    assert [s.kind for s in pipe.stages] == ["median_filter", "grayscale"]
    assert pipe.stages[0].params["ksize"] == 5  # scaled Table value + 2
    assert pipe.mode == "inference"


# ---------------------------------------------------------------- detector


@pytest.fixture(scope="module")
def detector_corpus(small_params, small_data):
    _, test_ds = small_data
    clean, adv = [], []
    for i, (img, _label) in enumerate(test_ds.items):
        label = predict(small_params, img).top1_index
        cfg = AttackConfig(kind="pgd", epsilon=8.0, steps=8, seed=derive_seed(7, "det", i))
        res = pgd(small_params, img, label, cfg)
        clean.append(img)
        adv.append(res.adversarial)
    return clean, adv


def test_detector_feature_vector_shape(small_params):
    feats = detector_features(small_params, random_image(3))
    assert feats.shape == (9,)  # 3 views x 3 classes


def test_detector_requires_both_classes(small_params):
    with pytest.raises(TrainingError):
        train_detector(small_params, [], [random_image(0)], seed=0)
    with pytest.raises(TrainingError):
        train_detector(small_params, [random_image(0)], [], seed=0)


def test_detector_output_in_unit_interval_and_deterministic(small_params, detector_corpus):
    clean, adv = detector_corpus
    det = train_detector(small_params, clean[:20], adv[:20], seed=2, epochs=60)
    for img in (clean[0], adv[0]):
        p = detect(det, small_params, img)
        assert 0.0 <= p <= 1.0
        assert p == detect(det, small_params, img)


def test_detector_separates_training_classes(small_params, detector_corpus):
    clean, adv = detector_corpus
    det = train_detector(small_params, clean[:20], adv[:20], seed=3, epochs=60)
    mean_clean = np.mean([detect(det, small_params, img) for img in clean[:20]])
    mean_adv = np.mean([detect(det, small_params, img) for img in adv[:20]])
    assert mean_adv > mean_clean


def test_detector_same_seed_identical(small_params, detector_corpus):
    clean, adv = detector_corpus
    a = train_detector(small_params, clean[:12], adv[:12], seed=5, epochs=30)
    b = train_detector(small_params, clean[:12], adv[:12], seed=5, epochs=30)
    for name in DetectorParams.ARRAY_FIELDS:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_detector_save_load_round_trip(tmp_path, small_params, detector_corpus):
    clean, adv = detector_corpus
    det = train_detector(small_params, clean[:12], adv[:12], seed=6, epochs=30)
    path = tmp_path / "det.akp"
    save_detector(det, path)
    loaded = load_detector(path)
    img = clean[0]
    assert detect(det, small_params, img) == detect(loaded, small_params, img)


def test_roc_auc_known_values():
    assert roc_auc([0.1, 0.2], [0.8, 0.9]) == 1.0
    assert roc_auc([0.8, 0.9], [0.1, 0.2]) == 0.0
    assert roc_auc([0.5], [0.5]) == 0.5


def test_detector_auc_reproducible_across_seeds(victim_params, bundled_test):
    # the stability band holds at bundled-corpus scale, not on toy slices
    clean, adv = [], []
    for i, (img, _label) in enumerate(bundled_test.items[:160]):
        label = predict(victim_params, img).top1_index
        cfg = AttackConfig(kind="pgd", epsilon=8.0, steps=10, seed=derive_seed(8, "detrep", i))
        adv.append(pgd(victim_params, img, label, cfg).adversarial)
        clean.append(img)
    half = len(clean) // 2
    aucs = []
    for seed in (11, 12, 13):
        det = train_detector(victim_params, clean[:half], adv[:half], seed=seed, epochs=200)
        sc = [detect(det, victim_params, img) for img in clean[half:]]
        sa = [detect(det, victim_params, img) for img in adv[half:]]
        aucs.append(roc_auc(sc, sa))
    assert max(aucs) - min(aucs) <= 0.04  # +-0.02 band across retrains


# ------------------------------------------------------- hardened stack


def test_hardened_pgd_escape_strictly_below_undefended(
    victim_params, bundled_test, defended_stack
):
    defended, deploy, _ = defended_stack
    esc_undef = esc_def = n = 0
    for i, (img, label) in enumerate(bundled_test.items[:120]):
        if predict(victim_params, img).top1_index != label:
            continue
        n += 1
        cfg = AttackConfig(kind="pgd", epsilon=8.0, seed=derive_seed(3, "hard", i))
        esc_undef += pgd(victim_params, img, label, cfg).escaped
        adv = pgd(defended, img, label, cfg).adversarial
        esc_def += predict(defended, preprocess(adv, deploy)).top1_index != label
    assert esc_def / n < esc_undef / n


def test_hardened_clean_accuracy_tradeoff(victim_params, bundled_test, defended_stack):
    from advkit.model import accuracy

    defended, deploy, _ = defended_stack
    undef_clean = accuracy(victim_params, bundled_test)
    def_clean = sum(
        1 for img, lbl in bundled_test.items
        if predict(defended, preprocess(img, deploy)).top1_index == lbl
    ) / len(bundled_test.items)
    assert def_clean >= undef_clean - 0.15


def test_salt_pepper_defense_directional(victim_params, bundled_test, defended_stack):
    # undefended -> defended must improve, mirroring the published 0.50 -> 0.95
    from advkit.dataset import Dataset

    defended, deploy, _ = defended_stack
    sub = Dataset(items=bundled_test.items[:100], split="test")
    undef = spatial_defense_rate(victim_params, sub, "salt_pepper", 3, seed=2)
    hardened = spatial_defense_rate(defended, sub, "salt_pepper", 3, preprocessing=deploy, seed=2)
    assert hardened > undef
