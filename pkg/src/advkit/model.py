"""The built-in differentiable CNN: victim, shadow, and training substrate.

Architecture is fixed: 3x3 conv (8 filters) + ReLU -> 2x2 maxpool -> 3x3
conv (16) + ReLU -> 2x2 maxpool -> flatten -> fully connected -> softmax,
on 32x32x3 inputs scaled to [0, 1]. The post-ReLU first-conv activation is
exposed as the low-level feature map; the logits are the high-level one.
All arithmetic is float64 and every gradient is analytic.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from advkit import kernels
from advkit.dataset import LABEL_NAMES, Dataset
from advkit.errors import FormatError, NumericalError, ShapeError, TrainingError
from advkit.image import Image
from advkit.rng import SplitMix64, derive_seed

INPUT_SIZE = 32
CONV1_FILTERS = 8
CONV2_FILTERS = 16
FC_INPUT = CONV2_FILTERS * (INPUT_SIZE // 4) * (INPUT_SIZE // 4)

DEFAULT_LR = 0.05
DEFAULT_BATCH = 32

_MAGIC = b"AKPR"
_VERSION = 1


@dataclass
class ModelParams:
    conv1_w: np.ndarray  # (8, 3, 3, 3)
    conv1_b: np.ndarray  # (8,)
    conv2_w: np.ndarray  # (16, 8, 3, 3)
    conv2_b: np.ndarray  # (16,)
    fc_w: np.ndarray     # (1024, k)
    fc_b: np.ndarray     # (k,)

    ARRAY_FIELDS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

    @property
    def k(self) -> int:
        return self.fc_b.shape[0]

    def arrays(self):
        return [getattr(self, name) for name in self.ARRAY_FIELDS]

    def copy(self) -> "ModelParams":
        return ModelParams(*[a.copy() for a in self.arrays()])

    def check_finite(self) -> None:
        for name in self.ARRAY_FIELDS:
            if not np.isfinite(getattr(self, name)).all():
                raise NumericalError(f"non-finite values in {name}")

    @classmethod
    def zeros(cls, k: int = 3) -> "ModelParams":
        return cls(
            conv1_w=np.zeros((CONV1_FILTERS, 3, 3, 3)),
            conv1_b=np.zeros(CONV1_FILTERS),
            conv2_w=np.zeros((CONV2_FILTERS, CONV1_FILTERS, 3, 3)),
            conv2_b=np.zeros(CONV2_FILTERS),
            fc_w=np.zeros((FC_INPUT, k)),
            fc_b=np.zeros(k),
        )

    @classmethod
    def initialize(cls, seed: int, k: int = 3) -> "ModelParams":
        """He-style seeded init (biases zero)."""
        rng = SplitMix64(derive_seed(seed, "init"))
        p = cls.zeros(k)
        for name in ("conv1_w", "conv2_w", "fc_w"):
            arr = getattr(p, name)
            fan_in = int(np.prod(arr.shape[1:])) if arr.ndim == 4 else arr.shape[0]
            std = math.sqrt(2.0 / fan_in)
            setattr(p, name, rng.normals(arr.size).reshape(arr.shape) * std)
        return p


@dataclass(frozen=True)
class Prediction:
    labels: tuple
    scores: np.ndarray

    @property
    def top1_index(self) -> int:
        return int(np.argmax(self.scores))  # lowest index wins ties

    @property
    def top1_label(self) -> str:
        return self.labels[self.top1_index]


class ForwardResult(NamedTuple):
    low_feature: np.ndarray   # (32, 32, 8) post-ReLU conv1 activation
    logits: np.ndarray        # (k,) pre-softmax
    prediction: Prediction


def _as_float_input(img) -> np.ndarray:
    arr = img.to_float() if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if arr.shape != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ShapeError(f"model input must be 32x32x3, got {arr.shape}")
    return arr


def _maxpool2(x: np.ndarray):
    h, w, c = x.shape
    blocks = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    idx = np.argmax(blocks, axis=-1)  # first max wins ties
    pooled = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return pooled, idx


def _maxpool2_backward(dpooled: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    c = dpooled.shape[2]
    blocks = np.zeros((h // 2, w // 2, c, 4))
    np.put_along_axis(blocks, idx[..., None], dpooled[..., None], axis=-1)
    return blocks.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def forward(params: ModelParams, img, labels: tuple = None) -> ForwardResult:
    """Run the network; returns low-level features, logits, and prediction."""
    x = _as_float_input(img) / 255.0
    z1 = kernels.conv2d_forward(x, params.conv1_w, params.conv1_b)
    a1 = np.maximum(z1, 0.0)
    p1, _ = _maxpool2(a1)
    z2 = kernels.conv2d_forward(p1, params.conv2_w, params.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p2, _ = _maxpool2(a2)
    logits = p2.reshape(-1) @ params.fc_w + params.fc_b
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits in forward pass")
    scores = _softmax(logits)
    names = labels if labels is not None else _default_labels(params.k)
    return ForwardResult(a1, logits, Prediction(labels=names, scores=scores))


def _default_labels(k: int) -> tuple:
    if k == len(LABEL_NAMES):
        return LABEL_NAMES
    return tuple(f"class_{i}" for i in range(k))


def loss_and_grad(
    params: ModelParams,
    img,
    label: int,
    lam: float = 0.0,
    ref_low: np.ndarray = None,
    objective: str = "ce",
):
    """Loss, parameter gradients, and input-pixel gradient.

    The class term is cross-entropy by default, or the unsaturated logit
    margin (runner-up minus label) with ``objective="margin"``. With
    ``lam > 0`` the feature objective subtracts
    ``lam * ||low(x) - ref_low||^2``, pulling the first-conv activation
    toward the reference while the class term rises.
    """
    loss, grad, dx, _ = _loss_and_grad_full(params, img, label, lam, ref_low, objective)
    return loss, grad, dx


def _loss_and_grad_full(params, img, label, lam=0.0, ref_low=None, objective="ce"):
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam > 0 and ref_low is None:
        raise ValueError("ref_low required when lam > 0")
    x = _as_float_input(img) / 255.0

    z1 = kernels.conv2d_forward(x, params.conv1_w, params.conv1_b)
    a1 = np.maximum(z1, 0.0)
    p1, idx1 = _maxpool2(a1)
    z2 = kernels.conv2d_forward(p1, params.conv2_w, params.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p2, idx2 = _maxpool2(a2)
    flat = p2.reshape(-1)
    logits = flat @ params.fc_w + params.fc_b
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits in forward pass")

    if objective == "ce":
        zmax = logits.max()
        lse = zmax + math.log(np.exp(logits - zmax).sum())
        class_term = lse - logits[label]
        probs = np.exp(logits - lse)
        dlogits = probs.copy()
        dlogits[label] -= 1.0
    elif objective == "margin":
        # runner-up logit minus the label's: unsaturated push off the class
        others = [j for j in range(logits.shape[0]) if j != label]
        runner = max(others, key=lambda j: logits[j])
        class_term = float(logits[runner] - logits[label])
        dlogits = np.zeros_like(logits)
        dlogits[runner] = 1.0
        dlogits[label] = -1.0
    else:
        raise ValueError(f"unknown class objective {objective!r}")

    loss = class_term
    if lam > 0:
        diff = a1 - ref_low
        loss = class_term - lam * float((diff * diff).sum())
    d_fc_w = np.outer(flat, dlogits)
    d_fc_b = dlogits.copy()
    dflat = params.fc_w @ dlogits
    dp2 = dflat.reshape(p2.shape)
    da2 = _maxpool2_backward(dp2, idx2, *a2.shape[:2])
    dz2 = da2 * (z2 > 0.0)
    dp1, d_c2w, d_c2b = kernels.conv2d_backward(p1, params.conv2_w, dz2)
    da1 = _maxpool2_backward(dp1, idx1, *a1.shape[:2])
    if lam > 0:
        da1 = da1 - lam * 2.0 * (a1 - ref_low)
    dz1 = da1 * (z1 > 0.0)
    dx, d_c1w, d_c1b = kernels.conv2d_backward(x, params.conv1_w, dz1)

    grad = ModelParams(
        conv1_w=d_c1w, conv1_b=d_c1b,
        conv2_w=d_c2w, conv2_b=d_c2b,
        fc_w=d_fc_w, fc_b=d_fc_b,
    )
    return loss, grad, dx / 255.0, logits


def predict(params: ModelParams, img, labels: tuple = None) -> Prediction:
    return forward(params, img, labels=labels).prediction


def accuracy(params: ModelParams, dataset: Dataset) -> float:
    correct = sum(
        1 for img, label in dataset.items if predict(params, img).top1_index == label
    )
    return correct / len(dataset.items)


# ----------------------------------------------------------------- training


def train(
    dataset: Dataset,
    epochs: int,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    augmentation=None,
    adversarial=None,
    batch_size: int = DEFAULT_BATCH,
    initial: ModelParams = None,
    train_biases: bool = True,
):
    """Plain seeded SGD; returns (params, per-epoch log).

    The sample order is owned by the seed, not by the incoming list order:
    items are first sorted by a content digest, then shuffled per epoch by
    a seeded stream, so a permuted dataset trains to identical params.

    ``augmentation`` is a defenses-module PreprocessPipeline applied to
    each sample with a per-(epoch, sample) derived seed. ``adversarial`` is
    an AttackConfig: half of every minibatch is replaced by PGD examples
    generated against the current params. With ``train_biases=False`` the
    bias vectors stay pinned at zero, which makes the trained network
    positively homogeneous: a global dimming of the input rescales the
    logits without reordering them.
    """
    if not dataset.items:
        raise TrainingError("empty dataset")
    params = initial.copy() if initial is not None else ModelParams.initialize(seed, k=dataset.k)
    if not train_biases:
        params.conv1_b[:] = 0.0
        params.conv2_b[:] = 0.0
        params.fc_b[:] = 0.0
    if epochs == 0:
        return params, []

    order0 = sorted(
        range(len(dataset.items)),
        key=lambda i: hashlib.sha256(
            dataset.items[i][0].array.tobytes() + bytes([dataset.items[i][1]])
        ).digest(),
    )

    if augmentation is not None:
        from advkit import defense  # deferred: defense imports this module
    if adversarial is not None:
        from advkit import attack  # deferred: attack imports this module

    log = []
    for epoch in range(epochs):
        order = list(order0)
        SplitMix64(derive_seed(seed, "shuffle", epoch)).shuffle(order)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            gsum = None
            for pos, i in enumerate(batch):
                img, label = dataset.items[i]
                if augmentation is not None:
                    aug_seed = derive_seed(seed, "aug", epoch, start + pos)
                    img = defense.preprocess(img, augmentation, seed_override=aug_seed)
                if adversarial is not None and pos < (len(batch) + 1) // 2:
                    atk_seed = derive_seed(seed, "advtrain", epoch, start + pos)
                    cfg = adversarial.with_seed(atk_seed)
                    img = attack.pgd(params, img, label, cfg).adversarial
                loss, grad, _, logits = _loss_and_grad_full(params, img, label)
                if not math.isfinite(loss):
                    raise TrainingError("loss diverged", epoch=epoch)
                total_loss += loss
                total_correct += 1 if int(np.argmax(logits)) == label else 0
                if gsum is None:
                    gsum = grad
                else:
                    for name in ModelParams.ARRAY_FIELDS:
                        acc = getattr(gsum, name)
                        acc += getattr(grad, name)
            scale = lr / len(batch)
            for name in ModelParams.ARRAY_FIELDS:
                if not train_biases and name.endswith("_b"):
                    continue
                arr = getattr(params, name)
                arr -= scale * getattr(gsum, name)
        log.append(
            {
                "epoch": epoch,
                "mean_loss": total_loss / len(order),
                "train_accuracy": total_correct / len(order),
            }
        )
    params.check_finite()
    return params, log


# ------------------------------------------------------------- persistence


def save_params(params: ModelParams, path, kind: str = "cnn") -> None:
    arrays = {name: getattr(params, name) for name in ModelParams.ARRAY_FIELDS}
    save_arrays(path, kind, arrays)


def load_params(path) -> ModelParams:
    kind, arrays, _ = load_arrays(path)
    if kind != "cnn":
        raise FormatError(f"expected a cnn params file, got kind {kind!r}")
    try:
        return ModelParams(**{name: arrays[name] for name in ModelParams.ARRAY_FIELDS})
    except KeyError as exc:
        raise FormatError(f"missing array {exc} in params file") from exc


def save_arrays(path, kind: str, arrays: dict, meta: dict = None) -> None:
    """Versioned container: magic, version, JSON header, float64 LE payload."""
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(hbytes)))
        fh.write(hbytes)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError("not a params file (bad magic)")
    if len(data) < 10:
        raise FormatError("truncated params file")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != _VERSION:
        raise FormatError(f"unsupported params version {version}")
    if len(data) < 10 + hlen:
        raise FormatError("truncated params header")
    try:
        header = json.loads(data[10 : 10 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt params header: {exc}") from exc
    pos = 10 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        if pos + nbytes > len(data):
            raise FormatError(f"truncated payload for array {entry['name']}")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise FormatError("trailing bytes after payload")
    return header["kind"], arrays, header.get("meta", {})
