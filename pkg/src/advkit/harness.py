"""Campaign execution: classify targets, sweep corruptions/attacks, report.

Targets expose the black-box contract only: ``classify(img)`` returning a
Prediction, with a monotone query counter behind it. Campaigns derive every
per-item seed from the campaign seed, so results are bit-identical across
runs and across worker counts; rows are assembled in canonical order no
matter which worker finished first.
"""

from __future__ import annotations

import datetime
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from advkit import attack as attack_mod
from advkit.corruption import CorruptionSpec, apply_corruption
from advkit.dataset import Dataset
from advkit.errors import TransportError, UndefinedRateError
from advkit.gate import GatePolicy, gate
from advkit.image import Image
from advkit.model import ModelParams, Prediction, forward
from advkit.rng import derive_seed

REPORT_VERSION = 1


class LocalTarget:
    """In-process classifier: model params plus an optional defense pipeline."""

    def __init__(self, params: ModelParams, pipeline=None, label_names: tuple = None):
        self.params = params
        self.pipeline = pipeline
        self.label_names = label_names
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def classify(self, img: Image) -> Prediction:
        with self._lock:
            self._queries += 1
        if self.pipeline is not None:
            from advkit.defense import preprocess

            img = preprocess(img, self.pipeline)
        return forward(self.params, img, labels=self.label_names).prediction

    def descriptor(self) -> dict:
        return {
            "kind": "local",
            "pipeline": self.pipeline.to_json() if self.pipeline is not None else None,
        }


# ------------------------------------------------------------------ rows


@dataclass
class CleanRow:
    n: int
    accuracy: float
    queries: int

    def to_json(self):
        return {"n": self.n, "accuracy": self.accuracy, "queries": self.queries}

    @classmethod
    def from_json(cls, obj):
        return cls(n=obj["n"], accuracy=obj["accuracy"], queries=obj["queries"])


@dataclass
class CorruptionRow:
    method: str
    severity: int
    n: int
    accuracy: float | None
    escape_rate: float | None
    mean_psnr_db: float | None
    mean_ssim: float | None
    gate_pass_fraction: float
    queries: int
    annotation: str | None = None

    def to_json(self):
        return {
            "method": self.method,
            "severity": self.severity,
            "n": self.n,
            "accuracy": self.accuracy,
            "escape_rate": self.escape_rate,
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "gate_pass_fraction": self.gate_pass_fraction,
            "queries": self.queries,
            "annotation": self.annotation,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class AttackRow:
    kind: str
    epsilon: float
    steps: int
    n: int
    escape_rate: float | None
    mean_psnr_db: float | None
    mean_ssim: float | None
    queries: int
    indeterminate: int = 0
    partial: bool = False

    def to_json(self):
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "n": self.n,
            "escape_rate": self.escape_rate,
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "queries": self.queries,
            "indeterminate": self.indeterminate,
            "partial": self.partial,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class DefenseRow:
    method: str
    severity: int
    n: int
    undefended_rate: float
    defended_rate: float

    def to_json(self):
        return {
            "method": self.method,
            "severity": self.severity,
            "n": self.n,
            "undefended_rate": self.undefended_rate,
            "defended_rate": self.defended_rate,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class EvaluationReport:
    metadata: dict
    clean: CleanRow | None = None
    corruption_rows: list = field(default_factory=list)
    attack_rows: list = field(default_factory=list)
    defense_rows: list = field(default_factory=list)
    partial: bool = False

    @property
    def total_queries(self) -> int:
        q = self.clean.queries if self.clean else 0
        q += sum(r.queries for r in self.corruption_rows)
        q += sum(r.queries for r in self.attack_rows)
        return q

    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "metadata": self.metadata,
            "clean": self.clean.to_json() if self.clean else None,
            "corruption_rows": [r.to_json() for r in self.corruption_rows],
            "attack_rows": [r.to_json() for r in self.attack_rows],
            "defense_rows": [r.to_json() for r in self.defense_rows],
            "total_queries": self.total_queries,
            "partial": self.partial,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationReport":
        return cls(
            metadata=obj["metadata"],
            clean=CleanRow.from_json(obj["clean"]) if obj.get("clean") else None,
            corruption_rows=[CorruptionRow.from_json(r) for r in obj["corruption_rows"]],
            attack_rows=[AttackRow.from_json(r) for r in obj["attack_rows"]],
            defense_rows=[DefenseRow.from_json(r) for r in obj["defense_rows"]],
            partial=obj.get("partial", False),
        )


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _mean_or_none(values) -> float | None:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(finite)) if finite else None


def _map_items(items, fn, parallelism: int):
    """Order-preserving map, optionally threaded; results sorted by index."""
    if parallelism <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def _clean_baseline(target, dataset: Dataset):
    queries_before = target.query_count
    preds = [target.classify(img) for img, _label in dataset.items]
    mask = [
        pred.top1_label == dataset.label_names[label]
        for pred, (_img, label) in zip(preds, dataset.items)
    ]
    if not any(mask):
        raise UndefinedRateError("model classifies nothing correctly on clean data")
    row = CleanRow(
        n=len(dataset.items),
        accuracy=sum(mask) / len(mask),
        queries=target.query_count - queries_before,
    )
    return preds, mask, row


# ------------------------------------------------------------- campaigns


def run_corruption_campaign(
    target,
    dataset: Dataset,
    methods: list,
    severities: list,
    policy: GatePolicy = None,
    seed: int = 0,
    parallelism: int = 1,
) -> EvaluationReport:
    """Corrupt, gate, classify, aggregate; deterministic per seed.

    Accuracy denominators are clean-correct items that pass the gate; a
    cell whose images are all gated out is marked empty instead of being
    fabricated.
    """
    policy = policy or GatePolicy()
    clean_preds, mask, clean_row = _clean_baseline(target, dataset)
    eligible = [i for i, ok in enumerate(mask) if ok]

    rows = []
    partial = False
    for method in sorted(methods):
        for severity in sorted(severities):

            def work(i, method=method, severity=severity):
                img, label = dataset.items[i]
                spec = CorruptionSpec(
                    method=method,
                    severity=severity,
                    seed=derive_seed(seed, "corrupt", method, severity, i),
                )
                corrupted = apply_corruption(img, spec)
                verdict = gate(img, corrupted, policy)
                if policy.mode == "reject" and not verdict.passed:
                    return ("gated", verdict)
                try:
                    pred = target.classify(corrupted)
                except TransportError:
                    return ("transport", verdict)
                correct = pred.top1_label == dataset.label_names[label]
                changed = pred.top1_label != clean_preds[i].top1_label
                return ("ok", verdict, correct, changed)

            queries_before = target.query_count
            outcomes = _map_items(eligible, work, parallelism)
            row_queries = target.query_count - queries_before
            classified = [o for o in outcomes if o[0] == "ok"]
            transport_failures = sum(1 for o in outcomes if o[0] == "transport")
            gate_passed = sum(1 for o in outcomes if o[1].passed)
            n = len(classified)
            annotation = None
            if transport_failures:
                partial = True
                annotation = "transport-partial"
            if n == 0:
                rows.append(
                    CorruptionRow(
                        method=method,
                        severity=severity,
                        n=0,
                        accuracy=None,
                        escape_rate=None,
                        mean_psnr_db=None,
                        mean_ssim=None,
                        gate_pass_fraction=gate_passed / len(outcomes),
                        queries=row_queries,
                        annotation=annotation or "gate-exhausted",
                    )
                )
                continue
            rows.append(
                CorruptionRow(
                    method=method,
                    severity=severity,
                    n=n,
                    accuracy=sum(1 for o in classified if o[2]) / n,
                    escape_rate=sum(1 for o in classified if o[3]) / n,
                    mean_psnr_db=_mean_or_none([o[1].metrics.psnr_db for o in classified]),
                    mean_ssim=_mean_or_none([o[1].metrics.ssim for o in classified]),
                    gate_pass_fraction=gate_passed / len(outcomes),
                    queries=row_queries,
                    annotation=annotation,
                )
            )

    return EvaluationReport(
        metadata=_metadata(target, seed, policy, dataset, parallelism),
        clean=clean_row,
        corruption_rows=rows,
        partial=partial,
    )


def run_attack_campaign(
    target,
    dataset: Dataset,
    cfgs: list,
    shadow: ModelParams = None,
    policy: GatePolicy = None,
    seed: int = 0,
    parallelism: int = 1,
) -> EvaluationReport:
    """Sweep attack configs; per-row escape rate, quality means, queries.

    White-box kinds (fgsm, pgd) craft against the local target's params and
    spend one evaluation query per item; ffl_pgd crafts on ``shadow`` and
    spends at most two target queries per item.
    """
    for cfg in cfgs:
        if cfg.kind in ("fgsm", "pgd") and not isinstance(target, LocalTarget):
            raise ValueError(f"{cfg.kind} is white-box: target must be local")
        if cfg.kind == "ffl_pgd" and shadow is None:
            raise ValueError("ffl_pgd requires a trained shadow model")

    clean_preds, mask, clean_row = _clean_baseline(target, dataset)
    eligible = [i for i, ok in enumerate(mask) if ok]

    rows = []
    partial = False
    for cfg in cfgs:

        def work(i, cfg=cfg):
            img, _label = dataset.items[i]
            label_ref = clean_preds[i].top1_index
            item_cfg = cfg.with_seed(derive_seed(cfg.seed, "item", i))
            try:
                if cfg.kind == "fgsm":
                    res = attack_mod.fgsm(target.params, img, label_ref, item_cfg)
                elif cfg.kind == "pgd":
                    res = attack_mod.pgd(target.params, img, label_ref, item_cfg)
                else:
                    res = attack_mod.ffl_pgd_attack(shadow, target, img, label_ref, item_cfg)
            except TransportError:
                return ("transport",)
            if cfg.kind in ("fgsm", "pgd"):
                # evaluate through the target so any defense pipeline applies
                try:
                    pred = target.classify(res.adversarial)
                except TransportError:
                    return ("transport",)
                escaped = pred.top1_index != label_ref
            else:
                escaped = res.escaped
            admitted = True
            if policy is not None and policy.mode == "reject":
                verdict = gate(img, res.adversarial, policy)
                admitted = verdict.passed
            return ("ok", res, escaped and admitted, admitted)

        queries_before = target.query_count
        outcomes = _map_items(eligible, work, parallelism)
        row_queries = target.query_count - queries_before
        done = [o for o in outcomes if o[0] == "ok"]
        transport_failures = sum(1 for o in outcomes if o[0] == "transport")
        if transport_failures:
            partial = True
        n = len(done)
        admitted = [o for o in done if o[3]]
        rows.append(
            AttackRow(
                kind=cfg.kind,
                epsilon=cfg.epsilon,
                steps=cfg.steps,
                n=n,
                escape_rate=(sum(1 for o in done if o[2]) / n) if n else None,
                mean_psnr_db=_mean_or_none([o[1].metrics.psnr_db for o in admitted]),
                mean_ssim=_mean_or_none([o[1].metrics.ssim for o in admitted]),
                queries=row_queries,
                indeterminate=transport_failures,
                partial=transport_failures > 0,
            )
        )

    return EvaluationReport(
        metadata=_metadata(target, seed, policy, dataset, parallelism),
        clean=clean_row,
        attack_rows=rows,
        partial=partial,
    )


def _metadata(target, seed, policy, dataset: Dataset, parallelism: int) -> dict:
    desc = target.descriptor() if hasattr(target, "descriptor") else {"kind": "unknown"}
    return {
        "seed": seed,
        "policy": policy.to_json() if policy is not None else None,
        "target": desc,
        "label_names": list(dataset.label_names),
        "dataset_size": len(dataset.items),
        "parallelism": parallelism,
        "timestamp": _timestamp(),
    }
