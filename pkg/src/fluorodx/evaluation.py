"""Metrics, stratified K-fold cross-validation over the configuration grid,
best-configuration selection, and final retraining on the full training set.

Folds are drawn over original records grouped by source id; augmentation is
applied inside each fold to the train side only, so no augmented
near-duplicate of a validation image can leak into training.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .augment import AugmentationSpec, AugStrategy, expand_training_set
from .manifest import DatasetManifest, Label, ManifestError, Origin, Split, save_manifest
from .models import (
    ArchitectureId,
    LABEL_TO_INDEX,
    build_model,
    reference_parameter_count,
    save_checkpoint,
)
from .training import TrainConfig, TrainingHistory, predict_manifest, train

logger = logging.getLogger(__name__)

SCALAR_METRICS = ("accuracy", "precision", "recall", "f1", "auc")


class ConfigAborted(RuntimeError):
    """A cross-validation config could not be evaluated (e.g. single-class fold)."""


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    confusion: tuple[tuple[int, int], tuple[int, int]]
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "confusion": [list(row) for row in self.confusion],
            "n": self.n,
        }


def auc_score(true_labels: Sequence[int], positive_scores: Sequence[float]) -> Optional[float]:
    """Mann-Whitney pair statistic with ties counted 0.5; None if one class is absent."""
    y = np.asarray(true_labels)
    s = np.asarray(positive_scores, dtype=np.float64)
    pos = LABEL_TO_INDEX[Label.POSITIVE]
    n_pos = int((y == pos).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(s)
    u = ranks[y == pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def compute_metrics(
    true_labels: Sequence[int], predicted_labels: Sequence[int], positive_scores: Sequence[float]
) -> MetricReport:
    """Standard binary metrics; the positive class drives precision/recall."""
    y = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    s = np.asarray(positive_scores, dtype=np.float64)
    if not (len(y) == len(p) == len(s)) or len(y) == 0:
        raise ValueError(f"length mismatch or empty input: {len(y)}, {len(p)}, {len(s)}")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("positive scores must lie in [0, 1]")

    pos = LABEL_TO_INDEX[Label.POSITIVE]
    confusion = [[0, 0], [0, 0]]
    for t, q in zip(y, p):
        confusion[int(t)][int(q)] += 1
    tp = confusion[pos][pos]
    fp = sum(confusion[t][pos] for t in range(2) if t != pos)
    fn = sum(confusion[pos][q] for q in range(2) if q != pos)
    accuracy = float((y == p).mean())
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return MetricReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc_score(y, s),
        confusion=(tuple(confusion[0]), tuple(confusion[1])),
        n=len(y),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    architecture: ArchitectureId
    augmentation: AugmentationSpec
    dataset_variant: str  # "FFI" | "SDP"
    train_config: TrainConfig
    pretrained_backbone: bool = True

    def digest(self) -> str:
        payload = json.dumps(
            {
                "architecture": self.architecture.value,
                "strategy": self.augmentation.strategy.value,
                "copies": self.augmentation.copies_per_image,
                "aug_seed": self.augmentation.seed,
                "variant": self.dataset_variant,
                "train": dataclasses.asdict(
                    dataclasses.replace(self.train_config, class_weights=None)
                ),
                "pretrained": self.pretrained_backbone,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def short_name(self) -> str:
        return f"{self.architecture.value}_{self.augmentation.strategy.value}_{self.dataset_variant}"


@dataclass
class CVResult:
    config: ExperimentConfig
    per_fold: list[MetricReport]
    mean_report: dict[str, Optional[float]]
    std_report: dict[str, Optional[float]]
    histories: list[TrainingHistory] = field(default_factory=list)


def summarize_folds(per_fold: Sequence[MetricReport]) -> tuple[dict, dict]:
    """Field-wise mean and (population) std over folds; None-valued AUCs drop the field."""
    mean, std = {}, {}
    for name in SCALAR_METRICS:
        values = [getattr(r, name) for r in per_fold]
        if any(v is None for v in values):
            mean[name] = std[name] = None
        else:
            arr = np.asarray(values, dtype=np.float64)
            mean[name] = float(arr.mean())
            std[name] = float(arr.std())
    return mean, std


def stratified_kfold(manifest: DatasetManifest, k: int, seed: int) -> list[tuple[DatasetManifest, DatasetManifest]]:
    """K (train, val) pairs over original records, stratified per class and
    grouped by source_id so sibling patches never straddle a fold boundary.
    Augmented records in the input follow their source into the train side and
    are dropped when the source lands on the val side."""
    if k < 2:
        raise ValueError("k must be >= 2")
    originals = [r for r in manifest.records if r.origin is Origin.ORIGINAL]
    augmented_by_source: dict[str, list] = {}
    for r in manifest.records:
        if r.origin is Origin.AUGMENTED:
            augmented_by_source.setdefault(r.source_id, []).append(r)

    # group originals by source_id, one class per group
    groups: dict[str, list] = {}
    for r in originals:
        groups.setdefault(r.source_id, []).append(r)
    by_class: dict[Label, list[str]] = {label: [] for label in sorted(Label, key=lambda l: l.value)}
    class_records = {label: 0 for label in by_class}
    for gid, members in groups.items():
        label = members[0].label
        by_class[label].append(gid)
        class_records[label] += len(members)
    # leave-one-out (k == number of groups) is allowed even though classes
    # are then necessarily smaller than k
    if k != len(groups):
        for label, cnt in class_records.items():
            if 0 < cnt < k:
                raise ManifestError(f"class {label.value} has {cnt} records, fewer than k={k}")

    # per-class record targets: floor + leftovers to the currently smallest fold
    targets = {label: [0] * k for label in by_class}
    totals = [0] * k
    for label in by_class:
        n = class_records[label]
        base = n // k
        for f in range(k):
            targets[label][f] = base
            totals[f] += base
        for _ in range(n - base * k):
            f = min(range(k), key=lambda i: (totals[i], i))
            targets[label][f] += 1
            totals[f] += 1

    # assign shuffled groups to the fold with the largest remaining deficit
    fold_ids: list[set[str]] = [set() for _ in range(k)]
    for class_idx, (label, gids) in enumerate(by_class.items()):
        if not gids:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7, class_idx)))
        order = [gids[i] for i in rng.permutation(len(gids))]
        deficit = list(targets[label])
        for gid in order:
            f = max(range(k), key=lambda i: (deficit[i], -i))
            fold_ids[f].add(gid)
            deficit[f] -= len(groups[gid])

    pairs = []
    for f in range(k):
        val_recs = [r for r in originals if r.source_id in fold_ids[f]]
        train_recs = [r for r in originals if r.source_id not in fold_ids[f]]
        train_aug = [a for r in train_recs for a in augmented_by_source.get(r.id, [])]
        pairs.append(
            (
                DatasetManifest(tuple(train_recs + train_aug), variant=manifest.variant, seed=seed),
                DatasetManifest(tuple(val_recs), variant=manifest.variant, seed=seed),
            )
        )
    return pairs


def _train_split(manifest: DatasetManifest) -> DatasetManifest:
    assigned = manifest.subset(split=Split.TRAIN)
    return assigned if len(assigned) else manifest


def evaluate_config(
    config: ExperimentConfig,
    manifest: DatasetManifest,
    k: int,
    seed: int,
    work_dir: Path,
) -> CVResult:
    """K train/evaluate cycles for one grid point."""
    originals = _train_split(manifest).originals()
    folds = stratified_kfold(originals, k, seed)
    per_fold: list[MetricReport] = []
    histories: list[TrainingHistory] = []
    aug_dir = work_dir / "augmented" / f"{config.dataset_variant}_{config.augmentation.strategy.value}"
    for i, (fold_train, fold_val) in enumerate(folds):
        val_classes = {r.label for r in fold_val.records}
        if len(val_classes) < 2:
            raise ConfigAborted(
                f"{config.short_name()}: fold {i} validation side has a single class {val_classes}"
            )
        expanded = expand_training_set(fold_train, config.augmentation, aug_dir)
        model = build_model(
            config.architecture,
            freeze_backbone=True,
            pretrained=config.pretrained_backbone,
            seed=config.train_config.seed,
        )
        model, history = train(model, expanded, fold_val, config.train_config, init_seed=config.train_config.seed)
        true, pred, scores = predict_manifest(model, fold_val, init_seed=config.train_config.seed)
        per_fold.append(compute_metrics(true, pred, scores))
        histories.append(history)
    mean, std = summarize_folds(per_fold)
    return CVResult(config=config, per_fold=per_fold, mean_report=mean, std_report=std, histories=histories)


def _result_to_dict(result: CVResult) -> dict:
    return {
        "config": {
            "architecture": result.config.architecture.value,
            "strategy": result.config.augmentation.strategy.value,
            "variant": result.config.dataset_variant,
            "digest": result.config.digest(),
        },
        "per_fold": [r.to_dict() for r in result.per_fold],
        "mean": result.mean_report,
        "std": result.std_report,
    }


def run_cross_validation(
    grid: Sequence[ExperimentConfig],
    data: Mapping[str, DatasetManifest],
    k: int,
    seed: int,
    work_dir: str | Path,
    resume: bool = False,
) -> list[CVResult]:
    """Sweep the grid; each config's result is persisted to its own JSON file
    under work_dir/results so an interrupted sweep can resume."""
    if not grid:
        raise ValueError("empty configuration grid")
    work_dir = Path(work_dir)
    results_dir = work_dir / "results"
    results_dir.mkdir(parents=True, exist_ok=True)
    results: list[CVResult] = []
    for config in grid:
        if config.dataset_variant not in data:
            raise ManifestError(f"no dataset prepared for variant {config.dataset_variant}")
        out_path = results_dir / f"{config.short_name()}_{config.digest()}.json"
        if resume and out_path.exists():
            logger.info("skipping %s (result exists)", config.short_name())
            cached = json.loads(out_path.read_text())
            results.append(_result_from_dict(cached, config))
            continue
        try:
            result = evaluate_config(config, data[config.dataset_variant], k, seed, work_dir)
        except ConfigAborted as e:
            logger.error("aborted config: %s", e)
            continue
        tmp = out_path.with_name(out_path.name + ".tmp")
        tmp.write_text(json.dumps(_result_to_dict(result), indent=2, sort_keys=True) + "\n")
        tmp.replace(out_path)
        results.append(result)
    return results


def _result_from_dict(payload: dict, config: ExperimentConfig) -> CVResult:
    per_fold = [
        MetricReport(
            accuracy=d["accuracy"],
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            auc=d["auc"],
            confusion=tuple(tuple(row) for row in d["confusion"]),
            n=d["n"],
        )
        for d in payload["per_fold"]
    ]
    return CVResult(config=config, per_fold=per_fold, mean_report=payload["mean"], std_report=payload["std"])


_PARAM_COUNTS: dict[ArchitectureId, int] = {}


def _arch_params(arch: ArchitectureId) -> int:
    if arch not in _PARAM_COUNTS:
        _PARAM_COUNTS[arch] = reference_parameter_count(arch)
    return _PARAM_COUNTS[arch]


def select_best(results: Sequence[CVResult]) -> ExperimentConfig:
    """Deterministic ranking: mean F1 desc, F1 std asc, parameter count asc,
    then architecture enum order."""
    if not results:
        raise ValueError("no results to select from")
    arch_order = {arch: i for i, arch in enumerate(ArchitectureId)}

    def key(r: CVResult):
        mean_f1 = r.mean_report.get("f1")
        std_f1 = r.std_report.get("f1")
        return (
            -(mean_f1 if mean_f1 is not None else -1.0),
            std_f1 if std_f1 is not None else float("inf"),
            _arch_params(r.config.architecture),
            arch_order[r.config.architecture],
        )

    return min(results, key=key).config


def final_retrain(
    config: ExperimentConfig,
    full_train: DatasetManifest,
    val: DatasetManifest,
    test: DatasetManifest,
    work_dir: str | Path,
) -> tuple[Path, MetricReport]:
    """Retrain the selected config on the complete augmented training set and
    evaluate once on the held-out test set. Guards against any test id having
    leaked into the training manifest."""
    work_dir = Path(work_dir)
    train_ids = full_train.ids() | {r.source_id for r in full_train.records}
    for rec in test.records:
        if rec.id in train_ids or rec.source_id in train_ids:
            raise ManifestError(f"leakage: test record {rec.id!r} appears in the training manifest")
    model = build_model(
        config.architecture,
        freeze_backbone=True,
        pretrained=config.pretrained_backbone,
        seed=config.train_config.seed,
    )
    model, history = train(model, full_train, val, config.train_config, init_seed=config.train_config.seed)
    true, pred, scores = predict_manifest(model, test, init_seed=config.train_config.seed)
    report = compute_metrics(true, pred, scores)

    ckpt_dir = work_dir / "checkpoints"
    ckpt_path = ckpt_dir / "final_model.pt"
    save_checkpoint(
        model,
        ckpt_path,
        metadata={
            "dataset_variant": config.dataset_variant,
            "augmentation_strategy": config.augmentation.strategy.value,
            "train_config_digest": config.digest(),
            "init_seed": config.train_config.seed,
        },
    )
    (ckpt_dir / "test_metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    history_rows = [
        f"{e.epoch}\t{e.train_loss:.6f}\t{e.val_loss:.6f}\t{e.val_accuracy:.4f}\t{e.learning_rate:.2e}"
        for e in history.epochs
    ]
    (ckpt_dir / "training_history.tsv").write_text(
        "epoch\ttrain_loss\tval_loss\tval_accuracy\tlearning_rate\n" + "\n".join(history_rows) + "\n"
    )
    return ckpt_path, report
