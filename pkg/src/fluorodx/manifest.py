"""Dataset manifest: image records, labels, stratified splitting, class weights.

The manifest is a flat CSV file (header
``id,path,label,split,variant,origin,source_id,strategy_tag``) listing every
image with its label, split assignment, and provenance. All operations here
are pure: they take a manifest and return a new one.
"""

from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class ManifestError(ValueError):
    """Raised for malformed manifest files or invariant violations."""


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


class Variant(str, Enum):
    FFI = "FFI"
    SDP = "SDP"


class Origin(str, Enum):
    ORIGINAL = "original"
    AUGMENTED = "augmented"


MANIFEST_HEADER = ["id", "path", "label", "split", "variant", "origin", "source_id", "strategy_tag"]


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    label: Label
    split: Split = Split.UNASSIGNED
    variant: Variant = Variant.FFI
    origin: Origin = Origin.ORIGINAL
    source_id: str = ""
    strategy_tag: Optional[str] = None

    def __post_init__(self):
        if not self.source_id:
            object.__setattr__(self, "source_id", self.id)
        if self.origin is Origin.AUGMENTED:
            if self.source_id == self.id:
                raise ManifestError(f"augmented record {self.id!r} must reference a distinct source_id")
            if not self.strategy_tag:
                raise ManifestError(f"augmented record {self.id!r} must carry a strategy_tag")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    variant: Variant = Variant.FFI
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, split: Split | None = None, origin: Origin | None = None) -> "DatasetManifest":
        recs = [
            r
            for r in self.records
            if (split is None or r.split is split) and (origin is None or r.origin is origin)
        ]
        return DatasetManifest(tuple(recs), variant=self.variant, seed=self.seed)

    def originals(self) -> "DatasetManifest":
        return self.subset(origin=Origin.ORIGINAL)

    def ids(self) -> set[str]:
        return {r.id for r in self.records}


@dataclass(frozen=True)
class SplitRatios:
    train: float
    val: float
    test: float

    def __post_init__(self):
        for name, v in (("train", self.train), ("val", self.val), ("test", self.test)):
            if not 0.0 <= v <= 1.0:
                raise ManifestError(f"{name} ratio {v} outside [0, 1]")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ManifestError(f"split ratios sum to {self.train + self.val + self.test}, expected 1")


@dataclass(frozen=True)
class ClassWeights:
    weight_per_class: Mapping[Label, float]

    def __post_init__(self):
        object.__setattr__(self, "weight_per_class", dict(self.weight_per_class))
        for label, w in self.weight_per_class.items():
            if w <= 0:
                raise ManifestError(f"class weight for {label.value} must be positive, got {w}")

    def __getitem__(self, label: Label) -> float:
        return self.weight_per_class[label]


def load_manifest(path: str | Path, seed: int = 0) -> DatasetManifest:
    """Load a manifest CSV. Row numbers in errors are 1-based including the header."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header {','.join(MANIFEST_HEADER)}")
        if header != MANIFEST_HEADER:
            raise ManifestError(f"{path}: bad header {header!r}")
        records: list[ImageRecord] = []
        seen: set[str] = set()
        variant: Variant | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path} row {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            rid, rpath, label_s, split_s, variant_s, origin_s, source_id, tag = row
            if rid in seen:
                raise ManifestError(f"{path} row {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            try:
                label = Label(label_s)
            except ValueError:
                raise ManifestError(f"{path} row {lineno}: unknown label {label_s!r}")
            try:
                rec = ImageRecord(
                    id=rid,
                    path=rpath,
                    label=label,
                    split=Split(split_s),
                    variant=Variant(variant_s),
                    origin=Origin(origin_s),
                    source_id=source_id or rid,
                    strategy_tag=tag or None,
                )
            except ValueError as e:
                raise ManifestError(f"{path} row {lineno}: {e}")
            if variant is None:
                variant = rec.variant
            records.append(rec)
    return DatasetManifest(tuple(records), variant=variant or Variant.FFI, seed=seed)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest CSV atomically (tmp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for r in manifest.records:
        writer.writerow(
            [r.id, r.path, r.label.value, r.split.value, r.variant.value, r.origin.value, r.source_id, r.strategy_tag or ""]
        )
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue(), encoding="utf-8")
    tmp.replace(path)


def class_distribution(manifest: DatasetManifest, split: Split | str | None = None) -> dict[Label, int]:
    """Count records per label, optionally restricted to one split ("all"/None = everything)."""
    if isinstance(split, str) and split not in ("all",):
        split = Split(split)
    counts = {label: 0 for label in Label}
    for rec in manifest.records:
        if split in (None, "all") or rec.split is split:
            counts[rec.label] += 1
    return counts


def compute_class_weights(counts: Mapping[Label, int]) -> ClassWeights:
    """Inverse-frequency weights: w_c = N / (K * n_c)."""
    counts = {Label(k): int(v) for k, v in counts.items()}
    for label, n in counts.items():
        if n <= 0:
            raise ManifestError(f"class {label.value} has zero records; weights undefined")
    total = sum(counts.values())
    k = len(counts)
    return ClassWeights({label: total / (k * n) for label, n in counts.items()})


def largest_remainder_allocation(n: int, fractions: Sequence[float], priority: Sequence[int]) -> list[int]:
    """Split n items into len(fractions) buckets by floor + largest remainder.

    Leftover units go to the buckets with the largest fractional remainder;
    ties are broken by position in `priority` (earlier wins).
    """
    exact = [n * f for f in fractions]
    counts = [int(np.floor(x)) for x in exact]
    leftover = n - sum(counts)
    remainders = [x - c for x, c in zip(exact, counts)]
    prio_rank = {bucket: i for i, bucket in enumerate(priority)}
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], prio_rank[i]))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(manifest: DatasetManifest, ratios: SplitRatios, seed: int) -> DatasetManifest:
    """Assign train/val/test per class, preserving class proportions.

    Per-class counts use floor + largest-remainder with leftovers preferring
    test, then val, then train. The assignment within a class is a
    seed-determined permutation; record order in the output matches the input.
    """
    for rec in manifest.records:
        if rec.split is not Split.UNASSIGNED:
            raise ManifestError(f"record {rec.id!r} already assigned to {rec.split.value}")
        if rec.origin is not Origin.ORIGINAL:
            raise ManifestError(f"record {rec.id!r} is augmented; split only originals")

    by_class: "OrderedDict[Label, list[int]]" = OrderedDict()
    for label in sorted(Label, key=lambda l: l.value):
        by_class[label] = []
    for idx, rec in enumerate(manifest.records):
        by_class[rec.label].append(idx)

    assignment: dict[int, Split] = {}
    # leftover priority: test, val, train (bucket order below is train/val/test)
    for class_idx, (label, indices) in enumerate(by_class.items()):
        if not indices:
            raise ManifestError(f"class {label.value} has no records to split")
        n_train, n_val, n_test = largest_remainder_allocation(
            len(indices), [ratios.train, ratios.val, ratios.test], priority=[2, 1, 0]
        )
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(class_idx,)))
        perm = rng.permutation(len(indices))
        shuffled = [indices[i] for i in perm]
        for i in shuffled[:n_train]:
            assignment[i] = Split.TRAIN
        for i in shuffled[n_train : n_train + n_val]:
            assignment[i] = Split.VAL
        for i in shuffled[n_train + n_val :]:
            assignment[i] = Split.TEST

    new_records = tuple(replace(rec, split=assignment[i]) for i, rec in enumerate(manifest.records))
    return DatasetManifest(new_records, variant=manifest.variant, seed=seed)
