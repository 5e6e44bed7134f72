"""Synthetic fixture corpus: fluorescent-blob positives vs noise negatives.

Mimics the shape of the real task (bright localized green foci on a dark
field) at desk scale, so the full pipeline can be exercised end to end with
a known ground truth, including the blob location for relevance-map checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import save_image
from .manifest import DatasetManifest, ImageRecord, Label, Variant, save_manifest
from .roi import BoundingBox


@dataclass
class SyntheticCorpus:
    root: Path
    images_dir: Path
    annotations_dir: Path
    manifest: DatasetManifest
    manifest_path: Path
    blob_boxes: dict[str, BoundingBox]  # positives only


def _noise_background(rng: np.random.Generator, size: int) -> np.ndarray:
    img = np.zeros((size, size, 3))
    img[..., 0] = rng.uniform(0.0, 0.08, (size, size))
    img[..., 1] = rng.uniform(0.0, 0.15, (size, size))
    img[..., 2] = rng.uniform(0.0, 0.08, (size, size))
    return img


def _add_blob(img: np.ndarray, rng: np.random.Generator) -> BoundingBox:
    size = img.shape[0]
    radius = rng.uniform(0.10, 0.16) * size
    margin = int(radius * 2) + 4
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    yy, xx = np.mgrid[0:size, 0:size]
    dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
    blob = np.exp(-dist2 / (2 * (radius / 1.5) ** 2))
    img[..., 1] = np.clip(img[..., 1] + blob, 0, 1)
    img[..., 0] = np.clip(img[..., 0] + 0.35 * blob, 0, 1)
    half = 2 * radius
    return BoundingBox(
        class_index=0,
        center_x=cx / size,
        center_y=cy / size,
        width=min(1.0, 2 * half / size),
        height=min(1.0, 2 * half / size),
    )


def generate_corpus(
    root: str | Path,
    n_positive: int = 123,
    n_negative: int = 32,
    image_size: int = 192,
    seed: int = 42,
) -> SyntheticCorpus:
    root = Path(root)
    images_dir = root / "images"
    annotations_dir = root / "annotations"
    images_dir.mkdir(parents=True, exist_ok=True)
    annotations_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    blob_boxes: dict[str, BoundingBox] = {}
    rng = np.random.default_rng(seed)
    specs = [(f"pos_{i:03d}", Label.POSITIVE) for i in range(n_positive)]
    specs += [(f"neg_{i:03d}", Label.NEGATIVE) for i in range(n_negative)]
    for rec_id, label in specs:
        img = _noise_background(rng, image_size)
        ann_path = annotations_dir / f"{rec_id}.txt"
        if label is Label.POSITIVE:
            box = _add_blob(img, rng)
            blob_boxes[rec_id] = box
            ann_path.write_text(
                f"{box.class_index} {box.center_x:.6f} {box.center_y:.6f} {box.width:.6f} {box.height:.6f}\n"
            )
        else:
            ann_path.write_text("")
        img_path = images_dir / f"{rec_id}.png"
        save_image(img, img_path)
        records.append(ImageRecord(id=rec_id, path=str(img_path), label=label, variant=Variant.FFI))

    manifest = DatasetManifest(tuple(records), variant=Variant.FFI, seed=seed)
    manifest_path = root / "ffi_manifest.csv"
    save_manifest(manifest, manifest_path)
    return SyntheticCorpus(
        root=root,
        images_dir=images_dir,
        annotations_dir=annotations_dir,
        manifest=manifest,
        manifest_path=manifest_path,
        blob_boxes=blob_boxes,
    )
