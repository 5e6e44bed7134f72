"""ROI extraction: turn full-field images plus bounding-box annotation files
into the cropped segmented-diagnostic-patch (SDP) dataset variant.

Annotation files are the normalized five-field text format used by the
object-detection ecosystem: one line per box, ``class cx cy w h`` with
coordinates as fractions of the image dimensions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from PIL import Image as PILImage

from .manifest import DatasetManifest, ImageRecord, ManifestError, Origin, Variant

logger = logging.getLogger(__name__)

DEFAULT_PADDING = 0.1


class AnnotationError(ValueError):
    """Raised for malformed annotation files."""


@dataclass(frozen=True)
class BoundingBox:
    class_index: int
    center_x: float
    center_y: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("center_x", "center_y", "width", "height"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AnnotationError(f"{name}={v} outside [0, 1]")
        if self.width <= 0 or self.height <= 0:
            raise AnnotationError("box width and height must be > 0")


@dataclass(frozen=True)
class PixelRect:
    left: int
    top: int
    right: int
    bottom: int


def parse_annotations(path: str | Path) -> list[BoundingBox]:
    path = Path(path)
    if not path.exists():
        raise AnnotationError(f"annotation file not found: {path}")
    boxes: list[BoundingBox] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise AnnotationError(f"{path} line {lineno}: expected 5 fields, got {len(fields)}")
        try:
            cls = int(float(fields[0]))
            cx, cy, w, h = (float(x) for x in fields[1:])
        except ValueError:
            raise AnnotationError(f"{path} line {lineno}: non-numeric field")
        try:
            boxes.append(BoundingBox(cls, cx, cy, w, h))
        except AnnotationError as e:
            raise AnnotationError(f"{path} line {lineno}: {e}")
    return boxes


def to_pixel_rect(box: BoundingBox, image_width: int, image_height: int, padding_fraction: float = DEFAULT_PADDING) -> PixelRect:
    """Realize a normalized box in pixel space, padded then clamped to bounds."""
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    if padding_fraction < 0:
        raise ValueError("padding_fraction must be >= 0")
    half_w = (box.width / 2) * (1 + padding_fraction) * image_width
    half_h = (box.height / 2) * (1 + padding_fraction) * image_height
    cx = box.center_x * image_width
    cy = box.center_y * image_height
    left = max(0, int(round(cx - half_w)))
    right = min(image_width, int(round(cx + half_w)))
    top = max(0, int(round(cy - half_h)))
    bottom = min(image_height, int(round(cy + half_h)))
    if right <= left or bottom <= top:
        raise ValueError(f"degenerate crop rect ({left},{top},{right},{bottom})")
    return PixelRect(left, top, right, bottom)


def build_sdp_dataset(
    ffi_manifest: DatasetManifest,
    annotations_dir: str | Path,
    output_dir: str | Path,
    padding_fraction: float = DEFAULT_PADDING,
) -> DatasetManifest:
    """Crop every annotated region of every FFI record into an SDP record.

    One SDP record per bounding box, inheriting label and split from its
    source. Images with an empty annotation file fall back to a single
    full-image patch (with a warning) so dataset counts are preserved.
    """
    annotations_dir = Path(annotations_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    sdp_records: list[ImageRecord] = []
    for rec in ffi_manifest.records:
        if rec.origin is not Origin.ORIGINAL:
            raise ManifestError(f"SDP extraction expects original records, got augmented {rec.id!r}")
        ann_path = annotations_dir / (Path(rec.path).stem + ".txt")
        boxes = parse_annotations(ann_path)
        try:
            img = PILImage.open(rec.path).convert("RGB")
        except OSError as e:
            raise ManifestError(f"unreadable image {rec.path}: {e}")
        if not boxes:
            logger.warning("no boxes for %s; keeping full image as its own patch", rec.id)
            out_path = output_dir / f"{rec.id}__sdp_full.png"
            img.save(out_path)
            sdp_records.append(
                ImageRecord(
                    id=f"{rec.id}__sdp_full",
                    path=str(out_path),
                    label=rec.label,
                    split=rec.split,
                    variant=Variant.SDP,
                    source_id=rec.id,
                )
            )
            continue
        for k, box in enumerate(boxes):
            rect = to_pixel_rect(box, img.width, img.height, padding_fraction)
            crop = img.crop((rect.left, rect.top, rect.right, rect.bottom))
            out_path = output_dir / f"{rec.id}__sdp_{k}.png"
            crop.save(out_path)
            sdp_records.append(
                ImageRecord(
                    id=f"{rec.id}__sdp_{k}",
                    path=str(out_path),
                    label=rec.label,
                    split=rec.split,
                    variant=Variant.SDP,
                    source_id=rec.id,
                )
            )
    return DatasetManifest(tuple(sdp_records), variant=Variant.SDP, seed=ffi_manifest.seed)
