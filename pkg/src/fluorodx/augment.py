"""The three training-set augmentation strategies and the 4x expansion.

Images are H x W x 3 float arrays with values in [0, 1]. Every transform
preserves shape and clamps its output back into [0, 1]. Randomness is fully
deterministic: each augmented copy owns a private RNG stream derived from
(seed, source id, strategy, copy index), so outputs do not depend on
processing order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import ImageEnhance, ImageOps
from scipy import ndimage

from .manifest import DatasetManifest, ImageRecord, ManifestError, Origin, Split

LUMA = np.array([0.299, 0.587, 0.114])


class AugStrategy(str, Enum):
    TRIVIAL_AUGMENT_WIDE = "TrivialAugmentWide"
    GEOMETRIC_COLOR = "GeometricColor"
    SPATIAL_BLUR = "SpatialBlur"


@dataclass(frozen=True)
class AugmentationSpec:
    strategy: AugStrategy
    copies_per_image: int = 3
    rotation_degrees: float = 30.0
    color_jitter: tuple[tuple[float, float], ...] = ((0.8, 1.2), (0.8, 1.2), (0.8, 1.2))
    flip_probability: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)
    seed: int = 42

    def __post_init__(self):
        if self.copies_per_image < 0:
            raise ValueError("copies_per_image must be >= 0")
        if self.rotation_degrees < 0:
            raise ValueError("rotation_degrees must be >= 0")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must be in [0, 1]")
        for lo, hi in self.color_jitter:
            if not lo <= 1.0 <= hi:
                raise ValueError(f"jitter range ({lo}, {hi}) must contain 1.0")
        lo, hi = self.blur_sigma_range
        if lo <= 0 or hi < lo:
            raise ValueError("blur_sigma_range must be a positive interval")


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG/JPEG into a float [0,1] RGB array."""
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_image(array: np.ndarray, path: str | Path) -> None:
    to_pil(array).save(path)


def to_pil(array: np.ndarray) -> PILImage.Image:
    return PILImage.fromarray(np.clip(np.round(array * 255.0), 0, 255).astype(np.uint8))


def from_pil(img: PILImage.Image) -> np.ndarray:
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# TrivialAugmentWide: one uniformly chosen operation, one uniformly chosen
# magnitude from a wide 31-bin range, per image.

_TAW_BINS = 31

# op name -> (max magnitude, signed)
_TAW_OPS = {
    "identity": (0.0, False),
    "hflip": (0.0, False),
    "shear_x": (0.99, True),
    "shear_y": (0.99, True),
    "translate_x": (32.0, True),
    "translate_y": (32.0, True),
    "rotate": (135.0, True),
    "brightness": (0.99, True),
    "contrast": (0.99, True),
    "color": (0.99, True),
    "sharpness": (0.99, True),
    "posterize": (6.0, False),
    "solarize": (255.0, False),
    "equalize": (0.0, False),
    "autocontrast": (0.0, False),
}


def _taw_apply(img: PILImage.Image, op: str, magnitude: float) -> PILImage.Image:
    w, h = img.size
    if op == "identity":
        return img
    if op == "hflip":
        return img.transpose(PILImage.Transpose.FLIP_LEFT_RIGHT)
    if op == "shear_x":
        return img.transform((w, h), PILImage.Transform.AFFINE, (1, magnitude, 0, 0, 1, 0), resample=PILImage.Resampling.BILINEAR)
    if op == "shear_y":
        return img.transform((w, h), PILImage.Transform.AFFINE, (1, 0, 0, magnitude, 1, 0), resample=PILImage.Resampling.BILINEAR)
    if op == "translate_x":
        return img.transform((w, h), PILImage.Transform.AFFINE, (1, 0, magnitude, 0, 1, 0), resample=PILImage.Resampling.BILINEAR)
    if op == "translate_y":
        return img.transform((w, h), PILImage.Transform.AFFINE, (1, 0, 0, 0, 1, magnitude), resample=PILImage.Resampling.BILINEAR)
    if op == "rotate":
        return img.rotate(magnitude, resample=PILImage.Resampling.BILINEAR)
    if op == "brightness":
        return ImageEnhance.Brightness(img).enhance(1.0 + magnitude)
    if op == "contrast":
        return ImageEnhance.Contrast(img).enhance(1.0 + magnitude)
    if op == "color":
        return ImageEnhance.Color(img).enhance(1.0 + magnitude)
    if op == "sharpness":
        return ImageEnhance.Sharpness(img).enhance(1.0 + magnitude)
    if op == "posterize":
        return ImageOps.posterize(img, 8 - int(magnitude))
    if op == "solarize":
        return ImageOps.solarize(img, int(255.0 - magnitude))
    if op == "equalize":
        return ImageOps.equalize(img)
    if op == "autocontrast":
        return ImageOps.autocontrast(img)
    raise ValueError(f"unknown op {op!r}")


def trivial_augment_wide(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply exactly one operation with a uniformly sampled wide-range magnitude."""
    ops = list(_TAW_OPS)
    op = ops[int(rng.integers(len(ops)))]
    max_mag, signed = _TAW_OPS[op]
    magnitude = max_mag * int(rng.integers(_TAW_BINS)) / (_TAW_BINS - 1)
    if signed and rng.random() < 0.5:
        magnitude = -magnitude
    out = _taw_apply(to_pil(image), op, magnitude)
    if out.size != to_pil(image).size:
        raise AssertionError("augment op changed image size")
    return from_pil(out)


# ---------------------------------------------------------------------------
# Geometric & Color: random rotation plus brightness/contrast/saturation jitter.


def _gray(image: np.ndarray) -> np.ndarray:
    return image @ LUMA


def geometric_color(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    angle = float(rng.uniform(-spec.rotation_degrees, spec.rotation_degrees))
    out = image
    if angle != 0.0:
        out = ndimage.rotate(out, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)
    (b_lo, b_hi), (c_lo, c_hi), (s_lo, s_hi) = spec.color_jitter
    brightness = float(rng.uniform(b_lo, b_hi))
    contrast = float(rng.uniform(c_lo, c_hi))
    saturation = float(rng.uniform(s_lo, s_hi))
    out = out * brightness
    mean = _gray(out).mean()
    out = mean + (out - mean) * contrast
    gray = _gray(out)[..., None]
    out = gray + (out - gray) * saturation
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Spatial & Blur: horizontal flip plus Gaussian blur with reflective borders.


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(k**2) / (2.0 * sigma**2))
    return weights / weights.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(image, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def spatial_blur(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    out = image
    if rng.random() < spec.flip_probability:
        out = out[:, ::-1, :]
    sigma = float(rng.uniform(*spec.blur_sigma_range))
    return gaussian_blur(out, sigma)


# ---------------------------------------------------------------------------


def apply_strategy(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.strategy is AugStrategy.TRIVIAL_AUGMENT_WIDE:
        return trivial_augment_wide(image, rng)
    if spec.strategy is AugStrategy.GEOMETRIC_COLOR:
        return geometric_color(image, spec, rng)
    if spec.strategy is AugStrategy.SPATIAL_BLUR:
        return spatial_blur(image, spec, rng)
    raise ValueError(f"unknown strategy {spec.strategy}")


def rng_for(seed: int, source_id: str, strategy: AugStrategy, copy_index: int) -> np.random.Generator:
    """Private per-copy RNG stream, independent of processing order."""
    digest = hashlib.sha256(f"{seed}:{source_id}:{strategy.value}:{copy_index}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def expand_training_set(manifest: DatasetManifest, spec: AugmentationSpec, output_dir: str | Path) -> DatasetManifest:
    """Write copies_per_image augmented PNGs per original training record.

    Originals are retained; augmented records are appended with the strategy
    tag. Augmentation is a training-set-only operation: any non-train record
    in the input is a contract violation.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        if rec.split is not Split.TRAIN:
            raise ManifestError(f"record {rec.id!r} has split {rec.split.value}; augmentation is train-only")
        if rec.origin is not Origin.ORIGINAL:
            raise ManifestError(f"record {rec.id!r} is already augmented")

    augmented: list[ImageRecord] = []
    for rec in manifest.records:
        image = load_image(rec.path)
        for k in range(1, spec.copies_per_image + 1):
            rng = rng_for(spec.seed, rec.id, spec.strategy, k)
            out = apply_strategy(image, spec, rng)
            name = f"{rec.id}__{spec.strategy.value}__{k}.png"
            out_path = output_dir / name
            save_image(out, out_path)
            augmented.append(
                ImageRecord(
                    id=f"{rec.id}__{spec.strategy.value}__{k}",
                    path=str(out_path),
                    label=rec.label,
                    split=Split.TRAIN,
                    variant=rec.variant,
                    origin=Origin.AUGMENTED,
                    source_id=rec.id,
                    strategy_tag=spec.strategy.value,
                )
            )
    return DatasetManifest(manifest.records + tuple(augmented), variant=manifest.variant, seed=spec.seed)
