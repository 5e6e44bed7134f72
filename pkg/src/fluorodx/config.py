"""Pipeline configuration: one YAML file drives every CLI stage.

Validated with pydantic before any work starts; referenced paths must exist
at validation time.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .augment import AugStrategy, AugmentationSpec
from .manifest import SplitRatios
from .models import ArchitectureId
from .training import TrainConfig


class SplitSection(BaseModel):
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15

    def to_ratios(self) -> SplitRatios:
        return SplitRatios(self.train, self.val, self.test)


class AugmentationSection(BaseModel):
    copies_per_image: int = 3
    rotation_degrees: float = 30.0
    brightness_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    saturation_range: tuple[float, float] = (0.8, 1.2)
    flip_probability: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)

    def to_spec(self, strategy: AugStrategy, seed: int) -> AugmentationSpec:
        return AugmentationSpec(
            strategy=strategy,
            copies_per_image=self.copies_per_image,
            rotation_degrees=self.rotation_degrees,
            color_jitter=(self.brightness_range, self.contrast_range, self.saturation_range),
            flip_probability=self.flip_probability,
            blur_sigma_range=self.blur_sigma_range,
            seed=seed,
        )


class TrainingSection(BaseModel):
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 30
    batch_size: int = 32
    vit_batch_size: int = 16
    early_stop_patience: int = 10
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 5
    min_learning_rate: float = 1e-7

    def to_config(self, architecture: ArchitectureId, seed: int) -> TrainConfig:
        batch = self.vit_batch_size if architecture is ArchitectureId.VIT_B16 else self.batch_size
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            batch_size=batch,
            early_stop_patience=self.early_stop_patience,
            lr_reduce_factor=self.lr_reduce_factor,
            lr_reduce_patience=self.lr_reduce_patience,
            min_learning_rate=self.min_learning_rate,
            seed=seed,
        )


class GridSection(BaseModel):
    architectures: list[ArchitectureId] = Field(default_factory=lambda: list(ArchitectureId))
    strategies: list[AugStrategy] = Field(default_factory=lambda: list(AugStrategy))
    variants: list[str] = Field(default_factory=lambda: ["FFI", "SDP"])

    @field_validator("variants")
    @classmethod
    def _check_variants(cls, v):
        for item in v:
            if item not in ("FFI", "SDP"):
                raise ValueError(f"unknown dataset variant {item!r}")
        return v


class PipelineConfig(BaseModel):
    workspace: Path
    images_dir: Path
    annotations_dir: Path
    split: SplitSection = SplitSection()
    augmentation: AugmentationSection = AugmentationSection()
    training: TrainingSection = TrainingSection()
    grid: GridSection = GridSection()
    seed: int = 42
    cv_folds: int = 3
    padding_fraction: float = 0.1
    pretrained_backbone: bool = True

    @model_validator(mode="after")
    def _check_paths(self):
        for name in ("images_dir", "annotations_dir"):
            path = getattr(self, name)
            if not path.exists():
                raise ValueError(f"{name} does not exist: {path}")
        return self


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open() as f:
        payload = yaml.safe_load(f) or {}
    return PipelineConfig.model_validate(payload)
