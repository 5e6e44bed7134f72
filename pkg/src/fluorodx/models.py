"""Pretrained backbones with a trainable binary classification head.

Four architectures are supported: EfficientNet-B0, EfficientNet-B2, VGG16,
and ViT-B-16. The backbone is the stock torchvision network with its final
classification layer swapped for a fresh 2-logit linear head; with freezing
enabled, only the head receives gradients.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
from PIL import Image as PILImage
from torchvision import models as tvm

from .manifest import Label

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INPUT_SIZE = 224

# class order fixed across the whole toolkit: logit 0 = negative, logit 1 = positive
CLASS_ORDER = (Label.NEGATIVE, Label.POSITIVE)
LABEL_TO_INDEX = {label: i for i, label in enumerate(CLASS_ORDER)}


class WeightsUnavailableError(RuntimeError):
    pass


class ArchitectureId(str, Enum):
    EFFICIENTNET_B0 = "EfficientNetB0"
    EFFICIENTNET_B2 = "EfficientNetB2"
    VGG16 = "VGG16"
    VIT_B16 = "ViTB16"


_BUILDERS = {
    ArchitectureId.EFFICIENTNET_B0: (tvm.efficientnet_b0, tvm.EfficientNet_B0_Weights.IMAGENET1K_V1),
    ArchitectureId.EFFICIENTNET_B2: (tvm.efficientnet_b2, tvm.EfficientNet_B2_Weights.IMAGENET1K_V1),
    ArchitectureId.VGG16: (tvm.vgg16, tvm.VGG16_Weights.IMAGENET1K_V1),
    ArchitectureId.VIT_B16: (tvm.vit_b_16, tvm.ViT_B_16_Weights.IMAGENET1K_V1),
}


@dataclass
class ClassifierModel:
    architecture: ArchitectureId
    module: nn.Module
    head: nn.Linear
    feature_dim: int
    frozen: bool
    pretrained: bool
    input_size: int = INPUT_SIZE
    normalization: tuple = (IMAGENET_MEAN, IMAGENET_STD)

    def total_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def trainable_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters() if p.requires_grad)

    def head_parameters(self) -> int:
        return sum(p.numel() for p in self.head.parameters())

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.module(batch)

    @torch.no_grad()
    def extract_features(self, batch: torch.Tensor) -> torch.Tensor:
        """Penultimate activations (the head's input), for frozen-backbone training."""
        captured: list[torch.Tensor] = []
        hook = self.head.register_forward_hook(lambda m, inp, out: captured.append(inp[0].detach()))
        try:
            self.module(batch)
        finally:
            hook.remove()
        return captured[0]

    def eval(self) -> "ClassifierModel":
        self.module.eval()
        return self


def _replace_final_linear(arch: ArchitectureId, module: nn.Module) -> nn.Linear:
    """Swap the architecture's last classification layer for a 2-logit linear."""
    if arch in (ArchitectureId.EFFICIENTNET_B0, ArchitectureId.EFFICIENTNET_B2):
        in_features = module.classifier[1].in_features
        head = nn.Linear(in_features, 2)
        module.classifier = head  # drops the stock dropout: the head is a single affine layer
    elif arch is ArchitectureId.VGG16:
        in_features = module.classifier[6].in_features
        head = nn.Linear(in_features, 2)
        module.classifier[6] = head
    elif arch is ArchitectureId.VIT_B16:
        in_features = module.heads.head.in_features
        head = nn.Linear(in_features, 2)
        module.heads = head
    else:
        raise ValueError(f"unknown architecture {arch}")
    return head


def build_model(
    arch: ArchitectureId,
    freeze_backbone: bool = True,
    pretrained: bool = True,
    seed: Optional[int] = None,
) -> ClassifierModel:
    """Construct a backbone with a fresh 2-logit head.

    With pretrained=True the ImageNet weights must be present in the local
    torch hub cache or fetchable; otherwise a WeightsUnavailableError explains
    how to provision them. pretrained=False builds the same architecture with
    random initialization (offline fallback).
    """
    if not isinstance(arch, ArchitectureId):
        raise ValueError(f"unknown architecture {arch!r}")
    builder, weights = _BUILDERS[arch]
    if seed is not None:
        torch.manual_seed(seed)
    if pretrained:
        try:
            module = builder(weights=weights)
        except Exception as e:
            raise WeightsUnavailableError(
                f"ImageNet weights for {arch.value} could not be loaded ({e}). "
                f"Download {weights.url} into $TORCH_HOME/hub/checkpoints/ "
                f"(default ~/.cache/torch/hub/checkpoints/), or build with pretrained=False."
            ) from e
    else:
        module = builder(weights=None)
    head = _replace_final_linear(arch, module)
    if freeze_backbone:
        for p in module.parameters():
            p.requires_grad = False
        for p in head.parameters():
            p.requires_grad = True
    module.eval()
    return ClassifierModel(
        architecture=arch,
        module=module,
        head=head,
        feature_dim=head.in_features,
        frozen=freeze_backbone,
        pretrained=pretrained,
    )


def reference_parameter_count(arch: ArchitectureId) -> int:
    """Parameter count of the stock 1000-class architecture (the headline number)."""
    builder, _ = _BUILDERS[arch]
    module = builder(weights=None)
    return sum(p.numel() for p in module.parameters())


def preprocess(image: np.ndarray | PILImage.Image) -> torch.Tensor:
    """Resize to 224x224 (bilinear, antialiased) and ImageNet-normalize.

    Accepts an H x W x 3 float [0,1] array, an H x W grayscale array
    (replicated to 3 channels), or a PIL image in RGB/L mode.
    """
    if isinstance(image, PILImage.Image):
        if image.mode == "L":
            image = image.convert("RGB")
        elif image.mode != "RGB":
            raise ValueError(f"unsupported image mode {image.mode!r}; expected RGB or grayscale")
        image = np.asarray(image, dtype=np.float64) / 255.0
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        array = np.stack([array] * 3, axis=-1)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {array.shape}")
    tensor = torch.from_numpy(np.ascontiguousarray(array)).permute(2, 0, 1).unsqueeze(0).float()
    tensor = torch.nn.functional.interpolate(
        tensor, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False, antialias=True
    )
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return ((tensor - mean) / std).squeeze(0)


# ---------------------------------------------------------------------------
# Checkpoint I/O: a serialized parameter map plus a JSON metadata sidecar.


def checkpoint_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()[:16]


def sidecar_path(checkpoint_path: str | Path) -> Path:
    p = Path(checkpoint_path)
    return p.with_suffix(p.suffix + ".json")


def save_checkpoint(model: ClassifierModel, path: str | Path, metadata: dict | None = None) -> str:
    """Write parameters + metadata sidecar; returns the checkpoint digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(model.module.state_dict(), tmp)
    tmp.replace(path)
    digest = checkpoint_digest(path)
    meta = {
        "architecture": model.architecture.value,
        "class_order": [label.value for label in CLASS_ORDER],
        "normalization": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "pretrained_backbone": model.pretrained,
        "checkpoint_digest": digest,
        **(metadata or {}),
    }
    sidecar = sidecar_path(path)
    tmp_meta = sidecar.with_name(sidecar.name + ".tmp")
    tmp_meta.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp_meta.replace(sidecar)
    return digest


def load_checkpoint(path: str | Path) -> tuple[ClassifierModel, dict]:
    """Load a checkpoint and its sidecar; verifies the recorded digest."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    digest = checkpoint_digest(path)
    if digest != meta["checkpoint_digest"]:
        raise ValueError(f"checkpoint digest mismatch for {path}: file {digest}, sidecar {meta['checkpoint_digest']}")
    arch = ArchitectureId(meta["architecture"])
    model = build_model(arch, freeze_backbone=True, pretrained=False)
    model.module.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.module.eval()
    model.pretrained = bool(meta.get("pretrained_backbone", False))
    return model, meta
