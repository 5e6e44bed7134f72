"""Grad-CAM relevance maps and heatmap overlays.

Channel weights are the spatial mean of the target logit's gradient at a
feature layer; the map is the ReLU of the weighted activation sum, min-max
normalized. For the ViT backbone the patch tokens (class token excluded) are
reshaped into their square grid and treated like a convolutional feature map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib import colormaps
import torch

from .augment import save_image
from .models import ArchitectureId, ClassifierModel, preprocess

DEFAULT_LAYERS = {
    ArchitectureId.EFFICIENTNET_B0: "features",
    ArchitectureId.EFFICIENTNET_B2: "features",
    ArchitectureId.VGG16: "features",
    ArchitectureId.VIT_B16: "encoder.ln",
}

_COLORMAP = colormaps["viridis"]


@dataclass(frozen=True)
class GradCamMap:
    values: np.ndarray  # 2-D, >= 0
    normalized_values: np.ndarray  # 2-D in [0, 1], max 1 unless all-zero
    target_class: int
    layer_name: str


def _resolve_layer(model: ClassifierModel, layer: str | None) -> tuple[str, torch.nn.Module]:
    name = layer or DEFAULT_LAYERS[model.architecture]
    modules = dict(model.module.named_modules())
    if name not in modules:
        raise ValueError(f"layer {name!r} not found in {model.architecture.value}")
    return name, modules[name]


def _spatialize(activation: torch.Tensor) -> torch.Tensor:
    """(1,C,H,W) stays; (1,T,C) token activations drop the class token and
    fold into their square grid. Anything else is not spatial."""
    if activation.ndim == 4:
        return activation
    if activation.ndim == 3:
        tokens = activation[:, 1:, :]
        side = int(math.isqrt(tokens.shape[1]))
        if side * side != tokens.shape[1]:
            raise ValueError(f"token count {tokens.shape[1]} is not a square grid")
        return tokens.reshape(1, side, side, -1).permute(0, 3, 1, 2)
    raise ValueError(f"layer output of shape {tuple(activation.shape)} is not spatial")


def combine_activations(activation: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Core map arithmetic: channel weights are the spatial gradient means,
    the map is ReLU of the weighted activation sum. Inputs are (C, H, W)."""
    weights = gradient.mean(axis=(1, 2), keepdims=True)
    return np.maximum((weights * activation).sum(axis=0), 0.0)


def normalize_map(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    return values / peak if peak > 0 else np.zeros_like(values)


def grad_cam(model: ClassifierModel, image, target_class: int, layer: str | None = None) -> GradCamMap:
    if target_class not in (0, 1):
        raise ValueError(f"target_class {target_class} out of range for binary output")
    layer_name, module = _resolve_layer(model, layer)
    model.module.eval()

    captured: dict[str, torch.Tensor] = {}

    def fwd_hook(mod, inp, out):
        out.requires_grad_(True)
        out.retain_grad()
        captured["activation"] = out

    handle = module.register_forward_hook(fwd_hook)
    try:
        batch = preprocess(image).unsqueeze(0)
        with torch.enable_grad():
            logits = model.module(batch)
            logits[0, target_class].backward()
    finally:
        handle.remove()

    activation = captured["activation"]
    grad = activation.grad
    if grad is None:
        grad = torch.zeros_like(activation)
    act = _spatialize(activation.detach())
    grad = _spatialize(grad)

    cam = combine_activations(
        act.squeeze(0).numpy().astype(np.float64), grad.squeeze(0).numpy().astype(np.float64)
    )
    return GradCamMap(
        values=cam, normalized_values=normalize_map(cam), target_class=target_class, layer_name=layer_name
    )


def overlay(cam_map: GradCamMap, image: np.ndarray, alpha: float) -> np.ndarray:
    """Alpha-blend a colormapped, bilinearly upsampled map onto the image."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    grid = torch.from_numpy(cam_map.normalized_values)[None, None].float()
    up = torch.nn.functional.interpolate(grid, size=(h, w), mode="bilinear", align_corners=False)
    up = up.squeeze().numpy().astype(np.float64)
    colored = _COLORMAP(up)[..., :3]
    return np.clip((1.0 - alpha) * image + alpha * colored, 0.0, 1.0)


def export_heatmap(cam_map: GradCamMap, image: np.ndarray, out_png: str | Path, alpha: float = 0.5) -> None:
    """Write the overlay PNG plus a sidecar text grid of the raw map."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    save_image(overlay(cam_map, image, alpha), out_png)
    np.savetxt(out_png.with_suffix(".txt"), cam_map.values, fmt="%.8g")
