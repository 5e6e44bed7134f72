"""Weighted-loss fine-tuning: AdamW over the classification head, with
reduce-on-plateau scheduling, early stopping, and best-epoch checkpointing.

When the backbone is frozen its features are deterministic, so they are
computed once per image and cached; the epoch loop then trains the head on
cached features. This is exactly equivalent to running full forward passes
and keeps CPU-only runs fast.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import load_image
from .manifest import ClassWeights, DatasetManifest, Label, ManifestError, Origin, compute_class_weights, class_distribution
from .models import CLASS_ORDER, LABEL_TO_INDEX, ClassifierModel, preprocess


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 30
    batch_size: int = 32
    class_weights: Optional[ClassWeights] = None  # None: inverse-frequency from the train set
    early_stop_patience: int = 10
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 5
    min_learning_rate: float = 1e-7
    improvement_tolerance: float = 1e-5
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.max_epochs <= 0:
            raise ValueError("max_epochs must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch - 1].val_loss


def weights_vector(weights: ClassWeights) -> torch.Tensor:
    return torch.tensor([float(weights[label]) for label in CLASS_ORDER], dtype=torch.float64)


def weighted_cross_entropy(logits, label: int, weights: ClassWeights) -> float:
    """Per-sample loss: -w[label] * log softmax(logits)[label], log-sum-exp stabilized."""
    logits_t = torch.as_tensor(logits, dtype=torch.float64)
    w = weights_vector(weights)[label]
    return float(w * (torch.logsumexp(logits_t, dim=-1) - logits_t[label]))


def batch_weighted_cross_entropy(logits: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Mean of per-sample weighted CE over a batch."""
    per_sample = F.cross_entropy(logits, labels, reduction="none")
    return (weights[labels].to(per_sample.dtype) * per_sample).mean()


class PlateauScheduler:
    """Tracks validation loss; halves the LR after `lr_patience` non-improving
    epochs and signals a stop after `stop_patience` of them. Improvement means
    strictly lower than the best by at least `tolerance`."""

    def __init__(self, lr: float, factor: float, lr_patience: int, stop_patience: int, min_lr: float, tolerance: float):
        self.lr = lr
        self.factor = factor
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.min_lr = min_lr
        self.tolerance = tolerance
        self.best = float("inf")
        self._lr_wait = 0
        self._stop_wait = 0

    def step(self, val_loss: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop); self.lr holds the LR for the next epoch."""
        improved = val_loss < self.best - self.tolerance
        if improved:
            self.best = val_loss
            self._lr_wait = 0
            self._stop_wait = 0
            return True, False
        self._lr_wait += 1
        self._stop_wait += 1
        if self._lr_wait >= self.lr_patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self._lr_wait = 0
        return False, self._stop_wait >= self.stop_patience


# in-memory backbone feature cache: (arch, pretrained, init_seed, path) -> tensor
_FEATURE_CACHE: dict[tuple, torch.Tensor] = {}


def clear_feature_cache() -> None:
    _FEATURE_CACHE.clear()


def _cached_features(model: ClassifierModel, paths: Sequence[str], init_seed, batch_size: int = 16) -> torch.Tensor:
    key_base = (model.architecture.value, model.pretrained, init_seed)
    missing = [p for p in paths if key_base + (p,) not in _FEATURE_CACHE]
    model.module.eval()
    for start in range(0, len(missing), batch_size):
        chunk = missing[start : start + batch_size]
        batch = torch.stack([preprocess(load_image(p)) for p in chunk])
        feats = model.extract_features(batch)
        for p, f in zip(chunk, feats):
            _FEATURE_CACHE[key_base + (p,)] = f.clone()
    return torch.stack([_FEATURE_CACHE[key_base + (p,)] for p in paths])


def _labels_tensor(manifest: DatasetManifest) -> torch.Tensor:
    return torch.tensor([LABEL_TO_INDEX[r.label] for r in manifest.records], dtype=torch.long)


def train(
    model: ClassifierModel,
    train_set: DatasetManifest,
    val_set: DatasetManifest,
    config: TrainConfig,
    init_seed: Optional[int] = None,
) -> tuple[ClassifierModel, TrainingHistory]:
    """Fine-tune the head (or the full model when unfrozen) and return the
    parameters from the best validation-loss epoch."""
    if len(train_set) == 0:
        raise ManifestError("empty training set")
    for rec in val_set.records:
        if rec.origin is not Origin.ORIGINAL:
            raise ManifestError(f"validation record {rec.id!r} is augmented; validation must stay original-only")

    weights = config.class_weights
    if weights is None:
        counts = {l: c for l, c in class_distribution(train_set).items() if c > 0}
        weights = compute_class_weights(counts)
    w_vec = weights_vector(weights).float()

    torch.manual_seed(config.seed)
    train_paths = [r.path for r in train_set.records]
    val_paths = [r.path for r in val_set.records]
    y_train = _labels_tensor(train_set)
    y_val = _labels_tensor(val_set)

    feat_mu = feat_sigma = None
    if model.frozen:
        # Standardize the cached features per channel before training the head.
        # Backbone activations can sit at an arbitrary magnitude (a randomly
        # initialized deep backbone shrinks them by many orders of magnitude
        # while preserving their relative structure), and the optimizer needs
        # O(1) inputs to make progress. The affine is folded back into the head
        # afterwards, so the returned model still maps raw features to logits.
        x_train_raw = _cached_features(model, train_paths, init_seed).double()
        x_val_raw = _cached_features(model, val_paths, init_seed).double()
        feat_mu = x_train_raw.mean(dim=0)
        feat_sigma = x_train_raw.std(dim=0, unbiased=False)
        feat_sigma = torch.where(feat_sigma > 0, feat_sigma, torch.ones_like(feat_sigma))
        x_train = ((x_train_raw - feat_mu) / feat_sigma).float()
        x_val = ((x_val_raw - feat_mu) / feat_sigma).float()
        forward = model.head
        params = list(model.head.parameters())
    else:
        x_train = torch.stack([preprocess(load_image(p)) for p in train_paths])
        x_val = torch.stack([preprocess(load_image(p)) for p in val_paths])
        forward = model.module
        params = [p for p in model.module.parameters() if p.requires_grad]

    optimizer = torch.optim.AdamW(params, lr=config.learning_rate, betas=(0.9, 0.999), weight_decay=config.weight_decay)
    sched = PlateauScheduler(
        lr=config.learning_rate,
        factor=config.lr_reduce_factor,
        lr_patience=config.lr_reduce_patience,
        stop_patience=config.early_stop_patience,
        min_lr=config.min_learning_rate,
        tolerance=config.improvement_tolerance,
    )
    history = TrainingHistory()
    best_state = copy.deepcopy(model.module.state_dict())
    n = len(train_paths)

    for epoch in range(1, config.max_epochs + 1):
        lr_this_epoch = sched.lr
        for group in optimizer.param_groups:
            group["lr"] = lr_this_epoch
        epoch_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(epoch,)))
        order = epoch_rng.permutation(n)

        model.module.train() if not model.frozen else model.module.eval()
        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            logits = forward(x_train[idx])
            loss = batch_weighted_cross_entropy(logits, y_train[idx], w_vec)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)
        train_loss = total_loss / n

        model.module.eval()
        with torch.no_grad():
            val_logits = forward(x_val)
            val_loss = float(batch_weighted_cross_entropy(val_logits, y_val, w_vec))
            val_acc = float((val_logits.argmax(dim=1) == y_val).float().mean())

        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, val_acc, lr_this_epoch))
        _, should_stop = sched.step(val_loss)
        if history.best_epoch == 0 or val_loss < history.best_val_loss():
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.module.state_dict())
        if should_stop:
            history.stopped_early = True
            break

    model.module.load_state_dict(best_state)
    if model.frozen:
        # Fold the feature standardization into the head: for W, b trained on
        # (f - mu) / sigma, the equivalent raw-feature head is W/sigma and
        # b - W @ (mu/sigma).
        with torch.no_grad():
            w = model.head.weight.double()
            b = model.head.bias.double()
            model.head.weight.copy_((w / feat_sigma).float())
            model.head.bias.copy_((b - (w * (feat_mu / feat_sigma)).sum(dim=1)).float())
    model.module.eval()
    return model, history


@torch.no_grad()
def predict_proba(model: ClassifierModel, images: Sequence, init_seed: Optional[int] = None, batch_size: int = 16) -> np.ndarray:
    """Class probabilities (columns in CLASS_ORDER) for image paths or arrays."""
    model.module.eval()
    if images and isinstance(images[0], str):
        if model.frozen:
            feats = _cached_features(model, list(images), init_seed, batch_size)
            logits = model.head(feats)
            return torch.softmax(logits, dim=1).numpy()
        tensors = [preprocess(load_image(p)) for p in images]
    else:
        tensors = [preprocess(im) for im in images]
    out = []
    for start in range(0, len(tensors), batch_size):
        batch = torch.stack(tensors[start : start + batch_size])
        out.append(torch.softmax(model.module(batch), dim=1))
    return torch.cat(out).numpy()


def predict_manifest(model: ClassifierModel, manifest: DatasetManifest, init_seed: Optional[int] = None):
    """Returns (true_indices, predicted_indices, positive_scores) for a manifest."""
    probs = predict_proba(model, [r.path for r in manifest.records], init_seed)
    true = np.array([LABEL_TO_INDEX[r.label] for r in manifest.records])
    pred = probs.argmax(axis=1)
    pos = probs[:, LABEL_TO_INDEX[Label.POSITIVE]]
    return true, pred, pos
