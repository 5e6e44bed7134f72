"""Scikit-learn-compatible wrapper around the transfer-learning classifier.

``TransferClassifier`` exposes the fit/predict/predict_proba surface plus
get_params/set_params, so the model slots into sklearn pipelines and
model-selection tooling. X is a sequence of image file paths or float [0,1]
RGB arrays; y is a sequence of "positive"/"negative" labels.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .manifest import DatasetManifest, ImageRecord, Label, Split, Variant
from .models import ArchitectureId, CLASS_ORDER, build_model
from .training import TrainConfig, predict_proba, train


def _as_manifest(X: Sequence[str], y: Sequence, split: Split) -> DatasetManifest:
    records = []
    for i, (path, label) in enumerate(zip(X, y)):
        records.append(
            ImageRecord(id=f"{split.value}_{i:05d}", path=str(path), label=Label(label), split=split)
        )
    return DatasetManifest(tuple(records))


class TransferClassifier(ClassifierMixin, BaseEstimator):
    """Frozen pretrained backbone + trainable 2-logit head, trained with
    weighted cross-entropy and reduce-on-plateau scheduling."""

    def __init__(
        self,
        architecture: str = ArchitectureId.EFFICIENTNET_B0.value,
        learning_rate: float = 1e-4,
        weight_decay: float = 1e-4,
        max_epochs: int = 30,
        batch_size: int = 32,
        early_stop_patience: int = 10,
        pretrained: bool = True,
        freeze_backbone: bool = True,
        random_state: int = 42,
    ):
        self.architecture = architecture
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.early_stop_patience = early_stop_patience
        self.pretrained = pretrained
        self.freeze_backbone = freeze_backbone
        self.random_state = random_state

    def fit(self, X: Sequence[str], y: Sequence, X_val: Optional[Sequence[str]] = None, y_val: Optional[Sequence] = None):
        if len(X) != len(y):
            raise ValueError(f"X and y length mismatch: {len(X)} vs {len(y)}")
        train_manifest = _as_manifest(X, y, Split.TRAIN)
        if X_val is not None:
            val_manifest = _as_manifest(X_val, y_val, Split.VAL)
        else:
            val_manifest = _as_manifest(X, y, Split.VAL)  # no held-out data supplied; monitor train loss
        config = TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            early_stop_patience=self.early_stop_patience,
            seed=self.random_state,
        )
        model = build_model(
            ArchitectureId(self.architecture),
            freeze_backbone=self.freeze_backbone,
            pretrained=self.pretrained,
            seed=self.random_state,
        )
        self.model_, self.history_ = train(model, train_manifest, val_manifest, config, init_seed=self.random_state)
        self.classes_ = np.array([label.value for label in CLASS_ORDER])
        return self

    def predict_proba(self, X: Sequence) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, list(X), init_seed=self.random_state)

    def predict(self, X: Sequence) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]
