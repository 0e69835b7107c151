from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Dataset:
    """Features, integer labels and per-sample loss weights (default all ones)."""

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        weights = np.ones(len(labels)) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if features.shape[0] != labels.shape[0] or weights.shape != labels.shape:
            raise DataError(
                f"length mismatch: {features.shape[0]} features, {labels.shape[0]} labels, "
                f"{weights.shape[0]} weights"
            )
        if labels.size and labels.min() < 0:
            raise DataError("labels must be non-negative")
        if weights.size and weights.min() < 1:
            raise DataError("sample weights must be >= 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.weights[idx])

    def with_weights(self, weights) -> "Dataset":
        return Dataset(self.features, self.labels, weights)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0
