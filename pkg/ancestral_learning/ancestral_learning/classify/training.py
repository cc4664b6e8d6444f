from dataclasses import dataclass
from typing import Optional

import numpy as np

from ancestral_learning.errors import DomainError


@dataclass(frozen=True)
class TrainingSet:
    """(feature, label) couples of the pairs with known status, with their pair indices."""

    features: np.ndarray
    labels: np.ndarray
    pairs: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.size:
            raise DomainError(f"got features of shape {features.shape} for {labels.size} labels")
        if features.shape[1] < 1:
            raise DomainError("need at least one feature")
        if not np.all(np.isfinite(features)):
            raise DomainError("training features contain non-finite entries")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise DomainError("labels must be 0 or 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels.astype(np.float64))
        if self.pairs is not None:
            pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1)
            if pairs.size != labels.size:
                raise DomainError(f"got {pairs.size} pair indices for {labels.size} labels")
            object.__setattr__(self, "pairs", pairs)

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def require_both_classes(self) -> None:
        if self.size < 2:
            raise DomainError(f"need at least two training pairs, got {self.size}")
        positives = int(self.labels.sum())
        if positives == 0 or positives == self.size:
            raise DomainError(
                f"training labels contain a single class ({positives} of {self.size} positive)"
            )
