"""
Labeled training data for conditional score models.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from shared.errors import InputError


@dataclass
class LabeledDataset:
    """Points x with per-point labels y (labels may be empty for unconditional models)."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    label_name: str = "y"
    label_transform: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.float64)
            self.labels = labels.reshape(labels.shape[0], -1) if labels.ndim else labels.reshape(1, 1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise InputError(
                    f"{self.points.shape[0]} points but {self.labels.shape[0]} labels"
                )
            if not np.all(np.isfinite(self.labels)):
                raise InputError("labels must be finite")
        if self.points.shape[0] == 0:
            raise InputError("dataset is empty")
        if not np.all(np.isfinite(self.points)):
            raise InputError("points must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def data_dim(self) -> int:
        return self.points.shape[1]

    @property
    def label_dim(self) -> int:
        return 0 if self.labels is None else self.labels.shape[1]

    def columns(self) -> List[str]:
        names = [f"x{i + 1}" for i in range(self.data_dim)]
        if self.label_dim == 1:
            names.append(self.label_name)
        else:
            names += [f"{self.label_name}{i + 1}" for i in range(self.label_dim)]
        return names

    def to_array(self) -> np.ndarray:
        """Points and labels side by side."""
        if self.labels is None:
            return self.points.copy()
        return np.hstack([self.points, self.labels])

    @classmethod
    def from_array(cls, data: np.ndarray, label_dim: int, label_name: str = "y",
                   label_transform: Optional[Dict[str, Any]] = None) -> "LabeledDataset":
        """Split an array whose last label_dim columns are labels."""
        data = np.asarray(data, dtype=np.float64)
        if label_dim == 0:
            return cls(data, None, label_name, label_transform or {})
        return cls(data[:, :-label_dim], data[:, -label_dim:], label_name, label_transform or {})

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        labels = None if self.labels is None else self.labels[idx]
        return LabeledDataset(self.points[idx], labels, self.label_name, dict(self.label_transform))
