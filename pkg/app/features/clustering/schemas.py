from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Étiquettes 0..k−1 (numérotées par première apparition), centres en unités d'origine."""

    labels: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)  # (k, 3) : (λ, lat, lon)
    weights: Tuple[float, float, float]
    k_clusters: int
    wcss: float = 0.0
    wcss_history: Tuple[float, ...] = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if labels.size and (labels.min() < 0 or labels.max() >= self.k_clusters):
            raise ValueError("Étiquettes hors de 0..k−1.")
        if len(np.unique(labels)) != self.k_clusters:
            raise ValueError("Chaque cluster doit être non vide.")

    @property
    def n_sites(self) -> int:
        return len(self.labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k_clusters)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    @classmethod
    def single(cls, n_sites: int) -> "ClusterAssignment":
        """Un seul cluster couvrant tous les sites (cas T1)."""
        return cls(
            labels=np.zeros(n_sites, dtype=np.int64),
            centers=np.zeros((1, 3)),
            weights=(1.0, 0.0, 0.0),
            k_clusters=1,
        )

    @classmethod
    def from_labels(cls, labels) -> "ClusterAssignment":
        labels = np.asarray(labels, dtype=np.int64)
        _, canon = np.unique(labels, return_inverse=True)
        k = int(canon.max()) + 1
        return cls(labels=canon, centers=np.zeros((k, 3)), weights=(1.0, 0.0, 0.0), k_clusters=k)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k_clusters": self.k_clusters,
            "weights": list(self.weights),
            "wcss": self.wcss,
            "wcss_history": list(self.wcss_history),
            "centers": self.centers.tolist(),
            "labels": {str(i): int(c) for i, c in enumerate(self.labels)},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClusterAssignment":
        n = len(data["labels"])
        return cls(
            labels=np.array([data["labels"][str(i)] for i in range(n)], dtype=np.int64),
            centers=np.array(data["centers"], dtype=float),
            weights=tuple(data["weights"]),
            k_clusters=int(data["k_clusters"]),
            wcss=float(data.get("wcss", 0.0)),
            wcss_history=tuple(data.get("wcss_history", ())),
        )
