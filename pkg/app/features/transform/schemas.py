from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, model_validator

Provenance = Literal["pointwise-mle", "cluster-mle", "cluster-kl", "identity"]


class LambdaEstimate(BaseModel):
    lambda_hat: float
    ci_low: float
    ci_high: float
    loglik: float

    @model_validator(mode="after")
    def _ci_brackets_estimate(self):
        if not self.ci_low < self.lambda_hat < self.ci_high:
            raise ValueError("L'intervalle de confiance doit encadrer strictement λ̂.")
        return self


@dataclass(frozen=True, eq=False)
class TransformSpec:
    """λ de Yeo-Johnson par site ; constant par cluster quand la provenance est cluster-*."""

    lambda_per_site: np.ndarray = field(repr=False)
    provenance: Provenance
    cluster_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        lam = np.asarray(self.lambda_per_site, dtype=float).reshape(-1)
        if not np.all(np.isfinite(lam)):
            raise ValueError("Tous les λ doivent être finis.")
        object.__setattr__(self, "lambda_per_site", lam)
        if self.cluster_labels is not None:
            labels = np.asarray(self.cluster_labels, dtype=np.int64).reshape(-1)
            if len(labels) != len(lam):
                raise ValueError("cluster_labels et lambda_per_site de longueurs différentes.")
            object.__setattr__(self, "cluster_labels", labels)
            if self.provenance.startswith("cluster"):
                for c in np.unique(labels):
                    if np.ptp(lam[labels == c]) > 0:
                        raise ValueError(f"λ non constant dans le cluster {c}.")

    @property
    def n_sites(self) -> int:
        return len(self.lambda_per_site)

    @classmethod
    def identity(cls, n_sites: int) -> "TransformSpec":
        return cls(lambda_per_site=np.ones(n_sites), provenance="identity")

    @classmethod
    def from_clusters(
        cls, cluster_lambdas: np.ndarray, labels: np.ndarray, provenance: Provenance
    ) -> "TransformSpec":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(
            lambda_per_site=np.asarray(cluster_lambdas, dtype=float)[labels],
            provenance=provenance,
            cluster_labels=labels,
        )

    def subset(self, rows) -> "TransformSpec":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.cluster_labels is None else self.cluster_labels[rows]
        return TransformSpec(self.lambda_per_site[rows], self.provenance, labels)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "provenance": self.provenance,
            "sites": {str(i): float(v) for i, v in enumerate(self.lambda_per_site)},
        }
        if self.cluster_labels is not None:
            out["clusters"] = {str(i): int(c) for i, c in enumerate(self.cluster_labels)}
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TransformSpec":
        n = len(data["sites"])
        lam = np.array([data["sites"][str(i)] for i in range(n)], dtype=float)
        labels = None
        if "clusters" in data:
            labels = np.array([data["clusters"][str(i)] for i in range(n)], dtype=np.int64)
        return cls(lambda_per_site=lam, provenance=data["provenance"], cluster_labels=labels)
