"""
Affectations de clusters : CSV `site_id,cluster_id` (échange) et JSON (centres, poids, WCSS).
"""

from pathlib import Path

import numpy as np
import pandas as pd

from app.core.errors import DataError
from app.features.clustering.schemas import ClusterAssignment
from app.storage.base import JsonRepository

CLUSTER_COLUMNS = ["site_id", "cluster_id"]


class ClusterRepository(JsonRepository[ClusterAssignment]):
    model = ClusterAssignment

    def save_csv(self, assignment: ClusterAssignment, path: str | Path) -> Path:
        p = self.path_for_csv(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(
            {"site_id": np.arange(assignment.n_sites), "cluster_id": assignment.labels},
            columns=CLUSTER_COLUMNS,
        )
        df.to_csv(p, index=False)
        return p

    def load_csv(self, path: str | Path) -> ClusterAssignment:
        """Seules les étiquettes sont relues ; elles sont renumérotées 0..k−1."""
        p = self.path_for_csv(path)
        if not p.exists():
            raise DataError(f"Fichier de clusters introuvable: {p}")
        df = pd.read_csv(p)
        if list(df.columns) != CLUSTER_COLUMNS:
            raise DataError(f"{p}:1: malformed header {list(df.columns)!r}")
        df = df.sort_values("site_id")
        if not np.array_equal(df["site_id"].to_numpy(), np.arange(len(df))):
            raise DataError(f"{p}: identifiants de sites non contigus depuis 0")
        return ClusterAssignment.from_labels(df["cluster_id"].to_numpy())

    def path_for_csv(self, path: str | Path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def load_any(self, path: str | Path) -> ClusterAssignment:
        """CSV ou JSON selon l'extension."""
        if Path(path).suffix.lower() == ".csv":
            return self.load_csv(path)
        return self.load(str(path))
