from dataclasses import dataclass, field
from typing import Dict, Literal

import numpy as np
from pydantic import BaseModel, Field

from app.core.errors import DataError


@dataclass(frozen=True, eq=False)
class SampleCloud:
    """m points de dimension d : un point = le champ d'une journée sur d sites."""

    points: np.ndarray = field(repr=False)
    label: Literal["observation", "simulation"] = "observation"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise DataError("Un nuage de points doit être une matrice (m, d).")
        if not np.all(np.isfinite(pts)):
            raise DataError("Nuage de points non fini.")
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_field_values(cls, values: np.ndarray, label="observation") -> "SampleCloud":
        """values (n_sites, n_days) → points (n_days, n_sites)."""
        return cls(points=np.asarray(values, dtype=float).T, label=label)


class KlEstimate(BaseModel):
    value: float
    k_used: int = Field(ge=1)
    m: int = Field(ge=2)
    m_prime: int = Field(ge=1)
    floored_pairs: int = Field(default=0, ge=0)

    def to_record(self) -> Dict[str, float | int]:
        return {
            "value": self.value,
            "k": self.k_used,
            "m": self.m,
            "m_prime": self.m_prime,
            "floored_pairs": self.floored_pairs,
        }
