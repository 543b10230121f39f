from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


@dataclass(frozen=True, eq=False)
class ShearFit:
    """Loi de puissance par site : α (peut être négatif), σ² du bruit log-normal, r², SE(α)."""

    site_ids: Tuple[int, ...]
    alpha: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    alpha_se: np.ndarray = field(repr=False)
    excluded: np.ndarray = field(default=None, repr=False)  # vitesses ≤ 0 écartées par site
    reference_height: float = 10.0

    def __post_init__(self):
        n = len(self.site_ids)
        for name in ("alpha", "sigma2", "r2", "alpha_se"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if len(arr) != n:
                raise ValueError(f"{name} doit avoir {n} éléments.")
            object.__setattr__(self, name, arr)
        excluded = np.zeros(n, dtype=np.int64) if self.excluded is None else self.excluded
        object.__setattr__(self, "excluded", np.asarray(excluded, dtype=np.int64))
        object.__setattr__(self, "site_ids", tuple(int(i) for i in self.site_ids))
        if np.any(self.sigma2 < 0):
            raise ValueError("sigma2 doit être ≥ 0.")
        if np.any((self.r2 < -1e-12) | (self.r2 > 1 + 1e-12)):
            raise ValueError("r2 doit être dans [0, 1].")

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @classmethod
    def constant(
        cls, n_sites: int, alpha: float = 1.0 / 7.0, reference_height: float = 10.0
    ) -> "ShearFit":
        """α fixé sans incertitude (valeur 1/7 par défaut en l'absence de profils)."""
        zeros = np.zeros(n_sites)
        return cls(
            site_ids=tuple(range(n_sites)),
            alpha=np.full(n_sites, alpha),
            sigma2=zeros,
            r2=np.ones(n_sites),
            alpha_se=zeros,
            reference_height=reference_height,
        )


class PowerCurve(BaseModel):
    """Courbe de puissance : 0 hors [cut_in, cut_out], plateau nominal sur [rated_speed, cut_out]."""

    model_config = ConfigDict(frozen=True)

    turbine_name: str
    hub_height: float = Field(gt=0)
    rotor_diameter: float = Field(gt=0)
    rated_power: float = Field(gt=0)  # kW
    cut_in: float = Field(gt=0)
    rated_speed: float
    cut_out: float
    # Points tabulés (vitesse, puissance) entre cut_in et rated_speed
    points: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def _check_curve(self):
        if not self.cut_in < self.rated_speed < self.cut_out:
            raise ValueError("Il faut 0 < cut_in < rated_speed < cut_out.")
        if self.points:
            speeds = [p[0] for p in self.points]
            powers = [p[1] for p in self.points]
            if any(b <= a for a, b in zip(speeds, speeds[1:])):
                raise ValueError("Vitesses tabulées strictement croissantes attendues.")
            if any(b < a for a, b in zip(powers, powers[1:])):
                raise ValueError("Puissance tabulée décroissante avant rated_speed.")
            if min(powers) < 0 or max(powers) > self.rated_power:
                raise ValueError("Puissance tabulée hors de [0, rated_power].")
            if speeds[0] < self.cut_in or speeds[-1] > self.rated_speed:
                raise ValueError("Points tabulés hors de [cut_in, rated_speed].")
        return self


class FarmSite(BaseModel):
    site_id: int = Field(ge=0)
    turbine: str
    turbine_count: int = Field(ge=1)
    tariff_per_kwh: float = Field(ge=0)
