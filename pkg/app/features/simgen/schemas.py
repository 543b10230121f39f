from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.features.adjustment.schemas import Method, PlanOptions

Point = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class SiteLayout:
    """Coordonnées (n, 2) et région de chaque site ; les régions partitionnent les sites."""

    coords: np.ndarray = field(repr=False)
    regions: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        regions = np.asarray(self.regions, dtype=np.int64).reshape(-1)
        if len(coords) != len(regions):
            raise ValueError("Une région par site est attendue.")
        if len(regions) and set(np.unique(regions).tolist()) != set(range(regions.max() + 1)):
            raise ValueError("Les régions doivent être numérotées 0..R−1 sans trou.")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "regions", regions)

    @property
    def n_sites(self) -> int:
        return len(self.coords)

    @property
    def n_regions(self) -> int:
        return int(self.regions.max()) + 1

    def members(self, region: int) -> np.ndarray:
        return np.flatnonzero(self.regions == region)

    def centroids(self) -> np.ndarray:
        return np.vstack([self.coords[self.members(r)].mean(axis=0) for r in range(self.n_regions)])

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[Point]]) -> "SiteLayout":
        coords = [p for block in blocks for p in block]
        regions = [r for r, block in enumerate(blocks) for _ in block]
        return cls(coords=np.asarray(coords, dtype=float), regions=np.asarray(regions))


def default_layout(
    rows: int = 2, cols: int = 4, points_per_side: int = 5, side: float = 1.0
) -> SiteLayout:
    """Carré [0, side]² découpé en rows × cols blocs, grille de points au centre des cellules."""
    bw, bh = side / cols, side / rows
    blocks = []
    for by in range(rows):
        for bx in range(cols):
            xs = bx * bw + (np.arange(points_per_side) + 0.5) * bw / points_per_side
            ys = by * bh + (np.arange(points_per_side) + 0.5) * bh / points_per_side
            blocks.append([(float(x), float(y)) for y in ys for x in xs])
    return SiteLayout.from_blocks(blocks)


class _Seeded(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    # Multiplie toutes les portées (variantes de robustesse : 0.5, 2, ...)
    range_scale: float = Field(default=1.0, gt=0)


class SkewTConfig(_Seeded):
    """Champ skew-t bi-résolution : effets régionaux |U_r| + champ local η_r, mélange Z_r."""

    regions: Optional[List[List[Point]]] = None
    lambda_skt: float = 0.8
    nu_skt: float = Field(default=8.0, gt=0)
    range_within: float = Field(default=0.2, gt=0)
    range_between: float = Field(default=0.5, gt=0)
    # Limite ν → ∞ : Z ≡ 1
    gaussian_limit: bool = False

    @model_validator(mode="after")
    def _finite_kurtosis(self):
        if not self.gaussian_limit and self.nu_skt <= 4:
            raise ValueError("nu_skt doit être > 4 (kurtosis finie).")
        if self.regions is not None and not all(self.regions):
            raise ValueError("Chaque région doit contenir au moins un site.")
        return self

    def layout(self) -> SiteLayout:
        return default_layout() if self.regions is None else SiteLayout.from_blocks(self.regions)


class GlgConfig(_Seeded):
    """Gaussien / log-gaussien : η/√ξ + ε, log ξ de moyenne −ν/2 et covariance ν·C."""

    range_eta: float = Field(default=0.2, gt=0)
    nu_glg: float = Field(default=8.0, ge=0)
    range_xi: float = Field(default=0.7, gt=0)
    tau2: float = Field(default=0.1, ge=0)


class ValidationOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_replicates: int = Field(default=100, ge=4)
    n_history: int = Field(default=50, ge=2)
    n_clusters: int = Field(default=8, ge=1)
    kl_k: Optional[int] = Field(default=None, ge=1)
    baseline: Method = "MV"
    seed: int = 0
    plan: PlanOptions = Field(
        default_factory=lambda: PlanOptions(
            K=0, P=0, with_trend=False, mode="anomaly", clamp_negative=False
        )
    )

    @model_validator(mode="after")
    def _split_inside(self):
        if self.n_history >= self.n_replicates:
            raise ValueError("n_history doit être < n_replicates.")
        return self
