from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

Metric = Literal["euclidean", "great-circle"]


# -----------------------------
# Matérn stationnaire
# -----------------------------
class MaternParams(BaseModel):
    """Σ = σ²[(1 − τ)·C(h) + τ·I], C de Matérn en paramétrisation √(2ν)·h/ρ."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["matern"] = "matern"
    sigma2: float = Field(gt=0)
    rho: float = Field(gt=0)
    nu: float = Field(gt=0)
    nugget: float = Field(default=0.0, ge=0, lt=1)
    metric: Metric = "euclidean"


class MaternFit(BaseModel):
    params: MaternParams
    loglik: float
    rho_se: Optional[float] = None
    range_identified: bool = True
    loglik_by_nu: Dict[str, float] = Field(default_factory=dict)
    n_replicates: int = Field(ge=1)


# -----------------------------
# Non stationnaire (convolution de noyaux, A nœuds)
# -----------------------------
class NonstatParams(BaseModel):
    """
    Paramètres aux nœuds b_a, mélangés en tout point s par les poids w_a(s).

    Le noyau au nœud a vaut r_a² · R(θ_a) diag(e^{η_a}, e^{−η_a}) R(θ_a)ᵀ : la matrice
    d'anisotropie est de déterminant 1, l'échelle est portée par la portée r_a.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["nonstationary"] = "nonstationary"
    knots: List[Tuple[float, float]] = Field(min_length=1)
    sigma_at_knot: List[float]
    kernel_log_eigs: List[Tuple[float, float]]
    kernel_angles: List[float]
    range_at_knot: List[float]
    lambda_sigma: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_lengths(self):
        A = len(self.knots)
        for name in ("sigma_at_knot", "kernel_log_eigs", "kernel_angles", "range_at_knot"):
            if len(getattr(self, name)) != A:
                raise ValueError(f"{name} doit avoir {A} éléments (un par nœud).")
        if any(s <= 0 for s in self.sigma_at_knot) or any(r <= 0 for r in self.range_at_knot):
            raise ValueError("σ et portées aux nœuds doivent être > 0.")
        return self

    @property
    def n_knots(self) -> int:
        return len(self.knots)

    def knot_array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)

    def anisotropy_matrices(self) -> np.ndarray:
        """(A, 2, 2) matrices SPD Σ(b_a) par construction (valeurs propres e^{η}, angle θ)."""
        eigs = np.exp(np.asarray(self.kernel_log_eigs, dtype=float))
        theta = np.asarray(self.kernel_angles, dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        return rot @ (eigs[:, :, None] * np.swapaxes(rot, -1, -2))

    @classmethod
    def stationary(
        cls,
        knots: np.ndarray,
        sigma: float,
        range_: float,
        log_eig: float = 0.0,
        angle: float = 0.0,
        lambda_sigma: Optional[float] = None,
    ) -> "NonstatParams":
        """Tous les nœuds identiques (réduit à l'exponentielle anisotrope stationnaire)."""
        knots = np.asarray(knots, dtype=float).reshape(-1, 2)
        A = len(knots)
        if lambda_sigma is None:
            lambda_sigma = half_min_knot_distance(knots)
        return cls(
            knots=[tuple(k) for k in knots.tolist()],
            sigma_at_knot=[sigma] * A,
            kernel_log_eigs=[(log_eig, -log_eig)] * A,
            kernel_angles=[angle] * A,
            range_at_knot=[range_] * A,
            lambda_sigma=lambda_sigma,
        )


def half_min_knot_distance(knots: np.ndarray) -> float:
    knots = np.asarray(knots, dtype=float).reshape(-1, 2)
    if len(knots) == 1:
        return 1.0
    d = np.sqrt(((knots[:, None, :] - knots[None, :, :]) ** 2).sum(-1))
    d = d[np.triu_indices(len(knots), 1)]
    return float(d.min() / 2.0)


CovarianceModel = Union[MaternParams, NonstatParams]


# -----------------------------
# Facteur de Cholesky
# -----------------------------
@dataclass(frozen=True, eq=False)
class CovFactor:
    """L triangulaire inférieure avec L·Lᵀ = Σ (+ jitter éventuel) sur site_ids, dans cet ordre."""

    lower: np.ndarray = field(repr=False)
    site_ids: Tuple[int, ...]
    jitter: float = 0.0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        if lower.shape != (len(self.site_ids), len(self.site_ids)):
            raise ValueError("Facteur et ordre des sites incompatibles.")
        if np.any(np.diag(lower) <= 0):
            raise ValueError("La diagonale de L doit être strictement positive.")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "site_ids", tuple(int(i) for i in self.site_ids))

    @property
    def n(self) -> int:
        return len(self.site_ids)

    def covariance(self) -> np.ndarray:
        return self.lower @ self.lower.T
