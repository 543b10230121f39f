from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from app.core.config import settings
from app.features.climatology.schemas import ARFit, ClimatologyFit
from app.features.covariance.schemas import CovarianceModel, CovFactor, Metric
from app.features.transform.schemas import TransformSpec

Method = Literal["M", "MV", "MC", "MN", "T1", "TC"]
Mode = Literal["as-written", "anomaly"]
CovarianceChoice = Literal["matern", "nonstationary"]

METHODS: Tuple[str, ...] = ("M", "MV", "MC", "MN", "T1", "TC")
COVARIANCE_METHODS = {"MC", "MN", "T1", "TC"}
TRANSFORM_METHODS = {"T1", "TC"}

_COV_ADAPTER = TypeAdapter(CovarianceModel)


# -----------------------------
# Options d'ajustement
# -----------------------------
class KlSearchOptions(BaseModel):
    """Réglages de la recherche des λ par minimisation de la divergence KL."""

    model_config = ConfigDict(extra="forbid")

    day_subsample: int = Field(default_factory=lambda: settings.KL_DAY_SUBSAMPLE, ge=10)
    k: Optional[int] = Field(default=None, ge=1)
    tol: float = Field(default_factory=lambda: settings.LAMBDA_SEARCH_TOL, gt=0)
    max_cycles: int = Field(default_factory=lambda: settings.LAMBDA_SEARCH_MAX_CYCLES, ge=1)
    window: float = Field(default_factory=lambda: settings.LAMBDA_SEARCH_WINDOW, gt=0)
    seed: int = 0


class SubsampleConfig(BaseModel):
    """Sous-échantillons de sites pour les boîtes à moustaches (0 = données complètes seules)."""

    model_config = ConfigDict(extra="forbid")

    n_subsamples: int = Field(default=0, ge=0)
    n_sites: int = Field(default=300, ge=2)
    # Si renseignée (et des clusters fournis) : tirage stratifié par cluster
    stratified_fraction: Optional[float] = Field(default=None, gt=0, le=1)
    seed: int = 0


class PlanOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    K: int = Field(default_factory=lambda: settings.DEFAULT_HARMONICS, ge=0)
    P: int = Field(default_factory=lambda: settings.DEFAULT_AR_ORDER, ge=0)
    with_trend: bool = Field(default_factory=lambda: settings.WITH_TREND)
    mode: Mode = "as-written"
    metric: Metric = "euclidean"
    # Covariance utilisée sur l'échelle gaussienne pour T1/TC
    transform_covariance: CovarianceChoice = "nonstationary"
    lambda_strategy: Literal["mle", "kl"] = "kl"
    extrapolate_trend: bool = False
    clamp_negative: bool = True
    kl_search: KlSearchOptions = Field(default_factory=KlSearchOptions)


# -----------------------------
# Résultats
# -----------------------------
@dataclass(frozen=True, eq=False)
class LambdaSearchResult:
    lambda_obs: np.ndarray = field(repr=False)  # un λ par cluster
    lambda_sim: np.ndarray = field(repr=False)
    kl_trace: Tuple[float, ...]
    converged: bool
    cycles: int = 0
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        trace = tuple(float(v) for v in self.kl_trace)
        if any(b > a for a, b in zip(trace, trace[1:])):
            raise ValueError("kl_trace doit être non croissante.")
        object.__setattr__(self, "kl_trace", trace)
        object.__setattr__(self, "lambda_obs", np.asarray(self.lambda_obs, dtype=float))
        object.__setattr__(self, "lambda_sim", np.asarray(self.lambda_sim, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda_obs": self.lambda_obs.tolist(),
            "lambda_sim": self.lambda_sim.tolist(),
            "kl_trace": list(self.kl_trace),
            "converged": self.converged,
            "cycles": self.cycles,
        }


class AdjustmentDiagnostics(BaseModel):
    method: str
    mode: str
    n_sites: int
    n_days: int
    clamped_negative: int = 0
    min_value: float


@dataclass(frozen=True, eq=False)
class AdjustmentPlan:
    """
    Tout ce qu'il faut pour passer des simulations futures aux observations futures estimées.

    Les paires sont ordonnées (O, S). Les facteurs de Cholesky ne sont jamais persistés :
    from_dict les recalcule à partir des modèles de covariance et des coordonnées.
    """

    method: Method
    mean_fits: Tuple[ClimatologyFit, ClimatologyFit]
    ar_fits: Tuple[ARFit, ARFit]
    coords: np.ndarray = field(repr=False)
    mode: Mode = "as-written"
    cov_models: Optional[Tuple[CovarianceModel, CovarianceModel]] = None
    cov_factors: Optional[Tuple[CovFactor, CovFactor]] = None
    transform: Optional[Tuple[TransformSpec, TransformSpec]] = None
    # Moyennes par site des innovations historiques (centrées) sur l'échelle gaussienne
    gaussian_means: Optional[Tuple[np.ndarray, np.ndarray]] = None
    extrapolate_trend: bool = False
    clamp_negative: bool = True
    lambda_search: Optional[LambdaSearchResult] = None

    def __post_init__(self):
        n = self.mean_fits[0].n_sites
        sizes = {
            self.mean_fits[1].n_sites, self.ar_fits[0].n_sites, self.ar_fits[1].n_sites,
            len(self.coords),
        }
        if sizes != {n}:
            raise ValueError("Les composantes O et S doivent couvrir les mêmes sites.")
        if self.method in COVARIANCE_METHODS and self.cov_factors is None:
            raise ValueError(f"La méthode {self.method} exige les facteurs de covariance (O, S).")
        if self.cov_factors is not None:
            if any(f.n != n for f in self.cov_factors):
                raise ValueError("Facteurs de covariance et sites incompatibles.")
            if self.cov_factors[0].site_ids != self.cov_factors[1].site_ids:
                raise ValueError("Ordre des sites différent entre L_O et L_S.")
        if self.method in TRANSFORM_METHODS and self.transform is None:
            raise ValueError(f"La méthode {self.method} exige une paire de TransformSpec.")
        if self.transform is not None and any(t.n_sites != n for t in self.transform):
            raise ValueError("TransformSpec et sites incompatibles.")
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float).reshape(-1, 2))

    @property
    def n_sites(self) -> int:
        return self.mean_fits[0].n_sites

    def means(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.gaussian_means is None:
            zero = np.zeros(self.n_sites)
            return zero, zero
        return self.gaussian_means

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "method": self.method,
            "mode": self.mode,
            "coords": self.coords.tolist(),
            "mean_fits": [f.to_dict() for f in self.mean_fits],
            "ar_fits": [f.to_dict() for f in self.ar_fits],
            "extrapolate_trend": self.extrapolate_trend,
            "clamp_negative": self.clamp_negative,
        }
        if self.cov_models is not None:
            out["cov_models"] = [_COV_ADAPTER.dump_python(m, mode="json") for m in self.cov_models]
        if self.transform is not None:
            out["transform"] = [t.to_dict() for t in self.transform]
        if self.gaussian_means is not None:
            out["gaussian_means"] = [m.tolist() for m in self.gaussian_means]
        if self.lambda_search is not None:
            out["lambda_search"] = self.lambda_search.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdjustmentPlan":
        from app.features.covariance.services import build_factor

        coords = np.asarray(data["coords"], dtype=float)
        cov_models = cov_factors = None
        if "cov_models" in data:
            cov_models = tuple(_COV_ADAPTER.validate_python(m) for m in data["cov_models"])
            cov_factors = tuple(build_factor(m, coords) for m in cov_models)
        transform = None
        if "transform" in data:
            transform = tuple(TransformSpec.from_dict(t) for t in data["transform"])
        means = None
        if "gaussian_means" in data:
            means = tuple(np.asarray(m, dtype=float) for m in data["gaussian_means"])
        search = None
        if "lambda_search" in data:
            s = data["lambda_search"]
            search = LambdaSearchResult(
                lambda_obs=s["lambda_obs"], lambda_sim=s["lambda_sim"],
                kl_trace=s["kl_trace"], converged=s["converged"], cycles=s.get("cycles", 0),
            )
        return cls(
            method=data["method"],
            mode=data.get("mode", "as-written"),
            coords=coords,
            mean_fits=tuple(ClimatologyFit.from_dict(f) for f in data["mean_fits"]),
            ar_fits=tuple(ARFit.from_dict(f) for f in data["ar_fits"]),
            cov_models=cov_models,
            cov_factors=cov_factors,
            transform=transform,
            gaussian_means=means,
            extrapolate_trend=bool(data.get("extrapolate_trend", False)),
            clamp_negative=bool(data.get("clamp_negative", True)),
            lambda_search=search,
        )
