"""
Configs de run (une par sous-commande), validées strictement : toute clé inconnue est rejetée.

Les chemins relatifs sont résolus par rapport au dossier du fichier de config.
"""

from datetime import date
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.features.adjustment.schemas import (
    CovarianceChoice,
    KlSearchOptions,
    Method,
    Mode,
    SubsampleConfig,
)
from app.features.covariance.schemas import MaternParams, Metric
from app.features.simgen.schemas import GlgConfig, SkewTConfig


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    threads: int = Field(default=0, ge=0)


# -----------------------------
# fit
# -----------------------------
class ClusterSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(default_factory=lambda: settings.DEFAULT_CLUSTERS, ge=1)
    weights: Tuple[float, float, float] = Field(default_factory=lambda: settings.CLUSTER_WEIGHTS)
    restarts: int = Field(default_factory=lambda: settings.CLUSTER_RESTARTS, ge=1)


class FitConfig(RunConfig):
    obs_hist: str
    sim_hist: str
    output_dir: str = "fit"
    K: int = Field(default_factory=lambda: settings.DEFAULT_HARMONICS, ge=0)
    P: int = Field(default_factory=lambda: settings.DEFAULT_AR_ORDER, ge=0)
    with_trend: bool = Field(default_factory=lambda: settings.WITH_TREND)
    metric: Metric = "euclidean"
    covariance: Optional[CovarianceChoice] = None
    clusters: Optional[ClusterSettings] = None
    trend_level: float = Field(default=0.05, gt=0, lt=1)

    @model_validator(mode="after")
    def _planar_nonstationary(self):
        if self.covariance == "nonstationary" and self.metric != "euclidean":
            raise ValueError("La covariance non stationnaire n'accepte que metric='euclidean'.")
        return self


# -----------------------------
# adjust
# -----------------------------
class AdjustConfig(RunConfig):
    # Soit la paire historique (plan ajusté à la volée), soit un plan déjà sauvegardé
    obs_hist: Optional[str] = None
    sim_hist: Optional[str] = None
    plan: Optional[str] = None
    sim_future: str
    output: str = "adjusted.csv"
    report: str = "adjust_report.json"
    plan_output: Optional[str] = None
    obs_future: Optional[str] = None  # tranche de contrôle pour la KL du rapport
    method: Method
    mode: Mode = "as-written"
    K: int = Field(default_factory=lambda: settings.DEFAULT_HARMONICS, ge=0)
    P: int = Field(default_factory=lambda: settings.DEFAULT_AR_ORDER, ge=0)
    with_trend: bool = Field(default_factory=lambda: settings.WITH_TREND)
    metric: Metric = "euclidean"
    covariance: CovarianceChoice = "nonstationary"
    lambda_strategy: Literal["mle", "kl"] = "kl"
    extrapolate_trend: bool = False
    clamp_negative: bool = True
    allow_negative: bool = False  # champs d'entrée de signe quelconque (synthétiques)
    clusters: Optional[str] = None
    kl_search: KlSearchOptions = Field(default_factory=KlSearchOptions)
    kl_k: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _plan_source(self):
        paired = self.obs_hist is not None and self.sim_hist is not None
        if self.plan is None and not paired:
            raise ValueError("Il faut `plan` ou la paire `obs_hist` + `sim_hist`.")
        if self.plan is not None and (self.obs_hist or self.sim_hist):
            raise ValueError("`plan` exclut `obs_hist` et `sim_hist`.")
        return self


# -----------------------------
# validate
# -----------------------------
class ExperimentConfig(BaseModel):
    """Découpage entraînement / test sur un couple de champs réels et rapports de KL."""

    model_config = ConfigDict(extra="forbid")

    obs: str
    sim: str
    split_date: date
    baseline: Method = "M"
    clusters: Optional[str] = None
    subsample: SubsampleConfig = Field(default_factory=SubsampleConfig)
    K: int = Field(default_factory=lambda: settings.DEFAULT_HARMONICS, ge=0)
    P: int = Field(default_factory=lambda: settings.DEFAULT_AR_ORDER, ge=0)
    with_trend: bool = Field(default_factory=lambda: settings.WITH_TREND)
    metric: Metric = "euclidean"
    clamp_negative: bool = True
    allow_negative: bool = False


class ValidateConfig(RunConfig):
    output: str = "validation.csv"
    n_sims: int = Field(default=1000, ge=1)
    methods: List[Method] = Field(default_factory=lambda: ["M", "MV", "MC", "MN", "T1", "TC"])
    skewt: SkewTConfig = Field(default_factory=SkewTConfig)
    glg: GlgConfig = Field(default_factory=GlgConfig)
    n_replicates: int = Field(default=100, ge=4)
    n_history: int = Field(default=50, ge=2)
    n_clusters: int = Field(default=8, ge=1)
    kl_k: Optional[int] = Field(default=None, ge=1)
    mode: Mode = "anomaly"
    covariance: CovarianceChoice = "nonstationary"
    lambda_strategy: Literal["mle", "kl"] = "kl"
    # Si renseigné : expérience sur données réelles au lieu du banc simulé
    experiment: Optional[ExperimentConfig] = None


# -----------------------------
# kl
# -----------------------------
class KlConfig(RunConfig):
    obs: str
    sim: str
    output: str = "kl.json"
    k: Optional[int] = Field(default=None, ge=1)
    both_directions: bool = False
    allow_negative: bool = False


# -----------------------------
# energy
# -----------------------------
class DownscaleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fine_sites: str
    variogram: MaternParams


class EnergyConfig(RunConfig):
    surface_hist: str
    surface_future: str
    power_curves: str
    farms: str
    output: str = "revenue_delta.csv"
    summary: str = "revenue_summary.json"
    profiles: Optional[str] = None
    heights: Optional[List[float]] = None
    reference_height: float = Field(default_factory=lambda: settings.REFERENCE_HEIGHT_M, gt=0)
    n_draws: int = Field(default_factory=lambda: settings.DEFAULT_DRAWS, ge=1)
    downscale: Optional[DownscaleConfig] = None
