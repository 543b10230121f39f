"""
➡️ But : Centraliser tous les paramètres numériques par défaut (bornes λ, jitter Cholesky,
k-means, recherche KL, extrapolation verticale, etc.)

Utilise pydantic-settings pour charger automatiquement les variables d’environnement
(.env, variables système préfixées WIND_ADJUST_…).

Fournit un objet settings unique, que tu importes ailleurs :

from app.core.config import settings
print(settings.LAMBDA_BOUNDS)


🔹 Avantages :

Plus propre que des constantes éparpillées dans les services.

Les configs de run (JSON) ne portent que ce qui change d'un run à l'autre.
"""

import os
from typing import Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # -----------------------------
    # App
    # -----------------------------
    APP_NAME: str = "wind-adjust"
    ENV: str = "dev"  # dev | prod | test
    LOG_LEVEL: str = "INFO"

    # Reproductibilité / parallélisme
    DEFAULT_SEED: int = 20240101
    DEFAULT_THREADS: int = 0  # 0 = nombre de CPU

    # -----------------------------
    # Climatologie (moyenne + AR)
    # -----------------------------
    DEFAULT_HARMONICS: int = 2
    DEFAULT_AR_ORDER: int = 1
    WITH_TREND: bool = True

    # -----------------------------
    # Yeo-Johnson
    # -----------------------------
    LAMBDA_BOUNDS: Tuple[float, float] = (-2.0, 4.0)
    LAMBDA_GRID_STEP: float = 0.05
    # Plage élargie pour encadrer l'intervalle de confiance
    LAMBDA_CI_BOUNDS: Tuple[float, float] = (-10.0, 12.0)
    MIN_TRANSFORM_SAMPLE: int = 30

    # -----------------------------
    # Covariance
    # -----------------------------
    MATERN_NU_GRID: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.5)
    MIN_REPLICATES: int = 30
    JITTER_START: float = 1e-10
    JITTER_MAX: float = 1e-4
    LOCAL_WEIGHT_FLOOR: float = 0.01
    MIN_WINDOW_SITES: int = 5

    # -----------------------------
    # Divergence KL
    # -----------------------------
    KL_DISTANCE_FLOOR: float = 1e-12
    KL_BLOCK_SIZE: int = 512

    # -----------------------------
    # Clustering
    # -----------------------------
    DEFAULT_CLUSTERS: int = 20
    CLUSTER_WEIGHTS: Tuple[float, float, float] = (0.98, 0.01, 0.01)
    CLUSTER_RESTARTS: int = 20
    CLUSTER_MAX_ITER: int = 300
    CLUSTER_SIZE_RANGE: Tuple[int, int] = (30, 50)

    # -----------------------------
    # Recherche des λ (descente par coordonnées)
    # -----------------------------
    KL_DAY_SUBSAMPLE: int = 1000
    LAMBDA_SEARCH_TOL: float = 1e-3
    LAMBDA_SEARCH_MAX_CYCLES: int = 5
    LAMBDA_SEARCH_WINDOW: float = 0.5

    # -----------------------------
    # Énergie éolienne
    # -----------------------------
    REFERENCE_HEIGHT_M: float = 10.0
    DEFAULT_SHEAR_ALPHA: float = 1.0 / 7.0
    DEFAULT_DRAWS: int = 1000
    SHEAR_FLAG_R2: float = 0.2
    CELL_AREA_KM2: float = 36.0
    SPACING_ROTOR_DIAMETERS: float = 5.0

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="WIND_ADJUST_",
        case_sensitive=True,
        extra="ignore",
    )

    # -----------------------------
    # Post-process values
    # -----------------------------
    def model_post_init(self, __context):  # appelée automatiquement
        # Threads auto depuis le nombre de CPU si non fourni
        if self.DEFAULT_THREADS <= 0:
            object.__setattr__(self, "DEFAULT_THREADS", os.cpu_count() or 1)

        lo, hi = self.LAMBDA_BOUNDS
        if not lo < 1.0 < hi:
            raise ValueError("LAMBDA_BOUNDS doit contenir 1 (transformation identité).")


# Instance globale importable partout
settings = Settings()
