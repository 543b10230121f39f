"""
➡️ But : Hiérarchie d'exceptions métier + codes de sortie CLI.

Les services lèvent ces erreurs ; seul app/main.py les traduit en code de sortie.

🔹 Codes :
0 succès, 2 erreur de config, 3 erreur de données, 4 échec numérique.
"""

from typing import Optional


class WindAdjustError(Exception):
    """Erreur de base du projet."""

    exit_code: int = 1
    code: str = "WIND_ADJUST_ERROR"

    def __init__(self, message: str, *, code: Optional[str] = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ConfigError(WindAdjustError):
    """Config invalide, artefact manquant, paramètre hors bornes."""

    exit_code = 2
    code = "CONFIG_ERROR"


class DataError(WindAdjustError):
    """Fichier mal formé, données incohérentes (formes, sites, calendriers)."""

    exit_code = 3
    code = "DATA_ERROR"


class NumericalError(WindAdjustError):
    """Échec numérique (non-convergence, matrice non SPD, AR non stationnaire...)."""

    exit_code = 4
    code = "NUMERICAL_ERROR"


class TransformRangeError(NumericalError):
    """Valeur hors de l'image de g_λ lors de l'inversion Yeo-Johnson."""

    code = "TRANSFORM_RANGE"

    def __init__(
        self,
        message: str,
        *,
        bound: float,
        site: Optional[int] = None,
        day: Optional[int] = None,
    ):
        super().__init__(message)
        self.bound = bound
        self.site = site
        self.day = day
