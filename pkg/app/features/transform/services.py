"""
➡️ But : Transformation de Yeo-Johnson (directe, inverse), estimation de λ par maximum de
vraisemblance avec intervalle de vraisemblance profilée, et diagnostics de forme.

Branches :
    x ≥ 0, λ ≠ 0 : ((x + 1)^λ − 1) / λ          x ≥ 0, λ = 0 : log(x + 1)
    x < 0, λ ≠ 2 : −((1 − x)^(2−λ) − 1) / (2 − λ)  x < 0, λ = 2 : −log(1 − x)

🔹 Tout est vectorisé : λ se diffuse (broadcast) contre x, un λ par site pour les champs.
"""

import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from app.core.config import settings
from app.core.errors import DataError, NumericalError, TransformRangeError
from app.features.transform.schemas import LambdaEstimate, TransformSpec
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)

_ZERO = 1e-12
# Demi-quantile χ²(1) à 95 % : 3.84 / 2
_CI_DROP = stats.chi2.ppf(0.95, df=1) / 2.0


# -----------------------------
# Transformation
# -----------------------------
def yeo_johnson(x, lam):
    """g_λ(x), exacte sur les quatre branches ; x et λ diffusables."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    x, lam = np.broadcast_arrays(x, lam)
    out = np.empty(x.shape, dtype=float)

    pos = x >= 0
    lam_pos = lam[pos]
    lp = np.log1p(x[pos])
    zero = np.abs(lam_pos) < _ZERO
    safe = np.where(zero, 1.0, lam_pos)
    out[pos] = np.where(zero, lp, np.expm1(lam_pos * lp) / safe)

    neg = ~pos
    mu = 2.0 - lam[neg]
    ln = np.log1p(-x[neg])
    two = np.abs(mu) < _ZERO
    safe = np.where(two, 1.0, mu)
    out[neg] = np.where(two, -ln, -np.expm1(mu * ln) / safe)
    return out[()] if out.ndim == 0 else out


def _first_violation(mask: np.ndarray) -> Tuple[Optional[int], Optional[int]]:
    if mask.ndim == 2:
        site, day = np.argwhere(mask)[0]
        return int(site), int(day)
    if mask.ndim == 1:
        return None, int(np.argmax(mask))
    return None, None


def yeo_johnson_inverse(y, lam):
    """g_λ⁻¹(y) ; TransformRangeError si y sort de l'image de g_λ."""
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    y, lam = np.broadcast_arrays(y, lam)
    out = np.empty(y.shape, dtype=float)

    pos = y >= 0
    # Image bornée en haut pour λ < 0 : y < −1/λ
    arg_pos = 1.0 + lam * y
    bad_pos = pos & (np.abs(lam) >= _ZERO) & (arg_pos <= 0)
    # Image bornée en bas pour λ > 2 : y > −1/(λ − 2)
    arg_neg = 1.0 - (2.0 - lam) * y
    bad_neg = ~pos & (np.abs(2.0 - lam) >= _ZERO) & (arg_neg <= 0)
    bad = bad_pos | bad_neg
    if np.any(bad):
        site, day = _first_violation(bad)
        idx = tuple(np.argwhere(bad)[0]) if bad.ndim else ()
        lam_bad, y_bad = float(lam[idx]), float(y[idx])
        if lam_bad < 0:
            bound, rel = -1.0 / lam_bad, "<"
        else:
            bound, rel = -1.0 / (lam_bad - 2.0), ">"
        where = "" if day is None else f" (site {site}, jour {day})"
        raise TransformRangeError(
            f"y={y_bad:.6g} hors de l'image de g_λ pour λ={lam_bad:.6g} : "
            f"il faut y {rel} {bound:.6g}{where}",
            bound=bound,
            site=site,
            day=day,
        )

    lam_pos = lam[pos]
    zero = np.abs(lam_pos) < _ZERO
    safe = np.where(zero, 1.0, lam_pos)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[pos] = np.where(zero, np.expm1(y[pos]), np.expm1(np.log1p(lam_pos * y[pos]) / safe))

    mu = 2.0 - lam[~pos]
    two = np.abs(mu) < _ZERO
    safe = np.where(two, 1.0, mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~pos] = np.where(
            two, -np.expm1(-y[~pos]), -np.expm1(np.log1p(-mu * y[~pos]) / safe)
        )
    return out[()] if out.ndim == 0 else out


def transform_values(values: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Applique g_λ ligne par ligne (un λ par site)."""
    return yeo_johnson(values, spec.lambda_per_site[:, None])


def invert_values(values: np.ndarray, spec: TransformSpec) -> np.ndarray:
    return yeo_johnson_inverse(values, spec.lambda_per_site[:, None])


# -----------------------------
# Estimation de λ
# -----------------------------
def _check_sample(sample: np.ndarray) -> np.ndarray:
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size < settings.MIN_TRANSFORM_SAMPLE:
        raise DataError(
            f"Échantillon trop petit pour estimer λ ({x.size} < {settings.MIN_TRANSFORM_SAMPLE})."
        )
    if not np.all(np.isfinite(x)):
        raise DataError("Échantillon non fini.")
    if np.ptp(x) == 0:
        raise DataError("Échantillon constant : λ non identifiable.")
    return x


def _maximize_profile(llf: Callable[[float], float], label: str) -> LambdaEstimate:
    """Grille grossière puis raffinement borné ; IC par seuil de vraisemblance profilée."""
    lo, hi = settings.LAMBDA_BOUNDS
    step = settings.LAMBDA_GRID_STEP
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    values = np.array([llf(g) for g in grid])
    values = np.where(np.isfinite(values), values, -np.inf)
    if not np.any(np.isfinite(values)):
        raise NumericalError(f"Vraisemblance non finie sur toute la grille [{lo}, {hi}] ({label}).")
    best = int(np.argmax(values))
    a, b = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]

    res = optimize.minimize_scalar(
        lambda lam: -llf(lam), bounds=(a, b), method="bounded", options={"xatol": 1e-6}
    )
    if res.success and np.isfinite(res.fun) and -res.fun >= values[best]:
        lam_hat, ll_max = float(res.x), float(-res.fun)
    else:
        lam_hat, ll_max = float(grid[best]), float(values[best])

    threshold = ll_max - _CI_DROP

    def excess(lam: float) -> float:
        v = llf(lam)
        return v - threshold if np.isfinite(v) else -1e6

    ci = []
    ext_lo, ext_hi = settings.LAMBDA_CI_BOUNDS
    for direction, limit in ((-1.0, ext_lo), (1.0, ext_hi)):
        inner, width = lam_hat, 0.05
        while True:
            outer = inner + direction * width
            if (outer - limit) * direction > 0:
                raise NumericalError(
                    f"Intervalle de confiance non encadré pour λ ({label}) : "
                    f"bracket [{min(lam_hat, limit):.3f}, {max(lam_hat, limit):.3f}]",
                    code="LAMBDA_CI_BRACKET",
                )
            if excess(outer) < 0:
                break
            inner, width = outer, width * 1.5
        ci.append(optimize.brentq(excess, *sorted((inner, outer)), xtol=1e-8))
    return LambdaEstimate(lambda_hat=lam_hat, ci_low=ci[0], ci_high=ci[1], loglik=ll_max)


def fit_lambda_mle(sample) -> LambdaEstimate:
    """λ̂ maximisant la log-vraisemblance profilée (moyenne et variance profilées)."""
    x = _check_sample(sample)
    return _maximize_profile(lambda lam: float(stats.yeojohnson_llf(lam, x)), "échantillon")


def fit_lambda_pooled(samples: Sequence[np.ndarray], label: str = "cluster") -> LambdaEstimate:
    """Un λ commun : somme des log-vraisemblances profilées (moyenne/variance propres à chaque série)."""
    series = [_check_sample(s) for s in samples]
    if not series:
        raise DataError("Aucune série à regrouper.")
    return _maximize_profile(
        lambda lam: float(sum(stats.yeojohnson_llf(lam, s) for s in series)), label
    )


def fit_lambda_per_site(
    values: np.ndarray, threads: Optional[int] = None
) -> Tuple[TransformSpec, list[LambdaEstimate]]:
    estimates = ordered_map(fit_lambda_mle, list(np.asarray(values)), threads)
    lam = np.array([e.lambda_hat for e in estimates])
    return TransformSpec(lambda_per_site=lam, provenance="pointwise-mle"), estimates


def fit_lambda_by_cluster(
    values: np.ndarray, labels: np.ndarray, threads: Optional[int] = None
) -> Tuple[TransformSpec, Dict[int, LambdaEstimate]]:
    values = np.asarray(values)
    labels = np.asarray(labels, dtype=np.int64)
    clusters = np.unique(labels)

    def _fit(c):
        return fit_lambda_pooled(list(values[labels == c]), label=f"cluster {c}")

    estimates = dict(zip(clusters.tolist(), ordered_map(_fit, clusters.tolist(), threads)))
    cluster_lambdas = np.zeros(int(clusters.max()) + 1)
    for c, est in estimates.items():
        cluster_lambdas[c] = est.lambda_hat
    spec = TransformSpec.from_clusters(cluster_lambdas, labels, provenance="cluster-mle")
    return spec, estimates


# -----------------------------
# Diagnostics
# -----------------------------
def moments(sample) -> Tuple[float, float]:
    """(asymétrie m₃/m₂^{3/2}, excès de kurtosis m₄/m₂² − 3)."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size < 4:
        raise DataError("Au moins 4 valeurs sont nécessaires pour les moments.")
    if np.var(x) == 0:
        raise DataError("Variance nulle : moments indéfinis.")
    return float(stats.skew(x, bias=True)), float(stats.kurtosis(x, fisher=True, bias=True))


def moments_table(values: np.ndarray) -> np.ndarray:
    """(n_sites, 2) : asymétrie et excès de kurtosis par site."""
    values = np.asarray(values, dtype=float)
    return np.column_stack(
        [stats.skew(values, axis=1, bias=True), stats.kurtosis(values, axis=1, bias=True)]
    )
