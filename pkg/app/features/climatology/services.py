"""
➡️ But : Ajuster puis retirer la moyenne climatologique et la dépendance temporelle par site.

W(s, t) = μ(s, t) + x(s, t), x AR(P) : x_t = Σ_p φ_p x_{t−p} + ε_t.

- fit_mean : moindres carrés ordinaires, une seule matrice de design pour tous les sites.
- fit_ar : maximum de vraisemblance conditionnelle (régression sur les P retards).
- detrend / reconstruct : inverses exacts l'un de l'autre ; les P premiers jours n'utilisent
  que les retards disponibles (retards manquants = 0).

🔹 Les calculs par site sont indépendants : résultat identique quel que soit le nombre de threads.
"""

import logging
from typing import Optional

import numpy as np
from scipy import linalg, signal, stats

from app.core.errors import DataError, NumericalError
from app.core.logs import log_event
from app.features.climatology.schemas import ARFit, ClimatologyFit
from app.features.fields.schemas import Calendar, ResidualField, SpatioTemporalField
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)


# -----------------------------
# Moyenne (tendance + harmoniques)
# -----------------------------
def design_matrix(
    calendar: Calendar, K: int, with_trend: bool, reference_year: Optional[int] = None
) -> np.ndarray:
    """Colonnes : 1, yr(t) − yr0 (si tendance), puis sin/cos(2πk·t/δ) pour k = 1..K."""
    cols = [np.ones(calendar.length_days)]
    if with_trend:
        yr0 = calendar.year_of_day[0] if reference_year is None else reference_year
        cols.append((calendar.year_of_day - yr0).astype(float))
    phase = 2.0 * np.pi * calendar.day_of_year / calendar.period_of_year
    for k in range(1, K + 1):
        cols.append(np.sin(k * phase))
        cols.append(np.cos(k * phase))
    return np.column_stack(cols)


def fit_mean(field: SpatioTemporalField, K: int = 2, with_trend: bool = True) -> ClimatologyFit:
    if K < 0:
        raise DataError("Le nombre d'harmoniques K doit être ≥ 0.")
    T = field.n_days
    if T <= 2 * K + 2:
        raise DataError(f"Série trop courte: T={T} ≤ 2K+2={2 * K + 2}.")

    X = design_matrix(field.calendar, K, with_trend)
    p = X.shape[1]
    coef, _, rank, _ = linalg.lstsq(X, field.values.T)
    if rank < p:
        raise DataError(
            f"Design de rang déficient ({rank} < {p}) : calendrier trop court pour "
            f"K={K}, tendance={with_trend}."
        )

    resid = field.values - (X @ coef).T
    rss = np.sum(resid**2, axis=1)
    xtx_inv = linalg.pinv(X.T @ X)

    offset = 1
    omega = np.zeros(field.n_sites)
    omega_se = np.zeros(field.n_sites)
    if with_trend:
        omega = coef[1]
        omega_se = np.sqrt(np.maximum(rss / (T - p), 0.0) * xtx_inv[1, 1])
        offset = 2
    harmonics = coef[offset:].T.reshape(field.n_sites, K, 2) if K else np.zeros((field.n_sites, 0, 2))

    years = field.calendar.year_of_day
    return ClimatologyFit(
        K=K,
        with_trend=with_trend,
        reference_year=int(years[0]),
        last_year=int(years[-1]),
        intercept=coef[0],
        omega=omega,
        beta=harmonics[:, :, 0],
        beta_prime=harmonics[:, :, 1],
        omega_se=omega_se,
    )


def trend_significance(fit: ClimatologyFit, level: float = 0.05) -> np.ndarray:
    """Sites dont la tendance ω est significative (test z bilatéral)."""
    if not fit.with_trend:
        return np.zeros(fit.n_sites, dtype=bool)
    z = stats.norm.ppf(1.0 - level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = np.abs(fit.omega) / fit.omega_se
    # ω au niveau du bruit d'arrondi (série constante) : jamais significatif
    negligible = np.abs(fit.omega) <= 1e-10 * (1.0 + np.abs(fit.intercept))
    return (np.nan_to_num(t_stat, nan=0.0, posinf=np.inf) > z) & ~negligible


def mean_residuals(field: SpatioTemporalField, mean_fit: ClimatologyFit, **kwargs) -> np.ndarray:
    _check_sites(field, mean_fit.n_sites)
    return field.values - mean_fit.evaluate(field.calendar, **kwargs)


# -----------------------------
# AR(P)
# -----------------------------
def _fit_ar_site(args) -> tuple[np.ndarray, float]:
    x, P = args
    if P == 0:
        return np.zeros(0), float(np.std(x))
    T = len(x)
    lags = np.column_stack([x[P - p : T - p] for p in range(1, P + 1)])
    target = x[P:]
    phi, *_ = np.linalg.lstsq(lags, target, rcond=None)
    innovations = target - lags @ phi
    return phi, float(np.std(innovations))


def spectral_radius(phi: np.ndarray) -> float:
    P = len(phi)
    if P == 0:
        return 0.0
    comp = np.zeros((P, P))
    comp[0, :] = phi
    comp[1:, :-1] = np.eye(P - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def fit_ar(
    residuals_of_mean: ResidualField | np.ndarray, P: int = 1, threads: Optional[int] = None
) -> ARFit:
    values = getattr(residuals_of_mean, "values", residuals_of_mean)
    values = np.asarray(values, dtype=float)
    if P < 0:
        raise DataError("L'ordre AR doit être ≥ 0.")
    if values.shape[1] <= 10 * P:
        raise DataError(f"Série trop courte pour AR({P}): T={values.shape[1]} ≤ {10 * P}.")

    results = ordered_map(_fit_ar_site, [(row, P) for row in values], threads)
    phi = np.array([r[0] for r in results]).reshape(len(results), P)
    sd = np.array([r[1] for r in results])

    for site, coeffs in enumerate(phi):
        radius = spectral_radius(coeffs)
        if radius >= 1.0:
            raise NumericalError(
                f"AR({P}) non stationnaire au site {site} (rayon spectral {radius:.4f} ≥ 1).",
                code="AR_NONSTATIONARY",
            )
    degenerate = np.flatnonzero(sd <= 0)
    if degenerate.size:
        log_event(
            LOGGER, "ar_degenerate_innovations", level=logging.WARNING,
            sites=degenerate[:20].tolist(), count=int(degenerate.size),
        )
    return ARFit(P=P, phi=phi, innovation_sd=sd)


def marginal_sd(ar_fit: ARFit) -> np.ndarray:
    """Écart-type stationnaire x(s) du processus AR (Lyapunov discret sur la forme compagnon)."""
    if ar_fit.P == 0:
        return ar_fit.innovation_sd.copy()
    out = np.empty(ar_fit.n_sites)
    for site in range(ar_fit.n_sites):
        comp = ar_fit.companion(site)
        q = np.zeros((ar_fit.P, ar_fit.P))
        q[0, 0] = ar_fit.innovation_sd[site] ** 2
        out[site] = np.sqrt(linalg.solve_discrete_lyapunov(comp, q)[0, 0])
    return out


# -----------------------------
# Filtrage / reconstruction
# -----------------------------
def _check_sites(field: SpatioTemporalField, n_sites: int) -> None:
    if field.n_sites != n_sites:
        raise DataError(f"Shape mismatch: champ à {field.n_sites} sites, fit à {n_sites} sites.")


def whiten(x: np.ndarray, ar_fit: ARFit) -> np.ndarray:
    """ε_t = x_t − Σ_p φ_p x_{t−p}, retards hors série traités comme 0."""
    if ar_fit.P == 0:
        return x.copy()
    return np.vstack(
        [signal.lfilter(np.r_[1.0, -ar_fit.phi[i]], [1.0], x[i]) for i in range(len(x))]
    )


def color(eps: np.ndarray, ar_fit: ARFit) -> np.ndarray:
    """Inverse de whiten : x_t = ε_t + Σ_p φ_p x_{t−p} à partir de conditions initiales nulles."""
    if ar_fit.P == 0:
        return eps.copy()
    return np.vstack(
        [signal.lfilter([1.0], np.r_[1.0, -ar_fit.phi[i]], eps[i]) for i in range(len(eps))]
    )


def detrend(
    field: SpatioTemporalField,
    mean_fit: ClimatologyFit,
    ar_fit: ARFit,
    extrapolate_trend: bool = False,
) -> ResidualField:
    _check_sites(field, mean_fit.n_sites)
    _check_sites(field, ar_fit.n_sites)
    x = field.values - mean_fit.evaluate(field.calendar, extrapolate_trend)
    return ResidualField(sites=field.sites, calendar=field.calendar, values=whiten(x, ar_fit))


def reconstruct(
    residuals: SpatioTemporalField,
    mean_fit: ClimatologyFit,
    ar_fit: ARFit,
    calendar: Optional[Calendar] = None,
    extrapolate_trend: bool = False,
) -> SpatioTemporalField:
    """Résultat de type ResidualField : l'appelant décide du clamp avant repassage en champ brut."""
    calendar = calendar or residuals.calendar
    _check_sites(residuals, mean_fit.n_sites)
    _check_sites(residuals, ar_fit.n_sites)
    if calendar.length_days != residuals.n_days:
        raise DataError("Shape mismatch: calendrier et résidus de longueurs différentes.")
    values = color(residuals.values, ar_fit) + mean_fit.evaluate(calendar, extrapolate_trend)
    return ResidualField(sites=residuals.sites, calendar=calendar, values=values)
