"""
➡️ But : Du vent de surface (10 m) au revenu des parcs éoliens.

- fit_shear : coefficient de cisaillement α par régression log-log (effets fixes par jour).
- extrapolate : ensemble Monte Carlo W(h) = W(h_r)·(h/h_r)^α·e^η, α ~ N(α̂, se²), η ~ N(0, σ²),
  tiré paresseusement (un champ par tirage, graine dérivée de la graine racine).
- krige_downscale : krigeage ordinaire avec une covariance de Matérn.
- power_output / revenue_delta : courbe de puissance, énergie journalière et écart de revenu
  futur − historique.
"""

import logging
from dataclasses import dataclass
from itertools import zip_longest
from typing import Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from app.core.config import settings
from app.core.errors import DataError, NumericalError
from app.core.logs import log_event
from app.features.covariance.schemas import MaternParams
from app.features.covariance.services import matern_corr, matern_cov_matrix
from app.features.energy.schemas import FarmSite, PowerCurve, ShearFit
from app.features.fields.schemas import SpatioTemporalField
from app.utils.geometry import pairwise_distances

LOGGER = logging.getLogger(__name__)

HOURS_PER_DAY = 24.0


# -----------------------------
# Cisaillement vertical
# -----------------------------
def _fit_site(group: pd.DataFrame, reference_height: float) -> Tuple[float, float, float, float]:
    site = int(group["site_id"].iloc[0])
    heights_per_day = group.groupby("date")["height_m"].transform("nunique")
    group = group[heights_per_day >= 2]
    if group["height_m"].nunique() < 2:
        raise DataError(f"Site {site} : moins de 2 hauteurs valides pour le cisaillement.")
    n_days = group["date"].nunique()
    if n_days < settings.MIN_TRANSFORM_SAMPLE:
        raise DataError(
            f"Site {site} : {n_days} jours de profils (< {settings.MIN_TRANSFORM_SAMPLE})."
        )

    x = np.log(group["height_m"].to_numpy(dtype=float) / reference_height)
    y = np.log(group["speed_mps"].to_numpy(dtype=float))
    days = group["date"].to_numpy()
    # Effet fixe par jour : centrage intra-jour
    x_c = x - pd.Series(x).groupby(days).transform("mean").to_numpy()
    y_c = y - pd.Series(y).groupby(days).transform("mean").to_numpy()

    sxx = float(x_c @ x_c)
    if sxx <= 0:
        raise DataError(f"Site {site} : hauteurs sans variation intra-jour.")
    alpha = float(x_c @ y_c) / sxx
    resid = y_c - alpha * x_c
    rss = float(resid @ resid)
    dof = len(x) - n_days - 1
    if dof <= 0:
        raise DataError(f"Site {site} : pas assez d'observations pour estimer σ².")
    sigma2 = rss / dof
    syy = float(y_c @ y_c)
    r2 = 1.0 - rss / syy if syy > 0 else 1.0
    return alpha, sigma2, float(np.clip(r2, 0.0, 1.0)), float(np.sqrt(sigma2 / sxx))


def fit_shear(
    profiles: pd.DataFrame,
    heights: Optional[Sequence[float]] = None,
    reference_height: Optional[float] = None,
) -> ShearFit:
    """Profils longs `site_id,date,height_m,speed_mps` ; vitesses ≤ 0 écartées et comptées."""
    reference_height = reference_height or settings.REFERENCE_HEIGHT_M
    df = profiles
    if heights is not None:
        df = df[df["height_m"].isin(list(heights))]
    if df.empty:
        raise DataError("Aucun profil vertical exploitable.")
    bad = df["speed_mps"] <= 0
    site_ids = sorted(int(s) for s in profiles["site_id"].unique())
    excluded = df[bad].groupby("site_id").size().reindex(site_ids, fill_value=0)
    if bad.any():
        log_event(
            LOGGER, "shear_nonpositive_excluded", level=logging.WARNING,
            count=int(bad.sum()), sites=excluded[excluded > 0].index.tolist()[:20],
        )
    df = df[~bad]

    fits = []
    for site in site_ids:
        group = df[df["site_id"] == site]
        if group.empty:
            raise DataError(f"Site {site} : aucune vitesse positive.")
        fits.append(_fit_site(group, reference_height))
    alpha, sigma2, r2, se = (np.array(col) for col in zip(*fits))

    flagged = np.flatnonzero((alpha < 0) & (r2 < settings.SHEAR_FLAG_R2))
    if flagged.size:
        log_event(
            LOGGER, "shear_flagged", level=logging.WARNING,
            sites=[site_ids[i] for i in flagged], r2_threshold=settings.SHEAR_FLAG_R2,
        )
    return ShearFit(
        site_ids=tuple(site_ids), alpha=alpha, sigma2=sigma2, r2=r2, alpha_se=se,
        excluded=excluded.to_numpy(), reference_height=reference_height,
    )


def _target_heights(target_height, n_sites: int, reference_height: float) -> np.ndarray:
    h = np.broadcast_to(np.asarray(target_height, dtype=float), (n_sites,)).copy()
    if np.any(h <= reference_height):
        raise DataError(
            f"Hauteur cible ≤ hauteur de référence ({reference_height} m) : extrapolation impossible."
        )
    return h


def expected_multiplier(shear: ShearFit, target_height) -> np.ndarray:
    """E[(h/h_r)^α e^η] = exp(α̂L + se²L²/2 + σ²/2), L = log(h/h_r)."""
    h = _target_heights(target_height, shear.n_sites, shear.reference_height)
    L = np.log(h / shear.reference_height)
    return np.exp(shear.alpha * L + 0.5 * shear.alpha_se**2 * L**2 + 0.5 * shear.sigma2)


# -----------------------------
# Extrapolation à hauteur de moyeu
# -----------------------------
class HubHeightEnsemble:
    """Ensemble paresseux : chaque tirage est recalculé à la demande à partir de sa graine."""

    def __init__(
        self,
        surface: SpatioTemporalField,
        shear: ShearFit,
        target_height,
        n_draws: int,
        seed: int,
    ):
        if shear.n_sites != surface.n_sites:
            raise DataError(
                f"Shape mismatch: cisaillement à {shear.n_sites} sites, champ à {surface.n_sites}."
            )
        if n_draws < 1:
            raise DataError("n_draws doit être ≥ 1.")
        self.surface = surface
        self.shear = shear
        self.heights = _target_heights(target_height, surface.n_sites, shear.reference_height)
        self.n_draws = n_draws
        self.seed = seed
        self._seeds = np.random.SeedSequence(seed).spawn(n_draws)
        self._log_ratio = np.log(self.heights / shear.reference_height)

    def __len__(self) -> int:
        return self.n_draws

    def draw(self, index: int) -> SpatioTemporalField:
        rng = np.random.default_rng(self._seeds[index])
        n, T = self.surface.n_sites, self.surface.n_days
        alpha = self.shear.alpha + self.shear.alpha_se * rng.standard_normal(n)
        eta = np.sqrt(self.shear.sigma2)[:, None] * rng.standard_normal((n, T))
        multiplier = np.exp((alpha * self._log_ratio)[:, None] + eta)
        return self.surface.with_values(self.surface.values * multiplier)

    def __iter__(self) -> Iterator[SpatioTemporalField]:
        for index in range(self.n_draws):
            yield self.draw(index)


def extrapolate(
    surface: SpatioTemporalField,
    shear: ShearFit,
    target_height,
    n_draws: Optional[int] = None,
    seed: Optional[int] = None,
) -> HubHeightEnsemble:
    return HubHeightEnsemble(
        surface,
        shear,
        target_height,
        settings.DEFAULT_DRAWS if n_draws is None else n_draws,
        settings.DEFAULT_SEED if seed is None else seed,
    )


# -----------------------------
# Krigeage ordinaire
# -----------------------------
def krige_downscale(
    values: np.ndarray,
    coarse_coords: np.ndarray,
    fine_coords: np.ndarray,
    variogram: MaternParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Prédictions et variances de krigeage aux sites fins.

    `values` : (n_coarse,) pour un jour ou (n_coarse, T) ; les poids ne dépendent pas du jour.
    """
    coarse = np.asarray(coarse_coords, dtype=float).reshape(-1, 2)
    fine = np.asarray(fine_coords, dtype=float).reshape(-1, 2)
    z = np.asarray(values, dtype=float)
    n = len(coarse)
    if n < 3:
        raise DataError("Au moins 3 sites grossiers sont nécessaires au krigeage.")
    if z.shape[0] != n:
        raise DataError(f"Shape mismatch: {z.shape[0]} valeurs pour {n} sites grossiers.")

    C = matern_cov_matrix(coarse, variogram)
    d0 = pairwise_distances(fine, coarse, metric=variogram.metric)
    c0 = variogram.sigma2 * (
        (1.0 - variogram.nugget) * matern_corr(d0, variogram) + variogram.nugget * (d0 == 0)
    )
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = C
    system[:n, n] = system[n, :n] = 1.0
    rhs = np.vstack([c0.T, np.ones((1, len(fine)))])
    try:
        sol = linalg.solve(system, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Système de krigeage singulier : {exc}",
                             code="KRIGING_SINGULAR") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalError("Système de krigeage singulier.", code="KRIGING_SINGULAR")

    weights, lagrange = sol[:n], sol[n]
    prediction = weights.T @ z.reshape(n, -1)
    variance = variogram.sigma2 - np.sum(weights * c0.T, axis=0) - lagrange
    variance = np.maximum(variance, 0.0)
    if z.ndim == 1:
        prediction = prediction[:, 0]
    return prediction, variance


# -----------------------------
# Puissance et revenus
# -----------------------------
def power_output(speed, curve: PowerCurve):
    """kW pour une vitesse à hauteur de moyeu (scalaire ou tableau)."""
    v = np.asarray(speed, dtype=float)
    if np.any(v < 0):
        raise DataError("Vitesse négative en entrée de la courbe de puissance.")
    if curve.points:
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        if xs[0] > curve.cut_in:
            xs, ys = [curve.cut_in] + xs, [0.0] + ys
        if xs[-1] < curve.rated_speed:
            xs, ys = xs + [curve.rated_speed], ys + [curve.rated_power]
        ramp = np.interp(v, xs, ys)
    else:
        ci3 = curve.cut_in**3
        ramp = curve.rated_power * (v**3 - ci3) / (curve.rated_speed**3 - ci3)
    out = np.where(
        v < curve.cut_in,
        0.0,
        np.where(v < curve.rated_speed, ramp, np.where(v <= curve.cut_out, curve.rated_power, 0.0)),
    )
    return out[()] if out.ndim == 0 else out


def max_turbines(
    rotor_diameter: float, cell_area_km2: Optional[float] = None, spacing: Optional[float] = None
) -> int:
    """Espacement carré de `spacing` diamètres de rotor sur la maille."""
    area = (settings.CELL_AREA_KM2 if cell_area_km2 is None else cell_area_km2) * 1e6
    step = (settings.SPACING_ROTOR_DIAMETERS if spacing is None else spacing) * rotor_diameter
    return int(np.floor(area / step**2))


def check_farms(farms: Sequence[FarmSite], curves: Dict[str, PowerCurve], n_sites: int) -> None:
    for farm in farms:
        if farm.turbine not in curves:
            raise DataError(f"Turbine inconnue '{farm.turbine}' (site {farm.site_id}).")
        if farm.site_id >= n_sites:
            raise DataError(f"Site de parc {farm.site_id} absent du champ ({n_sites} sites).")
        limit = max_turbines(curves[farm.turbine].rotor_diameter)
        if farm.turbine_count > limit:
            raise DataError(
                f"Site {farm.site_id} : {farm.turbine_count} turbines > {limit} "
                "autorisées par la règle d'espacement."
            )


def daily_revenue(field: SpatioTemporalField, farm: FarmSite, curve: PowerCurve) -> float:
    """Revenu moyen par jour : puissance(vitesse journalière)·24 h·nombre·tarif."""
    power = power_output(field.values[farm.site_id], curve)
    return float(np.mean(power) * HOURS_PER_DAY * farm.turbine_count * farm.tariff_per_kwh)


@dataclass(frozen=True)
class RevenueDelta:
    per_site: pd.DataFrame  # site_id, turbine, mean_delta, sd_delta
    total_mean: float
    total_sd: float
    n_draws: int


def revenue_delta(
    hist_ensemble: Iterable[SpatioTemporalField],
    future_ensemble: Iterable[SpatioTemporalField],
    farms: Sequence[FarmSite],
    curves: Dict[str, PowerCurve],
) -> RevenueDelta:
    """Écart futur − historique par tirage, puis moyenne et écart-type sur les tirages."""
    if not farms:
        raise DataError("Aucun parc éolien fourni.")
    deltas = []
    checked = False
    for hist, future in zip_longest(hist_ensemble, future_ensemble):
        if hist is None or future is None:
            raise DataError("Ensembles historique et futur de tailles différentes.")
        if not hist.same_layout(future):
            raise DataError("Ensembles historique et futur sur des sites différents.")
        if not checked:
            check_farms(farms, curves, hist.n_sites)
            checked = True
        deltas.append([
            daily_revenue(future, f, curves[f.turbine]) - daily_revenue(hist, f, curves[f.turbine])
            for f in farms
        ])
    if not deltas:
        raise DataError("Ensembles vides.")
    D = np.asarray(deltas)
    ddof = 1 if len(D) > 1 else 0
    totals = D.sum(axis=1)
    per_site = pd.DataFrame({
        "site_id": [f.site_id for f in farms],
        "turbine": [f.turbine for f in farms],
        "mean_delta": D.mean(axis=0),
        "sd_delta": D.std(axis=0, ddof=ddof),
    })
    result = RevenueDelta(
        per_site=per_site,
        total_mean=float(totals.mean()),
        total_sd=float(totals.std(ddof=ddof)),
        n_draws=len(D),
    )
    log_event(LOGGER, "revenue_delta", n_farms=len(farms), n_draws=result.n_draws,
              total_mean=result.total_mean, total_sd=result.total_sd)
    return result
