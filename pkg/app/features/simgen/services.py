"""
➡️ But : Générateurs de champs non gaussiens pour la validation des méthodes d'ajustement.

- « Observations » : skew-t bi-résolution, W(s) = (λ|U_r| + η_r(s)) / √Z_r pour s dans la région r.
- « Simulations » : gaussien / log-gaussien, W(s) = η(s) / √ξ(s) + ε(s).
- run_validation : génère des paires, ajuste chaque méthode sur la première moitié des
  répliques, corrige la seconde et compare les divergences KL à la méthode de référence.

🔹 Graines : une SeedSequence racine, `spawn` par simulation puis par générateur, donc les
sorties ne dépendent pas du nombre de threads.
"""

import logging
from datetime import date
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import WindAdjustError
from app.core.logs import log_event
from app.features.adjustment.schemas import METHODS
from app.features.adjustment.services import apply_plan, fit_plan
from app.features.climatology.services import detrend, fit_ar, fit_mean, mean_residuals
from app.features.clustering.services import cluster_features, weighted_kmeans
from app.features.covariance.schemas import MaternParams
from app.features.covariance.services import build_factor
from app.features.divergence.services import knn_kl
from app.features.fields.schemas import Calendar, ResidualField, make_sites
from app.features.fields.services import split_by_date
from app.features.simgen.schemas import (
    GlgConfig,
    SiteLayout,
    SkewTConfig,
    ValidationOptions,
)
from app.features.transform.services import fit_lambda_per_site
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, None]

SYNTHETIC_START = date(2000, 1, 1)


def _exponential_factor(coords: np.ndarray, range_: float) -> np.ndarray:
    """Facteur de Cholesky de la corrélation exponentielle exp(−h/range)."""
    params = MaternParams(sigma2=1.0, rho=range_, nu=0.5)
    return build_factor(params, coords).lower


def _as_field(coords: np.ndarray, values: np.ndarray) -> ResidualField:
    calendar = Calendar(start_date=SYNTHETIC_START, length_days=values.shape[1])
    return ResidualField(sites=make_sites(coords), calendar=calendar, values=values)


# -----------------------------
# Générateurs
# -----------------------------
def simulate_skewt(config: SkewTConfig, n_replicates: int, seed: SeedLike = None) -> ResidualField:
    """Une réplique par jour du calendrier synthétique ; valeurs de signe quelconque."""
    if n_replicates < 1:
        raise ValueError("n_replicates doit être ≥ 1.")
    layout = config.layout()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    T = n_replicates
    scale = config.range_scale

    lower_between = _exponential_factor(layout.centroids(), config.range_between * scale)
    U = lower_between @ rng.standard_normal((layout.n_regions, T))

    eta = np.empty((layout.n_sites, T))
    for r in range(layout.n_regions):
        rows = layout.members(r)
        lower = _exponential_factor(layout.coords[rows], config.range_within * scale)
        eta[rows] = lower @ rng.standard_normal((len(rows), T))

    if config.gaussian_limit:
        Z = np.ones((layout.n_regions, T))
    else:
        nu = config.nu_skt
        Z = rng.gamma(shape=nu / 2.0, scale=2.0 / nu, size=(layout.n_regions, T))

    regions = layout.regions
    values = (config.lambda_skt * np.abs(U[regions]) + eta) / np.sqrt(Z[regions])
    return _as_field(layout.coords, values)


def draw_glg_mixing(
    config: GlgConfig,
    coords: np.ndarray,
    n_replicates: int,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """ξ log-normal : log ξ ~ N(−ν/2, ν·C), donc E[ξ] = 1 et Var[ξ] = e^ν − 1."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    rng = rng or np.random.default_rng(config.seed)
    nu = config.nu_glg
    if nu == 0:
        return np.ones((len(coords), n_replicates))
    lower = _exponential_factor(coords, config.range_xi * config.range_scale)
    log_xi = -nu / 2.0 + np.sqrt(nu) * (lower @ rng.standard_normal((len(coords), n_replicates)))
    return np.exp(log_xi)


def simulate_glg(
    config: GlgConfig,
    n_replicates: int,
    sites: SiteLayout | np.ndarray | None = None,
    seed: SeedLike = None,
) -> ResidualField:
    if n_replicates < 1:
        raise ValueError("n_replicates doit être ≥ 1.")
    if sites is None:
        coords = SkewTConfig().layout().coords
    elif isinstance(sites, SiteLayout):
        coords = sites.coords
    else:
        coords = np.asarray(sites, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, T = len(coords), n_replicates

    lower = _exponential_factor(coords, config.range_eta * config.range_scale)
    eta = lower @ rng.standard_normal((n, T))
    xi = draw_glg_mixing(config, coords, T, rng)
    values = eta / np.sqrt(xi)
    if config.tau2 > 0:
        values = values + np.sqrt(config.tau2) * rng.standard_normal((n, T))
    return _as_field(coords, values)


# -----------------------------
# Banc de validation
# -----------------------------
def _clusters_for(obs_hist: ResidualField, options: ValidationOptions, seed: int):
    plan = options.plan
    mean_fit = fit_mean(obs_hist, K=plan.K, with_trend=plan.with_trend)
    ar_fit = fit_ar(mean_residuals(obs_hist, mean_fit), P=plan.P, threads=1)
    eps = detrend(obs_hist, mean_fit, ar_fit).values
    spec, _ = fit_lambda_per_site(eps, threads=1)
    features = cluster_features(spec.lambda_per_site, obs_hist.coords)
    k = min(options.n_clusters, obs_hist.n_sites)
    return weighted_kmeans(features, k=k, seed=seed, threads=1)


def _ratio(method: str, value: float, baseline: str, base: float) -> float:
    if method == baseline:
        return 1.0
    return value / base if base > 0 else float("nan")


def _run_single(
    sim_id: int,
    seed_seq: np.random.SeedSequence,
    skewt: SkewTConfig,
    glg: GlgConfig,
    methods: Sequence[str],
    options: ValidationOptions,
) -> list[dict]:
    obs_seed, sim_seed, cluster_seed = seed_seq.spawn(3)
    layout = skewt.layout()
    obs = simulate_skewt(skewt, options.n_replicates, seed=obs_seed)
    sim = simulate_glg(glg, options.n_replicates, sites=layout, seed=sim_seed)
    cut = obs.calendar.dates[options.n_history].item()
    obs_hist, obs_future = split_by_date(obs, cut)
    sim_hist, sim_future = split_by_date(sim, cut)

    clusters = None
    if "TC" in methods:
        clusters = _clusters_for(obs_hist, options, int(cluster_seed.generate_state(1)[0]))

    kl = {}
    for method in methods:
        plan = fit_plan(obs_hist, sim_hist, method, options.plan, clusters=clusters, threads=1)
        adjusted = apply_plan(sim_future, plan).field
        kl[method] = knn_kl(obs_future.values.T, adjusted.values.T, k=options.kl_k).value

    base = kl[options.baseline]
    column = f"kl_ratio_vs_{options.baseline}"
    return [
        {
            "sim_id": sim_id,
            "method": method,
            "kl": value,
            column: _ratio(method, value, options.baseline, base),
        }
        for method, value in kl.items()
    ]


def run_validation(
    skewt_config: SkewTConfig,
    glg_config: GlgConfig,
    n_sims: int,
    methods: Sequence[str] = METHODS,
    options: Optional[ValidationOptions] = None,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """
    Une ligne par (simulation, méthode). Les simulations en échec sont journalisées,
    exclues du tableau et comptées dans `table.attrs["failed"]`.
    """
    options = options or ValidationOptions()
    methods = list(dict.fromkeys(methods))
    if options.baseline not in methods:
        methods.insert(0, options.baseline)
    children = np.random.SeedSequence(options.seed).spawn(n_sims)

    def _one(args):
        sim_id, seed_seq = args
        try:
            return _run_single(sim_id, seed_seq, skewt_config, glg_config, methods, options)
        except (WindAdjustError, ValueError, np.linalg.LinAlgError) as exc:
            log_event(
                LOGGER, "validation_simulation_failed", level=logging.WARNING,
                sim_id=sim_id, error=type(exc).__name__, detail=str(exc),
            )
            return None

    results = ordered_map(_one, list(enumerate(children)), threads)
    failed = sum(r is None for r in results)
    rows = [row for r in results if r is not None for row in r]
    columns = ["sim_id", "method", "kl", f"kl_ratio_vs_{options.baseline}"]
    table = pd.DataFrame.from_records(rows, columns=columns)
    table.attrs["failed"] = failed
    log_event(
        LOGGER, "validation_done", level=logging.WARNING if failed else logging.INFO,
        n_sims=n_sims, failed=failed, methods=methods,
    )
    return table
