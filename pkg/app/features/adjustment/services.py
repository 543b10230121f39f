"""
➡️ But : Les six opérateurs d'ajustement (M, MV, MC, MN, T1, TC) et la recherche des λ
par minimisation de la divergence KL.

Toutes les méthodes passent par le même moteur, dans l'espace des innovations :

    ε_S = detrend_S(W_S^F)                       (moyenne et AR des simulations historiques)
    z_S = g_{λS}(ε_S)                            (identité hors T1/TC)
    as-written : z_O = z_S + B(m_O − m_S)          puis W = reconstruct_S(g_{λO}⁻¹(z_O)) + B(μ_O − μ_S)
    anomaly    : z_O = m_O + B(z_S − m_S)          puis W = reconstruct_O(g_{λO}⁻¹(z_O))

avec B = I (M), diag(σ_O/σ_S) (MV) ou L_O·L_S⁻¹ (MC, MN, T1, TC).
L_O·L_S⁻¹ et non L_O·L_S⁻ᵀ : c'est la seule forme qui envoie Σ_S sur Σ_O et se réduit à M
quand Σ_O = Σ_S.

🔹 Chaîne de réduction : T1/TC avec λ ≡ 1 donne MC/MN, des covariances diagonales donnent MV,
σ_O ≡ σ_S donne M.
"""

import logging
from dataclasses import dataclass
from datetime import date
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from app.core.config import settings
from app.core.errors import ConfigError, DataError, NumericalError, TransformRangeError
from app.core.logs import log_event
from app.features.adjustment.schemas import (
    COVARIANCE_METHODS,
    METHODS,
    TRANSFORM_METHODS,
    AdjustmentDiagnostics,
    AdjustmentPlan,
    LambdaSearchResult,
    PlanOptions,
    SubsampleConfig,
)
from app.features.climatology.services import (
    detrend,
    fit_ar,
    fit_mean,
    mean_residuals,
    reconstruct,
)
from app.features.clustering.schemas import ClusterAssignment
from app.features.clustering.services import stratified_subsample
from app.features.covariance.schemas import CovarianceModel
from app.features.covariance.services import (
    build_factor,
    cholesky_with_jitter,
    covariance_matrix,
    fit_matern,
    fit_nonstat,
)
from app.features.divergence.services import knn_kl
from app.features.fields.schemas import ResidualField, SpatioTemporalField
from app.features.fields.services import split_by_date, subsample_sites
from app.features.transform.schemas import TransformSpec
from app.features.transform.services import (
    fit_lambda_by_cluster,
    invert_values,
    transform_values,
    yeo_johnson,
    yeo_johnson_inverse,
)

LOGGER = logging.getLogger(__name__)

_RANGE_PENALTY = 1e6
_BOUND_TOL = 1e-3


@dataclass(frozen=True)
class AdjustmentResult:
    field: SpatioTemporalField
    diagnostics: AdjustmentDiagnostics


# -----------------------------
# Ajustement
# -----------------------------
def transfer_operator(plan: AdjustmentPlan) -> Callable[[np.ndarray], np.ndarray]:
    """
    Opérateur B appliqué colonne par colonne à une matrice (n_sites, ·).

    Méthodes à covariance : B = L_O·L_S⁻¹, donc B·L_S = L_O et B·Σ_S·Bᵀ = Σ_O.
    """
    if plan.method == "M":
        return lambda v: v
    if plan.method == "MV":
        sd_o = plan.ar_fits[0].innovation_sd
        sd_s = plan.ar_fits[1].innovation_sd
        zero = np.flatnonzero(sd_s <= 0)
        if zero.size:
            raise DataError(f"σ_S = 0 au site {int(zero[0])} : rapport σ_O/σ_S indéfini.")
        ratio = (sd_o / sd_s)[:, None]
        return lambda v: ratio * v

    factor_o, factor_s = plan.cov_factors
    if factor_o.site_ids != factor_s.site_ids:
        raise DataError("Ordre des sites différent entre L_O et L_S.")
    lower_o, lower_s = factor_o.lower, factor_s.lower

    def _apply(v: np.ndarray) -> np.ndarray:
        try:
            return lower_o @ linalg.solve_triangular(lower_s, v, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"L_S singulière : {exc}", code="SINGULAR_FACTOR") from exc

    return _apply


def transfer_matrix(plan: AdjustmentPlan) -> np.ndarray:
    """B sous forme de matrice (n_sites, n_sites)."""
    return transfer_operator(plan)(np.eye(plan.n_sites))


def _check_compatible(field: SpatioTemporalField, plan: AdjustmentPlan) -> None:
    if field.n_sites != plan.n_sites:
        raise DataError(
            f"Shape mismatch: champ à {field.n_sites} sites, plan à {plan.n_sites} sites."
        )
    if not np.allclose(field.coords, plan.coords, rtol=0, atol=1e-9):
        raise DataError("Shape mismatch: coordonnées des sites différentes de celles du plan.")


def apply_plan(sim_future: SpatioTemporalField, plan: AdjustmentPlan) -> AdjustmentResult:
    """Estime W_O^F à partir de W_S^F ; les vitesses négatives sont ramenées à 0 si demandé."""
    _check_compatible(sim_future, plan)
    mean_o, mean_s = plan.mean_fits
    ar_o, ar_s = plan.ar_fits
    calendar = sim_future.calendar
    extrapolate = plan.extrapolate_trend
    t_o, t_s = plan.transform if plan.transform is not None else (None, None)
    m_o, m_s = plan.means()
    B = transfer_operator(plan)

    eps = detrend(sim_future, mean_s, ar_s, extrapolate).values
    z = transform_values(eps, t_s) if t_s is not None else eps

    if plan.mode == "as-written":
        z_adj = z + B((m_o - m_s)[:, None])
        eps_adj = invert_values(z_adj, t_o) if t_o is not None else z_adj
        base = reconstruct(
            ResidualField(sites=sim_future.sites, calendar=calendar, values=eps_adj),
            mean_s, ar_s, extrapolate_trend=extrapolate,
        ).values
        bias = mean_o.evaluate(calendar, extrapolate) - mean_s.evaluate(calendar, extrapolate)
        values = base + B(bias)
    else:
        z_adj = m_o[:, None] + B(z - m_s[:, None])
        eps_adj = invert_values(z_adj, t_o) if t_o is not None else z_adj
        values = reconstruct(
            ResidualField(sites=sim_future.sites, calendar=calendar, values=eps_adj),
            mean_o, ar_o, extrapolate_trend=extrapolate,
        ).values

    if not np.all(np.isfinite(values)):
        site, day = np.argwhere(~np.isfinite(values))[0]
        raise NumericalError(f"Sortie d'ajustement non finie (site {site}, jour {day}).")

    negative = int(np.sum(values < 0))
    min_value = float(values.min())
    if plan.clamp_negative:
        if negative:
            log_event(
                LOGGER, "adjustment_clamped", level=logging.WARNING,
                method=plan.method, count=negative, min_value=min_value,
            )
        values = np.maximum(values, 0.0)
        out: SpatioTemporalField = SpatioTemporalField(
            sites=sim_future.sites, calendar=calendar, values=values
        )
    else:
        out = ResidualField(sites=sim_future.sites, calendar=calendar, values=values)

    diagnostics = AdjustmentDiagnostics(
        method=plan.method,
        mode=plan.mode,
        n_sites=out.n_sites,
        n_days=out.n_days,
        clamped_negative=negative if plan.clamp_negative else 0,
        min_value=min_value,
    )
    return AdjustmentResult(field=out, diagnostics=diagnostics)


def _require(plan: AdjustmentPlan, allowed: Iterable[str]) -> None:
    allowed = set(allowed)
    if plan.method not in allowed:
        raise ConfigError(f"Plan {plan.method} : méthode attendue parmi {sorted(allowed)}.")


def adjust_m(sim_future: SpatioTemporalField, plan: AdjustmentPlan) -> SpatioTemporalField:
    """Correction de la moyenne seule."""
    _require(plan, {"M"})
    return apply_plan(sim_future, plan).field


def adjust_mv(sim_future: SpatioTemporalField, plan: AdjustmentPlan) -> SpatioTemporalField:
    _require(plan, {"MV"})
    return apply_plan(sim_future, plan).field


def adjust_cov(sim_future: SpatioTemporalField, plan: AdjustmentPlan) -> SpatioTemporalField:
    _require(plan, {"MC", "MN"})
    return apply_plan(sim_future, plan).field


def adjust_transgaussian(
    sim_future: SpatioTemporalField, plan: AdjustmentPlan
) -> SpatioTemporalField:
    """Échelle gaussienne via λ_S, ajustement de covariance, retour via λ_O puis reconstruction."""
    _require(plan, TRANSFORM_METHODS)
    return apply_plan(sim_future, plan).field


# -----------------------------
# Ajustement d'un plan
# -----------------------------
def _centered(values: np.ndarray) -> np.ndarray:
    return values - values.mean(axis=1, keepdims=True)


def _covariance_kind(method: str, options: PlanOptions) -> str:
    kind = {"MC": "matern", "MN": "nonstationary"}.get(method, options.transform_covariance)
    if kind == "nonstationary" and options.metric != "euclidean":
        raise ConfigError(
            f"Le modèle non stationnaire (méthode {method}) travaille en coordonnées planes : "
            f"metric='{options.metric}' n'est accepté qu'avec la covariance de Matérn."
        )
    return kind


def _fit_covariance(
    values: np.ndarray,
    coords: np.ndarray,
    kind: str,
    options: PlanOptions,
    threads: Optional[int],
) -> CovarianceModel:
    if kind == "matern":
        return fit_matern(values, coords, metric=options.metric, threads=threads).params
    return fit_nonstat(values, coords, threads=threads)


def _cluster_vector(spec: TransformSpec, assignment: ClusterAssignment) -> np.ndarray:
    return np.array(
        [spec.lambda_per_site[assignment.members(c)[0]] for c in range(assignment.k_clusters)]
    )


def _resolve_clusters(
    method: str, n_sites: int, clusters: Optional[ClusterAssignment]
) -> ClusterAssignment:
    if method == "T1":
        return ClusterAssignment.single(n_sites)
    if clusters is None:
        raise ConfigError("La méthode TC exige une affectation de clusters (artefact 'clusters').")
    if clusters.n_sites != n_sites:
        raise DataError(
            f"Affectation de clusters à {clusters.n_sites} sites pour un champ à {n_sites} sites."
        )
    return clusters


def fit_plan(
    obs_hist: SpatioTemporalField,
    sim_hist: SpatioTemporalField,
    method: str,
    options: Optional[PlanOptions] = None,
    clusters: Optional[ClusterAssignment] = None,
    threads: Optional[int] = None,
    transform: Optional[Tuple[TransformSpec, TransformSpec]] = None,
) -> AdjustmentPlan:
    """
    Ajuste toutes les composantes historiques nécessaires à `method`.

    `transform` fixe les λ (O, S) et court-circuite leur estimation (sous-échantillons).
    """
    options = options or PlanOptions()
    if method not in METHODS:
        raise ConfigError(f"Méthode inconnue '{method}' (attendu : {', '.join(METHODS)}).")
    if not obs_hist.same_layout(sim_hist):
        raise DataError("Observations et simulations historiques n'ont pas les mêmes sites.")
    coords = obs_hist.coords
    kind = _covariance_kind(method, options) if method in COVARIANCE_METHODS else None

    mean_fits = tuple(fit_mean(f, K=options.K, with_trend=options.with_trend)
                      for f in (obs_hist, sim_hist))
    ar_fits = tuple(
        fit_ar(mean_residuals(f, m), P=options.P, threads=threads)
        for f, m in zip((obs_hist, sim_hist), mean_fits)
    )
    innovations = [
        detrend(f, m, a).values for f, m, a in zip((obs_hist, sim_hist), mean_fits, ar_fits)
    ]

    specs = search = means = None
    cov_models = cov_factors = None
    gaussian = innovations

    if method in TRANSFORM_METHODS:
        assignment = _resolve_clusters(method, obs_hist.n_sites, clusters)
        centered = [_centered(v) for v in innovations]
        if transform is not None:
            specs = tuple(transform)
        else:
            init = tuple(
                fit_lambda_by_cluster(v, assignment.labels, threads)[0] for v in centered
            )
            specs = init
            if options.lambda_strategy == "kl":
                search = optimize_lambdas(
                    *(
                        ResidualField(sites=f.sites, calendar=f.calendar, values=v)
                        for f, v in zip((obs_hist, sim_hist), innovations)
                    ),
                    assignment, method, options, init=init, threads=threads,
                )
                specs = tuple(
                    TransformSpec.from_clusters(lam, assignment.labels, provenance="cluster-kl")
                    for lam in (search.lambda_obs, search.lambda_sim)
                )
        gaussian = [transform_values(v, s) for v, s in zip(centered, specs)]
        means = tuple(g.mean(axis=1) for g in gaussian)

    if kind is not None:
        cov_models = tuple(_fit_covariance(g, coords, kind, options, threads) for g in gaussian)
        cov_factors = tuple(build_factor(m, coords) for m in cov_models)

    plan = AdjustmentPlan(
        method=method,
        mode=options.mode,
        mean_fits=mean_fits,
        ar_fits=ar_fits,
        coords=coords,
        cov_models=cov_models,
        cov_factors=cov_factors,
        transform=specs,
        gaussian_means=means,
        extrapolate_trend=options.extrapolate_trend,
        clamp_negative=options.clamp_negative,
        lambda_search=search,
    )
    log_event(
        LOGGER, "plan_fitted", method=method, mode=options.mode,
        n_sites=obs_hist.n_sites, n_days=obs_hist.n_days,
    )
    return plan


def restrict_plan(plan: AdjustmentPlan, rows: Sequence[int]) -> AdjustmentPlan:
    """Plan restreint à un sous-ensemble de sites (λ conservés, facteurs recalculés)."""
    rows = np.asarray(sorted(set(int(r) for r in rows)), dtype=np.int64)
    coords = plan.coords[rows]
    factors = None
    if plan.cov_models is not None:
        factors = tuple(build_factor(m, coords) for m in plan.cov_models)
    return AdjustmentPlan(
        method=plan.method,
        mode=plan.mode,
        mean_fits=tuple(f.subset(rows) for f in plan.mean_fits),
        ar_fits=tuple(f.subset(rows) for f in plan.ar_fits),
        coords=coords,
        cov_models=plan.cov_models,
        cov_factors=factors,
        transform=None if plan.transform is None else tuple(t.subset(rows) for t in plan.transform),
        gaussian_means=(
            None if plan.gaussian_means is None else tuple(m[rows] for m in plan.gaussian_means)
        ),
        extrapolate_trend=plan.extrapolate_trend,
        clamp_negative=plan.clamp_negative,
    )


# -----------------------------
# Recherche des λ (descente par coordonnées)
# -----------------------------
class _SearchState:
    """
    λ par site et statistiques gaussiennes (écart-type, moyenne) mises en cache par côté.

    La corrélation spatiale est figée à l'initialisation ; seuls l'écart-type et la moyenne
    des sites du cluster modifié sont recalculés à chaque évaluation.
    """

    def __init__(self, eps: Dict[str, np.ndarray], assignment: ClusterAssignment, days: np.ndarray):
        self.eps = eps
        self.assignment = assignment
        self.days = days
        self.lam: Dict[str, np.ndarray] = {}
        self.sd: Dict[str, np.ndarray] = {}
        self.mean: Dict[str, np.ndarray] = {}
        self.z_days: Dict[str, np.ndarray] = {}

    def set_cluster_lambdas(self, side: str, cluster_lambdas: np.ndarray) -> None:
        lam = np.asarray(cluster_lambdas, dtype=float)[self.assignment.labels]
        z = yeo_johnson(self.eps[side], lam[:, None])
        self.lam[side] = lam
        self.sd[side] = z.std(axis=1)
        self.mean[side] = z.mean(axis=1)
        self.z_days[side] = z[:, self.days]

    def candidate(self, side: str, cluster: int, value: float):
        rows = self.assignment.members(cluster)
        z = yeo_johnson(self.eps[side][rows], value)
        lam, sd, mean, z_days = (
            self.lam[side].copy(), self.sd[side].copy(), self.mean[side].copy(),
            self.z_days[side].copy(),
        )
        lam[rows] = value
        sd[rows] = z.std(axis=1)
        mean[rows] = z.mean(axis=1)
        z_days[rows] = z[:, self.days]
        return lam, sd, mean, z_days

    def commit(self, side: str, cluster: int, value: float) -> None:
        self.lam[side], self.sd[side], self.mean[side], self.z_days[side] = self.candidate(
            side, cluster, value
        )

    def cluster_lambdas(self, side: str) -> np.ndarray:
        return np.array(
            [self.lam[side][self.assignment.members(c)[0]]
             for c in range(self.assignment.k_clusters)]
        )


def _correlation_factor(
    gaussian: np.ndarray, coords: np.ndarray, options: PlanOptions, threads: Optional[int]
) -> np.ndarray:
    model = _fit_covariance(gaussian, coords, options.transform_covariance, options, threads)
    sigma = covariance_matrix(model, coords)
    d = np.sqrt(np.diag(sigma))
    lower, _ = cholesky_with_jitter(sigma / np.outer(d, d), label="corrélation")
    return lower


def optimize_lambdas(
    obs_hist: ResidualField,
    sim_hist: ResidualField,
    clusters: Optional[ClusterAssignment],
    method: str,
    options: Optional[PlanOptions] = None,
    init: Optional[Tuple[TransformSpec, TransformSpec]] = None,
    threads: Optional[int] = None,
) -> LambdaSearchResult:
    """
    Descente cyclique par coordonnées sur les 2·k λ (k par côté), minimisant la KL k-NN
    entre les innovations observées et les innovations simulées ajustées.

    Chaque pas 1-D est une recherche de Brent bornée dans une fenêtre autour de la valeur
    courante ; seuls les pas qui améliorent la KL sont acceptés.
    """
    options = options or PlanOptions()
    search = options.kl_search
    if method not in TRANSFORM_METHODS:
        raise ConfigError(f"optimize_lambdas ne s'applique qu'à T1/TC (reçu : {method}).")
    if not obs_hist.same_layout(sim_hist):
        raise DataError("Observations et simulations historiques n'ont pas les mêmes sites.")
    n = obs_hist.n_sites
    assignment = _resolve_clusters(method, n, clusters)
    _covariance_kind(method, options)
    eps = {"O": _centered(obs_hist.values), "S": _centered(sim_hist.values)}
    if init is None:
        init = tuple(fit_lambda_by_cluster(eps[s], assignment.labels, threads)[0] for s in "OS")

    T = min(obs_hist.n_days, sim_hist.n_days)
    rng = np.random.default_rng(search.seed)
    days = np.sort(rng.choice(T, size=min(search.day_subsample, T), replace=False))
    state = _SearchState(eps, assignment, days)
    for side, spec in zip("OS", init):
        state.set_cluster_lambdas(side, _cluster_vector(spec, assignment))

    coords = obs_hist.coords
    lower_o = _correlation_factor(
        yeo_johnson(eps["O"], state.lam["O"][:, None]), coords, options, threads
    )
    lower_s = _correlation_factor(
        yeo_johnson(eps["S"], state.lam["S"][:, None]), coords, options, threads
    )
    transfer = lower_o @ linalg.solve_triangular(lower_s, np.eye(n), lower=True)
    obs_cloud = eps["O"][:, days].T

    def _objective(lam_o, sd_o, mean_o, sd_s, mean_s, z_s) -> float:
        B = sd_o[:, None] * transfer / sd_s[None, :]
        if options.mode == "anomaly":
            z_adj = mean_o[:, None] + B @ (z_s - mean_s[:, None])
        else:
            z_adj = z_s + (B @ (mean_o - mean_s))[:, None]
        try:
            eps_hat = yeo_johnson_inverse(z_adj, lam_o[:, None])
        except TransformRangeError:
            return _RANGE_PENALTY
        value = knn_kl(obs_cloud, eps_hat.T, k=search.k, threads=threads).value
        if not np.isfinite(value):
            raise NumericalError("Objectif KL non fini pendant la recherche des λ.",
                                 code="KL_NONFINITE")
        return value

    def _evaluate(side: str, cluster: int, value: float) -> float:
        lam, sd, mean, z_days = state.candidate(side, cluster, value)
        if np.any(sd <= 0):
            return _RANGE_PENALTY
        if side == "O":
            return _objective(lam, sd, mean, state.sd["S"], state.mean["S"], state.z_days["S"])
        return _objective(state.lam["O"], state.sd["O"], state.mean["O"], sd, mean, z_days)

    best = _objective(
        state.lam["O"], state.sd["O"], state.mean["O"],
        state.sd["S"], state.mean["S"], state.z_days["S"],
    )
    trace: List[float] = [best]
    lo, hi = settings.LAMBDA_BOUNDS
    params = [("O", c) for c in range(assignment.k_clusters)] + [
        ("S", c) for c in range(assignment.k_clusters)
    ]
    converged = False
    cycles = 0
    for cycle in range(search.max_cycles):
        start = best
        for side, cluster in params:
            current = float(state.lam[side][assignment.members(cluster)[0]])
            a, b = max(lo, current - search.window), min(hi, current + search.window)
            res = optimize.minimize_scalar(
                lambda v: _evaluate(side, cluster, float(v)),
                bounds=(a, b), method="bounded", options={"xatol": 1e-3},
            )
            if np.isfinite(res.fun) and res.fun < best:
                state.commit(side, cluster, float(res.x))
                best = float(res.fun)
                trace.append(best)
        cycles = cycle + 1
        log_event(LOGGER, "lambda_search_cycle", cycle=cycles, kl=best, improvement=start - best)
        if start - best < search.tol:
            converged = True
            break

    result = LambdaSearchResult(
        lambda_obs=state.cluster_lambdas("O"),
        lambda_sim=state.cluster_lambdas("S"),
        kl_trace=tuple(trace),
        converged=converged,
        cycles=cycles,
        labels=assignment.labels,
    )
    for side, values in (("O", result.lambda_obs), ("S", result.lambda_sim)):
        stuck = np.flatnonzero((values - lo < _BOUND_TOL) | (hi - values < _BOUND_TOL))
        if stuck.size:
            log_event(
                LOGGER, "lambda_at_bound", level=logging.WARNING,
                side=side, clusters=stuck.tolist(), bounds=[lo, hi],
            )
    if not converged:
        log_event(LOGGER, "lambda_search_not_converged", level=logging.WARNING, cycles=cycles)
    return result


# -----------------------------
# Expérience de rapports de KL
# -----------------------------
def _kl_rows(
    obs_test: SpatioTemporalField,
    sim_test: SpatioTemporalField,
    plans: Dict[str, AdjustmentPlan],
    baseline: str,
    subsample: int,
    k: Optional[int],
    threads: Optional[int],
) -> List[dict]:
    estimates = {}
    for method, plan in plans.items():
        adjusted = apply_plan(sim_test, plan).field
        estimates[method] = knn_kl(obs_test.values.T, adjusted.values.T, k=k, threads=threads)
    base = estimates[baseline].value
    rows = []
    for method, est in estimates.items():
        if method == baseline:
            ratio = 1.0
        elif base > 0:
            ratio = est.value / base
        else:
            ratio = float("nan")
        rows.append({
            "subsample": subsample,
            "method": method,
            "n_sites": obs_test.n_sites,
            "kl": est.value,
            "k": est.k_used,
            "floored_pairs": est.floored_pairs,
            "kl_ratio": ratio,
        })
    if base <= 0:
        log_event(LOGGER, "kl_baseline_nonpositive", level=logging.WARNING,
                  subsample=subsample, baseline=baseline, value=base)
    return rows


def kl_ratio_experiment(
    obs: SpatioTemporalField,
    sim: SpatioTemporalField,
    split_date: date,
    methods: Sequence[str] = METHODS,
    options: Optional[PlanOptions] = None,
    subsample: Optional[SubsampleConfig] = None,
    clusters: Optional[ClusterAssignment] = None,
    baseline: str = "M",
    k: Optional[int] = None,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """
    Ajuste chaque méthode sur la période d'entraînement, corrige la période de test et
    compare KL(obs test ‖ ajusté) au niveau de référence.

    Ligne `subsample = 0` : tous les sites ; 1..N : sous-échantillons (λ et modèles de
    covariance du plan complet, facteurs recalculés sur les sites retenus).
    """
    options = options or PlanOptions()
    subsample = subsample or SubsampleConfig()
    methods = list(dict.fromkeys(methods))
    if baseline not in methods:
        methods.insert(0, baseline)
    obs_train, obs_test = split_by_date(obs, split_date)
    sim_train, sim_test = split_by_date(sim, split_date)

    plans = {
        m: fit_plan(obs_train, sim_train, m, options, clusters=clusters, threads=threads)
        for m in methods
    }
    rows = _kl_rows(obs_test, sim_test, plans, baseline, 0, k, threads)

    rng = np.random.default_rng(subsample.seed)
    n = obs.n_sites
    for j in range(1, subsample.n_subsamples + 1):
        if subsample.stratified_fraction is not None and clusters is not None:
            ids = stratified_subsample(clusters, subsample.stratified_fraction, subsample.seed + j)
        else:
            size = min(subsample.n_sites, n)
            ids = np.sort(rng.choice(n, size=size, replace=False))
        sub_plans = {m: restrict_plan(p, ids) for m, p in plans.items()}
        rows.extend(
            _kl_rows(
                subsample_sites(obs_test, ids), subsample_sites(sim_test, ids),
                sub_plans, baseline, j, k, threads,
            )
        )
    table = pd.DataFrame.from_records(rows)
    log_event(LOGGER, "kl_ratio_experiment", methods=methods, subsamples=subsample.n_subsamples)
    return table
