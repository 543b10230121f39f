from datetime import date

import numpy as np
import pytest

from app.core.errors import ConfigError, DataError
from app.features.adjustment.schemas import (
    AdjustmentPlan,
    KlSearchOptions,
    PlanOptions,
    SubsampleConfig,
)
from app.features.adjustment.services import (
    adjust_m,
    apply_plan,
    fit_plan,
    kl_ratio_experiment,
    optimize_lambdas,
    restrict_plan,
    transfer_matrix,
    transfer_operator,
)
from app.features.climatology.services import detrend, fit_ar, fit_mean, mean_residuals
from app.features.clustering.schemas import ClusterAssignment
from app.features.clustering.services import cluster_features, weighted_kmeans
from app.features.covariance.services import factor_from_matrix
from app.features.fields.schemas import ResidualField, SpatioTemporalField
from app.features.fields.services import subsample_sites
from app.features.transform.services import yeo_johnson_inverse
from app.storage.plans import PlanRepository
from tests.conftest import make_field


def _scaled(field: SpatioTemporalField, factor: float) -> SpatioTemporalField:
    return SpatioTemporalField(sites=field.sites, calendar=field.calendar,
                               values=factor * field.values)


def _mle_options(**kwargs) -> PlanOptions:
    return PlanOptions(lambda_strategy="mle", transform_covariance="matern", **kwargs)


def _two_clusters(field: SpatioTemporalField) -> ClusterAssignment:
    features = cluster_features(np.linspace(0.2, 1.4, field.n_sites), field.coords)
    return weighted_kmeans(features, k=2, seed=0, restarts=2, threads=1)


# -----------------------------
# Chaîne de réduction (obs = sim → identité)
# -----------------------------
@pytest.mark.parametrize("method", ["M", "MV", "MC", "MN", "T1", "TC"])
@pytest.mark.parametrize("mode", ["as-written", "anomaly"])
def test_identical_histories_leave_simulation_unchanged(wind_pair, method, mode):
    _, sim = wind_pair
    clusters = _two_clusters(sim) if method == "TC" else None
    plan = fit_plan(sim, sim, method, _mle_options(mode=mode), clusters=clusters, threads=1)
    result = apply_plan(sim, plan)
    np.testing.assert_allclose(result.field.values, sim.values, atol=1e-8)
    assert result.diagnostics.method == method and result.diagnostics.mode == mode


# -----------------------------
# Opérateur de transfert B = L_O·L_S⁻¹
# -----------------------------
def _factor_plan(rng, sigma_o: np.ndarray, sigma_s: np.ndarray) -> AdjustmentPlan:
    field = make_field(rng.normal(5.0, 1.0, size=(len(sigma_o), 60)))
    mean_fit = fit_mean(field, K=0, with_trend=False)
    ar_fit = fit_ar(mean_residuals(field, mean_fit), P=0, threads=1)
    return AdjustmentPlan(
        method="MC",
        mean_fits=(mean_fit, mean_fit),
        ar_fits=(ar_fit, ar_fit),
        coords=field.coords,
        cov_factors=(factor_from_matrix(sigma_o), factor_from_matrix(sigma_s)),
    )


def test_transfer_of_proportional_covariances_is_scalar(rng):
    sigma_s = np.array([[1.0, 0.8], [0.8, 1.0]])
    B = transfer_matrix(_factor_plan(rng, 2.0 * sigma_s, sigma_s))
    np.testing.assert_allclose(B, np.sqrt(2.0) * np.eye(2), atol=1e-12)


def test_transfer_from_independent_sites_is_obs_factor(rng):
    # Σ_S = I : B = L_O = [[1, 0], [0.5, √0.75]]
    B = transfer_matrix(_factor_plan(rng, np.array([[1.0, 0.5], [0.5, 1.0]]), np.eye(2)))
    np.testing.assert_allclose(B, [[1.0, 0.0], [0.5, np.sqrt(0.75)]], atol=1e-12)


def test_transfer_maps_sim_factor_onto_obs_factor(rng):
    A = rng.normal(size=(4, 4))
    C = rng.normal(size=(4, 4))
    sigma_s = A @ A.T + np.eye(4)
    sigma_o = C @ C.T + np.eye(4)
    plan = _factor_plan(rng, sigma_o, sigma_s)
    lower_o, lower_s = (f.lower for f in plan.cov_factors)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(transfer_operator(plan)(lower_s @ x), lower_o @ x, atol=1e-10)

    B = transfer_matrix(plan)
    np.testing.assert_allclose(B @ sigma_s @ B.T, sigma_o, atol=1e-9)
    # la variante transposée L_O·L_S⁻ᵀ ne reproduit pas Σ_O
    transposed = lower_o @ np.linalg.inv(lower_s).T
    assert not np.allclose(transposed @ sigma_s @ transposed.T, sigma_o, atol=1e-6)


def test_mean_correction_shifts_by_climatology(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "M", threads=1)
    out = apply_plan(sim, plan).field
    shift = plan.mean_fits[0].evaluate(sim.calendar) - plan.mean_fits[1].evaluate(sim.calendar)
    np.testing.assert_allclose(out.values, np.maximum(sim.values + shift, 0.0), atol=1e-8)
    # biais moyen de +1 m/s dans les simulations
    assert np.mean(out.values) < np.mean(sim.values) - 0.5


def test_variance_ratio_in_anomaly_mode(wind_pair):
    _, sim = wind_pair
    plan = fit_plan(_scaled(sim, 2.0), sim, "MV", PlanOptions(mode="anomaly"), threads=1)
    np.testing.assert_allclose(
        plan.ar_fits[0].innovation_sd / plan.ar_fits[1].innovation_sd, 2.0, rtol=1e-9
    )
    out = apply_plan(sim, plan).field
    np.testing.assert_allclose(out.values, 2.0 * sim.values, rtol=1e-8, atol=1e-8)


def test_variance_ratio_as_written_scales_mean_bias_only(wind_pair):
    _, sim = wind_pair
    plan = fit_plan(_scaled(sim, 2.0), sim, "MV", PlanOptions(mode="as-written"), threads=1)
    out = apply_plan(sim, plan).field
    expected = sim.values + 2.0 * plan.mean_fits[1].evaluate(sim.calendar)
    np.testing.assert_allclose(out.values, expected, rtol=1e-8, atol=1e-8)


def test_tc_without_clusters_is_a_config_error(wind_pair):
    obs, sim = wind_pair
    with pytest.raises(ConfigError, match="clusters"):
        fit_plan(obs, sim, "TC", _mle_options(), threads=1)


@pytest.mark.parametrize(
    "method, options",
    [("MN", PlanOptions(metric="great-circle")),
     ("T1", PlanOptions(metric="great-circle", lambda_strategy="mle",
                        transform_covariance="nonstationary"))],
)
def test_nonstationary_model_rejects_great_circle(wind_pair, method, options):
    obs, sim = wind_pair
    with pytest.raises(ConfigError, match="great-circle"):
        fit_plan(obs, sim, method, options, threads=1)


def test_matern_accepts_great_circle(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "MC", PlanOptions(metric="great-circle"), threads=1)
    assert plan.cov_factors is not None


def test_unknown_method_and_layout_mismatch(wind_pair):
    obs, sim = wind_pair
    with pytest.raises(ConfigError, match="inconnue"):
        fit_plan(obs, sim, "QQ")
    with pytest.raises(DataError):
        fit_plan(obs, subsample_sites(sim, [0, 1, 2]), "M")


def test_typed_entry_points_check_method(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "MV", threads=1)
    with pytest.raises(ConfigError):
        adjust_m(sim, plan)


def test_future_field_must_match_plan_sites(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "M", threads=1)
    with pytest.raises(DataError, match="Shape mismatch"):
        apply_plan(subsample_sites(sim, [0, 1]), plan)


# -----------------------------
# Vitesses négatives
# -----------------------------
def _negative_prone(rng):
    obs = make_field(rng.gamma(2.0, 0.5, size=(3, 400)))
    sim = make_field(np.maximum(5.0 + 1.5 * rng.standard_normal((3, 400)), 0.0))
    return obs, sim


def test_negative_speeds_are_clamped_and_counted(rng):
    obs, sim = _negative_prone(rng)
    options = PlanOptions(K=0, P=0, with_trend=False)
    result = apply_plan(sim, fit_plan(obs, sim, "M", options))
    assert result.diagnostics.clamped_negative > 0
    assert result.diagnostics.min_value < 0
    assert result.field.values.min() == 0.0
    assert not isinstance(result.field, ResidualField)


def test_unclamped_output_keeps_negative_values(rng):
    obs, sim = _negative_prone(rng)
    options = PlanOptions(K=0, P=0, with_trend=False, clamp_negative=False)
    result = apply_plan(sim, fit_plan(obs, sim, "M", options))
    assert isinstance(result.field, ResidualField)
    assert result.field.values.min() < 0
    assert result.diagnostics.clamped_negative == 0


# -----------------------------
# Persistance et sous-ensembles
# -----------------------------
@pytest.mark.parametrize("method", ["MC", "T1"])
def test_saved_plan_gives_same_adjustment(tmp_path, wind_pair, method):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, method, _mle_options(), threads=1)
    repo = PlanRepository(tmp_path)
    repo.save("plan", plan, seed=1)
    again = repo.load("plan")
    assert again.method == method and again.mode == plan.mode
    np.testing.assert_allclose(
        apply_plan(sim, again).field.values, apply_plan(sim, plan).field.values, atol=1e-10
    )


def test_restricted_mean_plan_matches_full_rows(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "M", threads=1)
    rows = [0, 4, 8]
    sub = restrict_plan(plan, rows)
    assert sub.n_sites == 3
    full = apply_plan(sim, plan).field.values
    part = apply_plan(subsample_sites(sim, rows), sub).field.values
    np.testing.assert_allclose(part, full[rows], atol=1e-10)


def test_restricted_covariance_plan_rebuilds_factors(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "T1", _mle_options(), threads=1)
    sub = restrict_plan(plan, [6, 1, 3, 1])
    assert [f.n for f in sub.cov_factors] == [3, 3]
    assert sub.cov_models == plan.cov_models
    np.testing.assert_array_equal(
        sub.transform[0].lambda_per_site, plan.transform[0].lambda_per_site[[1, 3, 6]]
    )
    np.testing.assert_allclose(sub.coords, plan.coords[[1, 3, 6]])


# -----------------------------
# Recherche des λ
# -----------------------------
def _search_options(**kwargs) -> PlanOptions:
    return PlanOptions(
        transform_covariance="matern",
        kl_search=KlSearchOptions(day_subsample=200, max_cycles=2, k=5, seed=3),
        **kwargs,
    )


def _innovations(field, plan):
    return detrend(field, plan.mean_fits[0], plan.ar_fits[0])


def test_lambda_search_trace_is_non_increasing(wind_pair):
    obs, sim = wind_pair
    base_o = fit_plan(obs, obs, "M", threads=1)
    base_s = fit_plan(sim, sim, "M", threads=1)
    result = optimize_lambdas(
        _innovations(obs, base_o), _innovations(sim, base_s), None, "T1",
        _search_options(), threads=1,
    )
    trace = np.array(result.kl_trace)
    assert np.all(np.diff(trace) <= 0)
    assert result.lambda_obs.shape == (1,) and result.lambda_sim.shape == (1,)
    assert -2.0 <= result.lambda_obs[0] <= 4.0
    assert 1 <= result.cycles <= 2


def test_lambda_search_only_for_transform_methods(wind_pair):
    obs, _ = wind_pair
    plan = fit_plan(obs, obs, "M", threads=1)
    eps = _innovations(obs, plan)
    with pytest.raises(ConfigError):
        optimize_lambdas(eps, eps, None, "MC")


def test_kl_strategy_records_search_in_plan(wind_pair):
    obs, sim = wind_pair
    plan = fit_plan(obs, sim, "T1", _search_options(), threads=1)
    assert plan.lambda_search is not None
    assert plan.transform[0].provenance == "cluster-kl"
    assert np.ptp(plan.transform[1].lambda_per_site) == 0
    assert "lambda_search" in plan.to_dict()


# -----------------------------
# Expérience de rapports de KL
# -----------------------------
def test_kl_ratio_experiment_rows_and_baseline(wind_pair):
    obs, sim = wind_pair
    table = kl_ratio_experiment(
        obs, sim, date(2002, 1, 1), methods=["MV"], options=PlanOptions(mode="anomaly"),
        subsample=SubsampleConfig(n_subsamples=1, n_sites=5, seed=2), k=5, threads=1,
    )
    assert len(table) == 4
    assert set(table["method"]) == {"M", "MV"}
    assert sorted(table["n_sites"].unique().tolist()) == [5, 9]
    baseline = table[table["method"] == "M"]
    np.testing.assert_allclose(baseline["kl_ratio"], 1.0)
    full_mv = table[(table["method"] == "MV") & (table["subsample"] == 0)]
    assert float(full_mv["kl_ratio"].iloc[0]) < 1.0


def _two_skew_regimes(rng, n_days=3000):
    """Obs : 3 sites asymétriques à droite (λ = 0.4), 3 à gauche (λ = 1.6). Sim gaussienne."""
    lam = np.repeat([0.4, 1.6], 3)[:, None]
    obs = make_field(20.0 + yeo_johnson_inverse(rng.standard_normal((6, n_days)), lam))
    sim = make_field(20.0 + 1.5 * rng.standard_normal((6, n_days)))
    return obs, sim


def test_cluster_lambdas_beat_pooled_lambda_on_heterogeneous_skewness(rng):
    obs, sim = _two_skew_regimes(rng)
    clusters = ClusterAssignment.from_labels([0, 0, 0, 1, 1, 1])
    options = _mle_options(K=0, P=0, with_trend=False, mode="anomaly")

    plan = fit_plan(obs, sim, "TC", options, clusters=clusters, threads=1)
    lam_o = plan.transform[0].lambda_per_site
    assert lam_o[:3].max() < 1.0 < lam_o[3:].min()

    table = kl_ratio_experiment(obs, sim, date(2004, 1, 1), methods=["TC"], options=options,
                                clusters=clusters, baseline="T1", threads=1)
    kl = dict(zip(table["method"], table["kl"]))
    assert kl["TC"] <= kl["T1"]
    assert float(table.loc[table["method"] == "TC", "kl_ratio"].iloc[0]) < 1.0
