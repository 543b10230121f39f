from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.core.errors import DataError
from app.features.covariance.schemas import MaternParams
from app.features.energy.schemas import FarmSite, PowerCurve, ShearFit
from app.features.energy.services import (
    check_farms,
    expected_multiplier,
    extrapolate,
    fit_shear,
    krige_downscale,
    max_turbines,
    power_output,
    revenue_delta,
)
from tests.conftest import grid_coords, make_field

HEIGHTS = [10.0, 28.0, 46.0, 64.0, 82.0, 100.0]


@pytest.fixture
def curve():
    return PowerCurve(turbine_name="T2", hub_height=80.0, rotor_diameter=100.0,
                      rated_power=2000.0, cut_in=3.0, rated_speed=12.0, cut_out=25.0)


def _profiles(rng, alphas, n_days=60, noise=0.05):
    rows = []
    start = date(2010, 1, 1)
    for site, alpha in enumerate(alphas):
        for d in range(n_days):
            base = rng.uniform(3.0, 9.0)
            for h in HEIGHTS:
                speed = base * (h / 10.0) ** alpha * np.exp(noise * rng.standard_normal())
                rows.append((site, (start + timedelta(days=d)).isoformat(), h, speed))
    return pd.DataFrame(rows, columns=["site_id", "date", "height_m", "speed_mps"])


# -----------------------------
# Courbe de puissance
# -----------------------------
def test_cubic_curve_edges(curve):
    assert power_output(2.9, curve) == 0.0
    assert power_output(3.0, curve) == 0.0
    assert power_output(12.0, curve) == 2000.0
    assert power_output(25.0, curve) == 2000.0
    assert power_output(25.1, curve) == 0.0
    assert power_output(8.0, curve) == pytest.approx(2000.0 * (512 - 27) / (1728 - 27))


def test_curve_is_non_decreasing_below_cut_out(curve):
    v = np.linspace(0.0, 25.0, 501)
    assert np.all(np.diff(power_output(v, curve)) >= 0)


def test_tabulated_points_are_interpolated():
    curve = PowerCurve(turbine_name="tab", hub_height=80.0, rotor_diameter=90.0,
                       rated_power=2000.0, cut_in=3.0, rated_speed=12.0, cut_out=25.0,
                       points=[(4.0, 100.0), (8.0, 800.0)])
    np.testing.assert_allclose(power_output([3.5, 6.0, 10.0], curve), [50.0, 450.0, 1400.0])


def test_invalid_curves(curve):
    with pytest.raises(ValidationError):
        PowerCurve(turbine_name="x", hub_height=80.0, rotor_diameter=90.0,
                   rated_power=2000.0, cut_in=12.0, rated_speed=10.0, cut_out=25.0)
    with pytest.raises(ValidationError, match="décroissante"):
        PowerCurve(turbine_name="x", hub_height=80.0, rotor_diameter=90.0,
                   rated_power=2000.0, cut_in=3.0, rated_speed=12.0, cut_out=25.0,
                   points=[(4.0, 500.0), (8.0, 100.0)])
    with pytest.raises(DataError):
        power_output([-1.0, 4.0], curve)


def test_max_turbines_uses_square_spacing():
    assert max_turbines(100.0) == 144
    assert max_turbines(100.0, cell_area_km2=1.0, spacing=10.0) == 1


def test_check_farms(curve):
    curves = {"T2": curve}
    check_farms([FarmSite(site_id=0, turbine="T2", turbine_count=144, tariff_per_kwh=0.1)],
                curves, 2)
    with pytest.raises(DataError, match="espacement"):
        check_farms([FarmSite(site_id=0, turbine="T2", turbine_count=145, tariff_per_kwh=0.1)],
                    curves, 2)
    with pytest.raises(DataError, match="inconnue"):
        check_farms([FarmSite(site_id=0, turbine="X", turbine_count=1, tariff_per_kwh=0.1)],
                    curves, 2)
    with pytest.raises(DataError, match="absent"):
        check_farms([FarmSite(site_id=5, turbine="T2", turbine_count=1, tariff_per_kwh=0.1)],
                    curves, 2)


# -----------------------------
# Cisaillement
# -----------------------------
def test_shear_fit_recovers_exponents(rng):
    fit = fit_shear(_profiles(rng, [0.1, 0.2, 0.3]))
    np.testing.assert_allclose(fit.alpha, [0.1, 0.2, 0.3], atol=0.02)
    np.testing.assert_allclose(fit.sigma2, 0.05**2, rtol=0.3)
    assert np.all(fit.alpha_se < 0.01)
    assert fit.site_ids == (0, 1, 2)


def test_nonpositive_speeds_are_excluded_and_counted(rng):
    profiles = _profiles(rng, [0.15, 0.15])
    profiles.loc[3, "speed_mps"] = 0.0
    fit = fit_shear(profiles)
    assert fit.excluded.tolist() == [1, 0]
    assert fit.alpha[0] == pytest.approx(0.15, abs=0.02)


def test_shear_needs_enough_days(rng):
    with pytest.raises(DataError, match="jours"):
        fit_shear(_profiles(rng, [0.1], n_days=10))


def test_expected_multiplier_without_uncertainty():
    shear = ShearFit.constant(2, alpha=0.2)
    np.testing.assert_allclose(expected_multiplier(shear, 80.0), 8.0**0.2)
    with pytest.raises(DataError, match="référence"):
        expected_multiplier(shear, 10.0)


# -----------------------------
# Ensemble à hauteur de moyeu
# -----------------------------
def _noisy_shear(n):
    return ShearFit(site_ids=tuple(range(n)), alpha=np.full(n, 0.15), sigma2=np.full(n, 0.01),
                    r2=np.full(n, 0.9), alpha_se=np.full(n, 0.05))


def test_ensemble_draws_are_reproducible():
    surface = make_field(np.full((2, 30), 5.0))
    ensemble = extrapolate(surface, _noisy_shear(2), 80.0, n_draws=4, seed=9)
    assert len(ensemble) == 4
    np.testing.assert_array_equal(ensemble.draw(2).values, ensemble.draw(2).values)
    assert not np.array_equal(ensemble.draw(0).values, ensemble.draw(1).values)
    again = extrapolate(surface, _noisy_shear(2), 80.0, n_draws=4, seed=9)
    np.testing.assert_array_equal(
        [d.values for d in ensemble], [d.values for d in again]
    )


def test_ensemble_mean_matches_expected_multiplier():
    surface = make_field(np.ones((1, 50)))
    shear = _noisy_shear(1)
    means = [d.values.mean() for d in extrapolate(surface, shear, 80.0, n_draws=400, seed=1)]
    assert np.mean(means) == pytest.approx(expected_multiplier(shear, 80.0)[0], rel=0.03)


def test_ensemble_site_count_must_match():
    with pytest.raises(DataError, match="Shape mismatch"):
        extrapolate(make_field(np.ones((3, 5))), ShearFit.constant(2), 80.0, n_draws=1)


# -----------------------------
# Écarts de revenu
# -----------------------------
def _revenue(rng, curve, future_scale=1.0, tariff=0.1):
    hist = make_field(rng.uniform(3.0, 6.0, size=(2, 100)))
    future = hist.with_values(future_scale * hist.values)
    shear = ShearFit.constant(2)
    farms = [FarmSite(site_id=i, turbine="T2", turbine_count=10, tariff_per_kwh=tariff)
             for i in range(2)]
    return revenue_delta(
        extrapolate(hist, shear, 80.0, n_draws=3, seed=5),
        extrapolate(future, shear, 80.0, n_draws=3, seed=5),
        farms, {"T2": curve},
    )


def test_identical_inputs_give_zero_delta(rng, curve):
    delta = _revenue(rng, curve)
    assert delta.total_mean == 0.0 and delta.total_sd == 0.0
    assert delta.n_draws == 3
    assert list(delta.per_site.columns) == ["site_id", "turbine", "mean_delta", "sd_delta"]


def test_stronger_future_wind_increases_revenue(rng, curve):
    assert _revenue(rng, curve, future_scale=1.1).total_mean > 0


def test_delta_is_linear_in_tariff(curve):
    base = _revenue(np.random.default_rng(1), curve, future_scale=1.1, tariff=0.1)
    doubled = _revenue(np.random.default_rng(1), curve, future_scale=1.1, tariff=0.2)
    assert doubled.total_mean == pytest.approx(2.0 * base.total_mean)


def test_mismatched_ensembles(rng, curve):
    hist = make_field(rng.uniform(3.0, 6.0, size=(1, 10)))
    farms = [FarmSite(site_id=0, turbine="T2", turbine_count=1, tariff_per_kwh=0.1)]
    with pytest.raises(DataError, match="tailles"):
        revenue_delta(
            extrapolate(hist, ShearFit.constant(1), 80.0, n_draws=2, seed=0),
            extrapolate(hist, ShearFit.constant(1), 80.0, n_draws=3, seed=0),
            farms, {"T2": curve},
        )
    with pytest.raises(DataError, match="Aucun parc"):
        revenue_delta([hist], [hist], [], {"T2": curve})


# -----------------------------
# Krigeage
# -----------------------------
def test_kriging_interpolates_data_sites(rng):
    coarse = grid_coords(3)
    variogram = MaternParams(sigma2=1.0, rho=0.4, nu=0.5)
    values = rng.normal(size=(9, 4))
    pred, var = krige_downscale(values, coarse, coarse, variogram)
    np.testing.assert_allclose(pred, values, atol=1e-8)
    np.testing.assert_allclose(var, 0.0, atol=1e-8)


def test_kriging_preserves_constants_and_shapes():
    coarse = grid_coords(3)
    fine = grid_coords(7)
    variogram = MaternParams(sigma2=2.0, rho=0.3, nu=1.5)
    pred, var = krige_downscale(np.full(9, 4.2), coarse, fine, variogram)
    assert pred.shape == (49,) and var.shape == (49,)
    np.testing.assert_allclose(pred, 4.2)
    assert np.all(var >= 0) and np.all(var <= 2.0 + 1e-9)


def test_kriging_needs_three_sites():
    with pytest.raises(DataError):
        krige_downscale(np.ones(2), np.eye(2), np.zeros((1, 2)),
                        MaternParams(sigma2=1.0, rho=0.3, nu=0.5))
