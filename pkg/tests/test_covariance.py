import numpy as np
import pytest
from scipy import linalg

from app.core.errors import DataError, NumericalError
from app.features.covariance.schemas import MaternParams, NonstatParams
from app.features.covariance.services import (
    build_factor,
    cholesky_with_jitter,
    covariance_matrix,
    fit_matern,
    fit_nonstat,
    matern_corr,
    matern_cov_matrix,
    nonstat_cov,
    nonstat_cov_matrix,
    place_knots,
    weight_at,
)
from tests.conftest import grid_coords


def _simulate(sigma: np.ndarray, T: int, rng) -> np.ndarray:
    return linalg.cholesky(sigma, lower=True) @ rng.standard_normal((len(sigma), T))


# -----------------------------
# Matérn
# -----------------------------
def test_exponential_special_case():
    params = MaternParams(sigma2=1.0, rho=0.3, nu=0.5)
    assert matern_corr(0.3, params) == pytest.approx(np.exp(-1.0))


def test_bessel_branch_matches_closed_form():
    h = np.linspace(0.0, 2.0, 30)
    closed = matern_corr(h, MaternParams(sigma2=1.0, rho=0.5, nu=1.5))
    bessel = matern_corr(h, MaternParams(sigma2=1.0, rho=0.5, nu=1.5 + 1e-9))
    np.testing.assert_allclose(bessel, closed, rtol=1e-6, atol=1e-9)


def test_correlation_is_one_at_zero_distance():
    assert matern_corr(0.0, MaternParams(sigma2=2.0, rho=1.0, nu=1.0)) == pytest.approx(1.0)


def test_cov_matrix_diagonal_and_nugget():
    coords = grid_coords(3)
    sigma = matern_cov_matrix(coords, MaternParams(sigma2=2.0, rho=0.4, nu=0.5, nugget=0.25))
    np.testing.assert_allclose(np.diag(sigma), 2.0)
    d01 = np.linalg.norm(coords[0] - coords[1])
    assert sigma[0, 1] == pytest.approx(2.0 * 0.75 * np.exp(-d01 / 0.4))


def test_fit_matern_recovers_parameters(rng):
    coords = grid_coords(5)
    truth = MaternParams(sigma2=2.0, rho=0.3, nu=0.5)
    Y = _simulate(matern_cov_matrix(coords, truth), 800, rng)
    fit = fit_matern(Y, coords, nu_grid=[0.5], threads=1)
    assert fit.params.rho == pytest.approx(0.3, rel=0.25)
    assert fit.params.sigma2 == pytest.approx(2.0, rel=0.2)
    assert fit.range_identified
    assert fit.n_replicates == 800


@pytest.mark.slow
def test_fit_matern_within_three_standard_errors(rng):
    coords = grid_coords(6)
    truth = MaternParams(sigma2=1.0, rho=0.25, nu=0.5)
    Y = _simulate(matern_cov_matrix(coords, truth), 2000, rng)
    fit = fit_matern(Y, coords, threads=2)
    assert fit.rho_se is not None
    assert abs(fit.params.rho - 0.25) < 3 * fit.rho_se + 0.05


def test_insufficient_replicates():
    with pytest.raises(DataError, match="insufficient replicates"):
        fit_matern(np.ones((4, 10)), grid_coords(2))


def test_coincident_sites_rejected(rng):
    coords = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DataError, match="dégénérée"):
        fit_matern(rng.normal(size=(3, 50)), coords)


# -----------------------------
# Non stationnaire
# -----------------------------
def test_knots_at_quarters_of_bounding_box():
    knots = place_knots(grid_coords(4))
    np.testing.assert_allclose(np.unique(knots[:, 0]), [0.3125, 0.6875])
    assert len(knots) == 4


def test_weights_are_normalized():
    knots = place_knots(grid_coords(4))
    w = weight_at(grid_coords(4), knots, 0.1)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    assert weight_at(np.array([0.5, 0.5]), knots, 0.1).shape == (4,)


def test_identical_knots_reduce_to_exponential():
    coords = grid_coords(4)
    params = NonstatParams.stationary(place_knots(coords), sigma=1.5, range_=0.2)
    expected = matern_cov_matrix(coords, MaternParams(sigma2=2.25, rho=0.2, nu=0.5))
    np.testing.assert_allclose(nonstat_cov_matrix(coords, params), expected, atol=1e-12)
    assert nonstat_cov(coords[0], coords[1], params) == pytest.approx(expected[0, 1])


def test_nonstationary_matrix_is_positive_semidefinite():
    coords = grid_coords(5)
    params = NonstatParams(
        knots=[tuple(k) for k in place_knots(coords).tolist()],
        sigma_at_knot=[0.5, 1.0, 1.5, 2.0],
        kernel_log_eigs=[(0.5, -0.5), (0.0, 0.0), (-0.3, 0.3), (1.0, -1.0)],
        kernel_angles=[0.0, 0.4, -0.8, 1.2],
        range_at_knot=[0.1, 0.2, 0.3, 0.15],
        lambda_sigma=0.1,
    )
    sigma = nonstat_cov_matrix(coords, params)
    np.testing.assert_allclose(sigma, sigma.T)
    assert np.linalg.eigvalsh(sigma).min() > -1e-10


def test_params_length_mismatch():
    with pytest.raises(ValueError, match="sigma_at_knot"):
        NonstatParams(
            knots=[(0.0, 0.0), (1.0, 1.0)], sigma_at_knot=[1.0],
            kernel_log_eigs=[(0.0, 0.0)] * 2, kernel_angles=[0.0] * 2,
            range_at_knot=[0.1] * 2, lambda_sigma=0.5,
        )


def test_fit_nonstat_on_stationary_field(rng):
    coords = grid_coords(6)
    Y = _simulate(matern_cov_matrix(coords, MaternParams(sigma2=1.0, rho=0.2, nu=0.5)), 400, rng)
    params = fit_nonstat(Y, coords, threads=2)
    assert params.n_knots == 4
    np.testing.assert_allclose(params.sigma_at_knot, 1.0, rtol=0.3)
    assert np.linalg.eigvalsh(covariance_matrix(params, coords)).min() > -1e-10

def test_fitted_kernels_have_unit_determinant(rng):
    coords = grid_coords(5)
    Y = _simulate(matern_cov_matrix(coords, MaternParams(sigma2=1.0, rho=0.3, nu=0.5)), 300, rng)
    params = fit_nonstat(Y, coords, threads=1)
    # log-valeurs propres liées (η, −η) : l'échelle passe entièrement par range_at_knot
    np.testing.assert_allclose([sum(pair) for pair in params.kernel_log_eigs], 0.0, atol=1e-12)



def test_knots_outside_bounding_box_rejected(rng):
    coords = grid_coords(4)
    with pytest.raises(DataError, match="boîte"):
        fit_nonstat(rng.normal(size=(16, 40)), coords, knots=np.array([[2.0, 2.0]]))


# -----------------------------
# Facteur
# -----------------------------
def test_factor_without_jitter():
    model = MaternParams(sigma2=1.0, rho=0.2, nu=0.5)
    factor = build_factor(model, grid_coords(3))
    assert factor.jitter == 0.0
    np.testing.assert_allclose(factor.covariance(), matern_cov_matrix(grid_coords(3), model))


def test_jitter_rescues_singular_psd_matrix():
    lower, jitter = cholesky_with_jitter(np.ones((3, 3)))
    assert 0 < jitter <= 1e-4
    assert np.all(np.diag(lower) > 0)


def test_not_spd_raises():
    with pytest.raises(NumericalError) as info:
        cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.code == "NOT_SPD"
