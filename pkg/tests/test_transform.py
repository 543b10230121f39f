import numpy as np
import pytest
from scipy import stats

from app.core.errors import DataError, TransformRangeError
from app.features.transform.schemas import LambdaEstimate, TransformSpec
from app.features.transform.services import (
    fit_lambda_by_cluster,
    fit_lambda_mle,
    fit_lambda_per_site,
    invert_values,
    moments,
    moments_table,
    transform_values,
    yeo_johnson,
    yeo_johnson_inverse,
)


def test_known_values():
    assert yeo_johnson(3.0, 0.5) == pytest.approx(2.0)
    assert yeo_johnson(-1.0, 0.0) == pytest.approx(-1.5)
    assert yeo_johnson(np.e - 1.0, 0.0) == pytest.approx(1.0)
    assert yeo_johnson(1.0 - np.e, 2.0) == pytest.approx(-1.0)


def test_identity_at_lambda_one():
    x = np.linspace(-5, 5, 41)
    np.testing.assert_allclose(yeo_johnson(x, 1.0), x, atol=1e-12)


def test_zero_is_fixed_point():
    for lam in (-2.0, 0.0, 0.7, 2.0, 4.0):
        assert yeo_johnson(0.0, lam) == 0.0


def test_matches_scipy(rng):
    x = rng.normal(size=200) * 3
    for lam in (-1.3, 0.0, 0.4, 2.0, 3.1):
        np.testing.assert_allclose(yeo_johnson(x, lam), stats.yeojohnson(x, lmbda=lam), rtol=1e-10)


def test_inverse_recovers_input(rng):
    x = rng.normal(size=500) * 4
    for lam in (-1.5, 0.0, 1.0, 2.0, 3.5):
        np.testing.assert_allclose(yeo_johnson_inverse(yeo_johnson(x, lam), lam), x, atol=1e-9)


def test_inverse_out_of_range_reports_bound():
    with pytest.raises(TransformRangeError) as info:
        yeo_johnson_inverse(np.array([[0.0, 0.2], [1.5, 0.1]]), -1.0)
    assert info.value.bound == pytest.approx(1.0)
    assert (info.value.site, info.value.day) == (1, 0)


def test_inverse_lower_bound_for_large_lambda():
    with pytest.raises(TransformRangeError) as info:
        yeo_johnson_inverse(-2.0, 3.0)
    assert info.value.bound == pytest.approx(-1.0)


def test_monotone_in_x():
    x = np.linspace(-10, 10, 201)
    for lam in (-2.0, 0.5, 4.0):
        assert np.all(np.diff(yeo_johnson(x, lam)) > 0)


# -----------------------------
# λ-MLE
# -----------------------------
def test_mle_corrects_right_skew(rng):
    sample = rng.gamma(2.0, 1.0, size=2000) - 2.0
    est = fit_lambda_mle(sample)
    assert est.lambda_hat < 1.0
    assert est.ci_low < est.lambda_hat < est.ci_high
    skew_after = stats.skew(yeo_johnson(sample, est.lambda_hat))
    assert abs(skew_after) < abs(stats.skew(sample))


def test_mle_near_one_for_gaussian(rng):
    est = fit_lambda_mle(rng.normal(size=5000))
    assert abs(est.lambda_hat - 1.0) < 0.25


def test_constant_sample_is_rejected():
    with pytest.raises(DataError, match="constant"):
        fit_lambda_mle(np.full(100, 2.0))


def test_small_sample_is_rejected():
    with pytest.raises(DataError, match="trop petit"):
        fit_lambda_mle(np.arange(5.0))


def test_estimate_requires_bracketing_interval():
    with pytest.raises(ValueError):
        LambdaEstimate(lambda_hat=1.0, ci_low=1.2, ci_high=1.5, loglik=0.0)


def test_cluster_lambdas_are_constant_within_clusters(rng):
    values = np.vstack([rng.gamma(2.0, 1.0, 300) for _ in range(4)] +
                       [rng.normal(size=300) for _ in range(3)])
    labels = np.array([0, 0, 0, 0, 1, 1, 1])
    spec, estimates = fit_lambda_by_cluster(values, labels, threads=1)
    assert spec.provenance == "cluster-mle"
    assert set(estimates) == {0, 1}
    assert np.ptp(spec.lambda_per_site[:4]) == 0
    assert np.ptp(spec.lambda_per_site[4:]) == 0
    assert spec.lambda_per_site[0] < spec.lambda_per_site[4]


def test_per_site_fit_and_field_round_trip(rng):
    values = rng.gamma(2.0, 1.0, size=(3, 400)) - 2.0
    spec, estimates = fit_lambda_per_site(values, threads=2)
    assert len(estimates) == 3 and spec.provenance == "pointwise-mle"
    z = transform_values(values, spec)
    np.testing.assert_allclose(invert_values(z, spec), values, atol=1e-9)


def test_spec_rejects_mixed_lambdas_inside_cluster():
    with pytest.raises(ValueError, match="cluster 0"):
        TransformSpec(np.array([0.5, 0.6]), "cluster-kl", np.array([0, 0]))


def test_spec_dict_round_trip():
    spec = TransformSpec.from_clusters([0.3, 1.2], np.array([1, 0, 1]), "cluster-kl")
    again = TransformSpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(again.lambda_per_site, [1.2, 0.3, 1.2])
    np.testing.assert_array_equal(again.cluster_labels, [1, 0, 1])


# -----------------------------
# Moments
# -----------------------------
def test_symmetric_sample_has_zero_skew():
    skew, kurt = moments(np.tile([-1.0, 0.0, 1.0], 10))
    assert skew == pytest.approx(0.0, abs=1e-12)
    # masse 2/3 sur ±1 : m4/m2² = (2/3)/(4/9) = 1.5
    assert kurt == pytest.approx(1.5 - 3.0)


def test_moments_need_four_values():
    with pytest.raises(DataError):
        moments([1.0, 2.0, 3.0])


def test_moments_table_shape(rng):
    table = moments_table(rng.normal(size=(5, 100)))
    assert table.shape == (5, 2)
