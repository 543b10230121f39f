import numpy as np
import pytest

from app.core.errors import DataError
from app.features.divergence.services import (
    default_k,
    gaussian_kl,
    kth_neighbor_distances,
    knn_kl,
    knn_kl_both,
)


def test_default_k_rounds_square_root():
    assert default_k(100) == 10
    assert default_k(12) == 3
    assert default_k(2) == 1


def test_gaussian_closed_form():
    assert gaussian_kl([0, 0], np.eye(2), [0, 0], np.eye(2)) == pytest.approx(0.0)
    assert gaussian_kl([0, 0], np.eye(2), [1, 0], np.eye(2)) == pytest.approx(0.5)
    # variance doublée en dimension 1 : ½(1/2 − 1 + log 2)
    assert gaussian_kl(0, 1, 0, 2) == pytest.approx(0.5 * (0.5 - 1 + np.log(2)))


def test_estimator_tracks_gaussian_oracle(rng):
    obs = rng.standard_normal((4000, 2))
    sim = rng.standard_normal((4000, 2)) + np.array([1.0, 0.0])
    est = knn_kl(obs, sim, k=10, threads=1)
    assert est.value == pytest.approx(0.5, abs=0.1)
    assert est.k_used == 10 and est.m == 4000 and est.m_prime == 4000


def test_close_distributions_have_small_divergence(rng):
    obs = rng.standard_normal((2000, 3))
    sim = rng.standard_normal((2000, 3))
    assert abs(knn_kl(obs, sim).value) < 0.1


def test_result_independent_of_blocks_and_threads(rng):
    q = rng.standard_normal((300, 4))
    ref = rng.standard_normal((250, 4))
    a = kth_neighbor_distances(q, ref, 5, block_size=7, threads=1)
    b = kth_neighbor_distances(q, ref, 5, block_size=512, threads=4)
    np.testing.assert_array_equal(a, b)


def test_invariant_to_row_order(rng):
    obs = rng.standard_normal((300, 3))
    sim = rng.standard_normal((280, 3)) + 0.5
    ref = knn_kl(obs, sim, k=6, threads=1)
    shuffled = knn_kl(obs[rng.permutation(300)], sim[rng.permutation(280)], k=6, threads=2)
    assert shuffled.value == pytest.approx(ref.value, rel=1e-10)
    assert shuffled.floored_pairs == ref.floored_pairs


def test_self_is_excluded():
    pts = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_array_equal(
        kth_neighbor_distances(pts, pts, 1, exclude_self=True), [1.0, 1.0, 2.0]
    )


def test_k_must_be_smaller_than_sample():
    with pytest.raises(DataError, match="trop grand"):
        knn_kl(np.zeros((5, 1)) + np.arange(5)[:, None], np.arange(10.0)[:, None], k=5)


def test_dimension_mismatch():
    with pytest.raises(DataError, match="Dimensions"):
        knn_kl(np.ones((10, 2)), np.ones((10, 3)))


def test_duplicates_are_floored_and_counted(rng):
    obs = np.repeat(rng.standard_normal((20, 2)), 2, axis=0)
    est = knn_kl(obs, rng.standard_normal((40, 2)), k=1)
    assert est.floored_pairs >= 40
    assert np.isfinite(est.value)


def test_both_directions_record(rng):
    obs = rng.standard_normal((200, 2))
    sim = 2.0 * rng.standard_normal((200, 2))
    forward, backward = knn_kl_both(obs, sim, k=5)
    assert forward.value != backward.value
    record = forward.to_record()
    assert set(record) == {"value", "k", "m", "m_prime", "floored_pairs"}
