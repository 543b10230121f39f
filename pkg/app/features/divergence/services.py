"""
➡️ But : Divergence de Kullback-Leibler entre deux échantillons multivariés par k plus
proches voisins, et forme fermée gaussienne (oracle de test).

D̂(O‖S) = (d/m) Σ_i log(ν_k(i) / ρ_k(i)) + log(m′ / (m − 1))

ρ_k(i) : distance de X_i à son k-ième voisin parmi les autres points O (i exclu).
ν_k(i) : distance de X_i à son k-ième voisin parmi les points S.

🔹 Recherche exacte par blocs de requêtes : chaque ligne est calculée indépendamment,
donc le résultat ne dépend ni de la taille des blocs ni du nombre de threads.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from app.core.config import settings
from app.core.errors import DataError
from app.core.logs import log_event
from app.features.divergence.schemas import KlEstimate, SampleCloud
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)


def default_k(m: int) -> int:
    """round(√m), minimum 1 (arrondi au plus proche, 0.5 vers le haut)."""
    return max(1, int(np.floor(np.sqrt(m) + 0.5)))


def _as_cloud(x, label) -> SampleCloud:
    return x if isinstance(x, SampleCloud) else SampleCloud(points=x, label=label)


def kth_neighbor_distances(
    queries: np.ndarray,
    reference: np.ndarray,
    k: int,
    exclude_self: bool = False,
    block_size: Optional[int] = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Distance euclidienne de chaque requête à son k-ième voisin dans `reference`."""
    block = block_size or settings.KL_BLOCK_SIZE
    starts = list(range(0, len(queries), block))

    def _block(start: int) -> np.ndarray:
        stop = min(start + block, len(queries))
        dist = cdist(queries[start:stop], reference)
        if exclude_self:
            rows = np.arange(stop - start)
            dist[rows, start + rows] = np.inf
        return np.partition(dist, k - 1, axis=1)[:, k - 1]

    return np.concatenate(ordered_map(_block, starts, threads))


def knn_kl(
    obs: SampleCloud | np.ndarray,
    sim: SampleCloud | np.ndarray,
    k: Optional[int] = None,
    threads: Optional[int] = None,
) -> KlEstimate:
    obs = _as_cloud(obs, "observation")
    sim = _as_cloud(sim, "simulation")
    if obs.d != sim.d:
        raise DataError(f"Dimensions incompatibles: {obs.d} ≠ {sim.d}.")
    m, m_prime, d = obs.m, sim.m, obs.d
    k = default_k(m) if k is None else int(k)
    if k < 1:
        raise DataError("k doit être ≥ 1.")
    if k >= m or k > m_prime:
        raise DataError(f"k={k} trop grand pour m={m}, m'={m_prime} (il faut k < m et k ≤ m').")

    rho = kth_neighbor_distances(obs.points, obs.points, k, exclude_self=True, threads=threads)
    nu = kth_neighbor_distances(obs.points, sim.points, k, threads=threads)

    floor = settings.KL_DISTANCE_FLOOR
    floored = int(np.sum(rho < floor) + np.sum(nu < floor))
    if floored:
        log_event(LOGGER, "kl_distance_floored", level=logging.WARNING, floored_pairs=floored)
    rho = np.maximum(rho, floor)
    nu = np.maximum(nu, floor)

    value = d / m * float(np.sum(np.log(nu / rho))) + float(np.log(m_prime / (m - 1)))
    return KlEstimate(value=value, k_used=k, m=m, m_prime=m_prime, floored_pairs=floored)


def knn_kl_both(
    obs, sim, k: Optional[int] = None, threads: Optional[int] = None
) -> Tuple[KlEstimate, KlEstimate]:
    """(D̂(O‖S), D̂(S‖O)) : l'estimateur n'est pas symétrique."""
    obs = _as_cloud(obs, "observation")
    sim = _as_cloud(sim, "simulation")
    return knn_kl(obs, sim, k, threads), knn_kl(sim, obs, k, threads)


def gaussian_kl(mu0, sigma0, mu1, sigma1) -> float:
    """½[tr(Σ₁⁻¹Σ₀) − d + (μ₁−μ₀)ᵀΣ₁⁻¹(μ₁−μ₀) + log(|Σ₁|/|Σ₀|)] en nats."""
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=float))
    d = len(mu0)
    if sigma0.shape != (d, d) or sigma1.shape != (d, d) or len(mu1) != d:
        raise DataError("Dimensions incompatibles pour gaussian_kl.")
    try:
        l0 = linalg.cholesky(sigma0, lower=True)
        l1 = linalg.cholesky(sigma1, lower=True)
    except linalg.LinAlgError as exc:
        raise DataError("Matrice de covariance non SPD.") from exc

    trace = np.trace(linalg.cho_solve((l1, True), sigma0))
    diff = mu1 - mu0
    quad = float(diff @ linalg.cho_solve((l1, True), diff))
    logdet = 2.0 * (np.sum(np.log(np.diag(l1))) - np.sum(np.log(np.diag(l0))))
    return float(0.5 * (trace - d + quad + logdet))
