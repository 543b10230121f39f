"""
➡️ But : k-means pondéré sur les triplets (λ-MLE, lat, lon) et sous-échantillonnage stratifié.

- Chaque variable est centrée-réduite puis multipliée par √poids.
- N redémarrages (initialisation gloutonne par point le plus éloigné, premier point tiré
  au hasard), meilleur WCSS conservé.
- Cluster vide : ré-initialisé sur le point le plus éloigné de son centre.

🔹 Déterministe pour une graine donnée, quel que soit le nombre de threads.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from sklearn.preprocessing import scale

from app.core.config import settings
from app.core.errors import DataError, NumericalError
from app.core.logs import log_event
from app.features.clustering.schemas import ClusterAssignment
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)


def scale_features(features: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """z-score par colonne puis × √w (colonne constante : seulement centrée)."""
    X = scale(np.asarray(features, dtype=float))
    return X * np.sqrt(np.asarray(weights, dtype=float))


def _sq_dist(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def farthest_point_init(X: np.ndarray, k: int, first: int) -> np.ndarray:
    chosen = [first]
    mind = ((X - X[first]) ** 2).sum(-1)
    for _ in range(1, k):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, ((X - X[nxt]) ** 2).sum(-1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int):
    k = len(centers)
    history = []
    labels = np.zeros(len(X), dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dist(X, centers)
        labels = np.argmin(d2, axis=1)

        for attempt in range(k):
            counts = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if not empty.size:
                break
            own = d2[np.arange(len(X)), labels]
            movable = counts[labels] > 1
            if not movable.any():
                break
            far = int(np.argmax(np.where(movable, own, -np.inf)))
            labels[far] = empty[0]
            centers[empty[0]] = X[far]
            d2[far, empty[0]] = 0.0
        if np.any(np.bincount(labels, minlength=k) == 0):
            raise NumericalError("Cluster vide après ré-initialisations (points dupliqués ?).")

        history.append(float(((X - centers[labels]) ** 2).sum()))
        new_centers = np.vstack([X[labels == c].mean(axis=0) for c in range(k)])
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers

    wcss = float(((X - centers[labels]) ** 2).sum())
    if not history or wcss < history[-1]:
        history.append(wcss)
    return labels, centers, wcss, history


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumérote par ordre de première apparition."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(len(order), dtype=np.int64)
    mapping[np.unique(labels)[order]] = np.arange(len(order))
    return mapping[labels]


def weighted_kmeans(
    features: np.ndarray,
    weights: Sequence[float] | None = None,
    k: int | None = None,
    seed: int | None = None,
    restarts: int | None = None,
    threads: Optional[int] = None,
) -> ClusterAssignment:
    weights = tuple(settings.CLUSTER_WEIGHTS if weights is None else weights)
    k = settings.DEFAULT_CLUSTERS if k is None else int(k)
    seed = settings.DEFAULT_SEED if seed is None else seed
    restarts = settings.CLUSTER_RESTARTS if restarts is None else restarts

    F = np.asarray(features, dtype=float)
    if F.ndim != 2 or F.shape[1] != len(weights):
        raise DataError("Features (n, 3) et poids (3,) attendus.")
    if not np.all(np.isfinite(F)):
        raise DataError("Features non finies.")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-8):
        raise DataError("Les poids doivent être ≥ 0 et sommer à 1.")
    n = len(F)
    if k < 1 or k > n:
        raise DataError(f"k={k} invalide pour {n} sites.")

    X = scale_features(F, w)
    rng = np.random.default_rng(seed)
    firsts = rng.integers(0, n, size=restarts).tolist()

    def _run(first: int):
        return _lloyd(X, farthest_point_init(X, k, first), settings.CLUSTER_MAX_ITER)

    runs = ordered_map(_run, firsts, threads)
    best = min(range(len(runs)), key=lambda r: (runs[r][2], r))
    labels, _, wcss, history = runs[best]

    labels = _canonical(labels)
    centers = np.vstack([F[labels == c].mean(axis=0) for c in range(k)])
    assignment = ClusterAssignment(
        labels=labels,
        centers=centers,
        weights=weights,
        k_clusters=k,
        wcss=wcss,
        wcss_history=tuple(history),
    )
    _log_size_diagnostic(assignment)
    return assignment


def _log_size_diagnostic(assignment: ClusterAssignment) -> None:
    lo, hi = settings.CLUSTER_SIZE_RANGE
    sizes = assignment.sizes()
    outside = np.flatnonzero((sizes < lo) | (sizes > hi))
    if outside.size:
        log_event(
            LOGGER, "cluster_sizes_outside_range", level=logging.WARNING,
            clusters=outside.tolist(), sizes=sizes[outside].tolist(), expected=[lo, hi],
        )


def cluster_features(lambda_mle: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Triplets (λ, lat, lon) à partir des λ par site et des coordonnées (lon, lat)."""
    coords = np.asarray(coords, dtype=float)
    return np.column_stack([np.asarray(lambda_mle, dtype=float), coords[:, 1], coords[:, 0]])


def stratified_subsample(
    assignment: ClusterAssignment, fraction: float, seed: int | None = None
) -> np.ndarray:
    """Tirage simple sans remise de round(f·taille) sites par cluster (minimum 1), ids triés."""
    if not 0 < fraction <= 1:
        raise DataError("La fraction doit être dans ]0, 1].")
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    chosen = []
    for c in range(assignment.k_clusters):
        members = assignment.members(c)
        size = max(1, int(np.floor(fraction * len(members) + 0.5)))
        chosen.append(rng.choice(members, size=min(size, len(members)), replace=False))
    return np.sort(np.concatenate(chosen))
