"""
➡️ But : distances entre sites.

- "euclidean" : coordonnées brutes (carré unité des simulations).
- "great-circle" : lon/lat en degrés → km (rayon terrestre moyen).
"""

from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics.pairwise import haversine_distances

EARTH_RADIUS_KM = 6371.0088

Metric = Literal["euclidean", "great-circle"]


def pairwise_distances(a: np.ndarray, b: np.ndarray | None = None, metric: Metric = "euclidean"):
    """Matrice de distances entre deux ensembles de points (n, 2) en (lon, lat) ou (x, y)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    if metric == "euclidean":
        return cdist(a, b)
    if metric == "great-circle":
        # haversine_distances attend (lat, lon) en radians
        ra = np.radians(a[:, ::-1])
        rb = np.radians(b[:, ::-1])
        return haversine_distances(ra, rb) * EARTH_RADIUS_KM
    raise ValueError(f"Métrique inconnue: {metric}")
