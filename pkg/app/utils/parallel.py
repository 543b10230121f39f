"""
➡️ But : map parallèle déterministe (ordre des résultats = ordre des entrées).

Le résultat ne dépend jamais du nombre de threads : chaque tâche reçoit ses propres
entrées (et sa propre graine si besoin), le pool ne fait que répartir.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from app.core.config import settings

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None or threads <= 0:
        return settings.DEFAULT_THREADS
    return threads


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Applique fn à chaque item, en parallèle si threads > 1, résultats dans l'ordre."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
