"""
Modèle de données commun : sites, calendrier (années bissextiles) et champs site × jour.

Stockage site-major : values[i, :] est la série complète du site i.
Les champs sont immuables après construction (tableaux en lecture seule).
"""

from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from typing import ClassVar, Sequence

import numpy as np

from app.core.errors import DataError


@dataclass(frozen=True)
class Site:
    id: int
    lon: float
    lat: float

    def __post_init__(self):
        if not -180.0 <= self.lon < 360.0:
            raise DataError(f"Longitude hors bornes pour le site {self.id}: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise DataError(f"Latitude hors bornes pour le site {self.id}: {self.lat}")


def is_leap(years: np.ndarray) -> np.ndarray:
    """Règle grégorienne 4/100/400, vectorisée."""
    years = np.asarray(years)
    return (years % 4 == 0) & ((years % 100 != 0) | (years % 400 == 0))


@dataclass(frozen=True, eq=False)
class Calendar:
    """Suite de jours consécutifs à partir de start_date (grégorien proleptique)."""

    start_date: date
    length_days: int

    def __post_init__(self):
        if self.length_days < 1:
            raise DataError("Un calendrier doit contenir au moins un jour.")

    @cached_property
    def dates(self) -> np.ndarray:
        return np.datetime64(self.start_date, "D") + np.arange(self.length_days)

    @cached_property
    def year_of_day(self) -> np.ndarray:
        return self.dates.astype("datetime64[Y]").astype(np.int64) + 1970

    @cached_property
    def period_of_year(self) -> np.ndarray:
        """δ(t) : 366 pour les jours d'une année bissextile, 365 sinon."""
        return np.where(is_leap(self.year_of_day), 366, 365)

    @cached_property
    def day_of_year(self) -> np.ndarray:
        """Indice 0-based du jour dans son année."""
        return (self.dates - self.dates.astype("datetime64[Y]")).astype(np.int64)

    @property
    def end_date(self) -> date:
        return self.dates[-1].item()

    def index_of(self, day: date) -> int:
        """Position de `day` (peut être < 0 ou ≥ length_days si hors calendrier)."""
        return int((np.datetime64(day, "D") - np.datetime64(self.start_date, "D")).astype(int))

    def shifted(self, offset_days: int, length_days: int) -> "Calendar":
        start = (np.datetime64(self.start_date, "D") + offset_days).item()
        return Calendar(start_date=start, length_days=length_days)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Calendar):
            return NotImplemented
        return self.start_date == other.start_date and self.length_days == other.length_days

    def __hash__(self) -> int:
        return hash((self.start_date, self.length_days))


@dataclass(frozen=True, eq=False)
class SpatioTemporalField:
    """Vitesses de vent (m/s), matrice [n_sites × n_days] sans valeur manquante."""

    sites: tuple[Site, ...]
    calendar: Calendar
    values: np.ndarray = field(repr=False)

    # Les champs bruts (non transformés, non centrés) sont positifs
    REQUIRE_NONNEGATIVE: ClassVar[bool] = True

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2:
            raise DataError("Les valeurs d'un champ doivent former une matrice 2D.")
        if values.shape != (len(self.sites), self.calendar.length_days):
            raise DataError(
                f"Forme {values.shape} incompatible avec {len(self.sites)} sites × "
                f"{self.calendar.length_days} jours."
            )
        ids = [s.id for s in self.sites]
        if ids != list(range(len(ids))):
            raise DataError("Les identifiants de sites doivent être contigus depuis 0 et triés.")
        if not np.all(np.isfinite(values)):
            raise DataError("Valeurs non finies dans le champ.")
        if self.REQUIRE_NONNEGATIVE and np.any(values < 0):
            raise DataError("negative wind speed")
        values.setflags(write=False)
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "values", values)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_days(self) -> int:
        return self.calendar.length_days

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_sites, 2) en (lon, lat)."""
        return np.array([[s.lon, s.lat] for s in self.sites], dtype=float).reshape(-1, 2)

    def with_values(self, values: np.ndarray) -> "SpatioTemporalField":
        return type(self)(sites=self.sites, calendar=self.calendar, values=values)

    def as_residuals(self) -> "ResidualField":
        return ResidualField(sites=self.sites, calendar=self.calendar, values=self.values)

    def as_field(self) -> "SpatioTemporalField":
        return SpatioTemporalField(sites=self.sites, calendar=self.calendar, values=self.values)

    def same_layout(self, other: "SpatioTemporalField") -> bool:
        return self.n_sites == other.n_sites and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True, eq=False)
class ResidualField(SpatioTemporalField):
    """ε(s, t) : mêmes dimensions qu'un champ, valeurs de signe quelconque."""

    REQUIRE_NONNEGATIVE: ClassVar[bool] = False


def make_sites(coords: Sequence[Sequence[float]] | np.ndarray) -> tuple[Site, ...]:
    """Sites d'identifiants 0..n-1 à partir de coordonnées (lon, lat)."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    return tuple(Site(id=i, lon=float(x), lat=float(y)) for i, (x, y) in enumerate(coords))
