"""
Opérations sur les champs : découpe temporelle, concaténation, sous-échantillonnage de sites.
"""

from datetime import date
from typing import Iterable, Tuple

import numpy as np

from app.core.errors import DataError
from app.features.fields.schemas import Calendar, SpatioTemporalField, make_sites


def split_by_date(
    field: SpatioTemporalField, cut: date
) -> Tuple[SpatioTemporalField, SpatioTemporalField]:
    """Gauche = jours < cut, droite = jours ≥ cut."""
    idx = field.calendar.index_of(cut)
    if idx <= 0 or idx >= field.n_days:
        raise DataError(
            f"Date de coupure {cut} hors de ]{field.calendar.start_date}, "
            f"{field.calendar.end_date}]."
        )
    left_cal = Calendar(start_date=field.calendar.start_date, length_days=idx)
    right_cal = Calendar(start_date=cut, length_days=field.n_days - idx)
    cls = type(field)
    return (
        cls(sites=field.sites, calendar=left_cal, values=field.values[:, :idx]),
        cls(sites=field.sites, calendar=right_cal, values=field.values[:, idx:]),
    )


def concatenate(left: SpatioTemporalField, right: SpatioTemporalField) -> SpatioTemporalField:
    """Inverse de split_by_date : mêmes sites, calendriers contigus."""
    if not left.same_layout(right):
        raise DataError("Concaténation impossible : les sites diffèrent.")
    if right.calendar.index_of(left.calendar.start_date) != -left.n_days:
        raise DataError("Concaténation impossible : calendriers non contigus.")
    calendar = Calendar(start_date=left.calendar.start_date, length_days=left.n_days + right.n_days)
    values = np.concatenate([left.values, right.values], axis=1)
    return type(left)(sites=left.sites, calendar=calendar, values=values)


def subsample_sites(field: SpatioTemporalField, ids: Iterable[int]) -> SpatioTemporalField:
    """Restreint aux sites `ids` (triés) et réindexe de 0 à k-1 ; calendrier inchangé."""
    wanted = sorted(set(int(i) for i in ids))
    if not wanted:
        raise DataError("Sous-échantillon de sites vide.")
    unknown = [i for i in wanted if i < 0 or i >= field.n_sites]
    if unknown:
        raise DataError(f"Identifiants de sites inconnus: {unknown[:10]}")
    rows = np.asarray(wanted, dtype=np.int64)
    return type(field)(
        sites=make_sites(field.coords[rows]),
        calendar=field.calendar,
        values=field.values[rows],
    )
