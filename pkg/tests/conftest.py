from datetime import date

import numpy as np
import pytest

from app.features.fields.schemas import (
    Calendar,
    ResidualField,
    SpatioTemporalField,
    make_sites,
)


def grid_coords(n_side: int, side: float = 1.0) -> np.ndarray:
    """Centres d'une grille n_side × n_side sur [0, side]²."""
    ticks = (np.arange(n_side) + 0.5) * side / n_side
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def make_field(values, coords=None, start=date(2000, 1, 1), residual=False):
    values = np.asarray(values, dtype=float)
    if coords is None:
        coords = np.column_stack([np.arange(len(values), dtype=float), np.zeros(len(values))])
    cls = ResidualField if residual else SpatioTemporalField
    return cls(
        sites=make_sites(coords),
        calendar=Calendar(start_date=start, length_days=values.shape[1]),
        values=values,
    )


def seasonal_wind(
    rng: np.random.Generator,
    coords: np.ndarray,
    n_days: int,
    start=date(2000, 1, 1),
    level: float = 6.0,
    amplitude: float = 1.5,
    phi: float = 0.4,
    scale: float = 0.8,
    skewed: bool = True,
) -> SpatioTemporalField:
    """Moyenne saisonnière + AR(1) d'innovations (gamma centrée si skewed), valeurs ≥ 0."""
    n = len(coords)
    calendar = Calendar(start_date=start, length_days=n_days)
    phase = 2 * np.pi * calendar.day_of_year / calendar.period_of_year
    mu = level + amplitude * np.sin(phase)[None, :] + 0.2 * coords[:, :1]
    if skewed:
        eps = scale * (rng.gamma(2.0, 1.0, size=(n, n_days)) - 2.0) / np.sqrt(2.0)
    else:
        eps = scale * rng.standard_normal((n, n_days))
    x = np.zeros_like(eps)
    for t in range(n_days):
        x[:, t] = eps[:, t] + (phi * x[:, t - 1] if t else 0.0)
    values = np.maximum(mu + x, 0.0)
    return SpatioTemporalField(sites=make_sites(coords), calendar=calendar, values=values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def small_coords():
    return grid_coords(3)


@pytest.fixture
def wind_pair(rng, small_coords):
    """(obs, sim) de 9 sites sur 3 ans ; sim est biaisée en moyenne et en variance."""
    obs = seasonal_wind(rng, small_coords, 3 * 365, level=6.0, scale=0.8)
    sim = seasonal_wind(rng, small_coords, 3 * 365, level=7.0, scale=1.2)
    return obs, sim
