from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from app.features.fields.schemas import Calendar


@dataclass(frozen=True, eq=False)
class ClimatologyFit:
    """
    Moyenne par site : intercept + ω·yr(t) + Σ_k β_k sin(2πk·t/δ) + β'_k cos(2πk·t/δ).

    yr(t) est compté depuis reference_year (première année d'entraînement).
    """

    K: int
    with_trend: bool
    reference_year: int
    last_year: int
    intercept: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)  # (n_sites, K)
    beta_prime: np.ndarray = field(repr=False)  # (n_sites, K)
    omega_se: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.intercept)
        for name in ("beta", "beta_prime"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(n, self.K)
            object.__setattr__(self, name, arr)
        for name in ("intercept", "omega", "omega_se"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.K < 0:
            raise ValueError("K doit être ≥ 0")

    @property
    def n_sites(self) -> int:
        return len(self.intercept)

    def year_regressor(self, calendar: Calendar, extrapolate_trend: bool = False) -> np.ndarray:
        """yr(t) − reference_year ; figé dans [première, dernière] année sauf extrapolation."""
        years = calendar.year_of_day
        if not extrapolate_trend:
            years = np.clip(years, self.reference_year, self.last_year)
        return (years - self.reference_year).astype(float)

    def evaluate(self, calendar: Calendar, extrapolate_trend: bool = False) -> np.ndarray:
        """μ(s, t) sur un calendrier quelconque, matrice (n_sites, n_days)."""
        mu = np.repeat(self.intercept[:, None], calendar.length_days, axis=1)
        if self.with_trend:
            mu = mu + np.outer(self.omega, self.year_regressor(calendar, extrapolate_trend))
        if self.K:
            phase = 2.0 * np.pi * calendar.day_of_year / calendar.period_of_year
            k = np.arange(1, self.K + 1)[:, None]
            mu = mu + self.beta @ np.sin(k * phase) + self.beta_prime @ np.cos(k * phase)
        return mu

    def subset(self, rows) -> "ClimatologyFit":
        rows = np.asarray(rows, dtype=np.int64)
        return ClimatologyFit(
            K=self.K,
            with_trend=self.with_trend,
            reference_year=self.reference_year,
            last_year=self.last_year,
            intercept=self.intercept[rows],
            omega=self.omega[rows],
            beta=self.beta[rows],
            beta_prime=self.beta_prime[rows],
            omega_se=self.omega_se[rows],
        )

    def harmonic_amplitude(self) -> np.ndarray:
        """Amplitude totale des harmoniques par site (m/s)."""
        if not self.K:
            return np.zeros(self.n_sites)
        return np.sqrt(self.beta**2 + self.beta_prime**2).sum(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "with_trend": self.with_trend,
            "reference_year": self.reference_year,
            "last_year": self.last_year,
            "sites": {
                str(i): {
                    "intercept": float(self.intercept[i]),
                    "omega": float(self.omega[i]),
                    "omega_se": float(self.omega_se[i]),
                    "beta": self.beta[i].tolist(),
                    "beta_prime": self.beta_prime[i].tolist(),
                }
                for i in range(self.n_sites)
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClimatologyFit":
        sites = [data["sites"][str(i)] for i in range(len(data["sites"]))]
        K = int(data["K"])
        return cls(
            K=K,
            with_trend=bool(data["with_trend"]),
            reference_year=int(data["reference_year"]),
            last_year=int(data["last_year"]),
            intercept=np.array([s["intercept"] for s in sites]),
            omega=np.array([s["omega"] for s in sites]),
            omega_se=np.array([s["omega_se"] for s in sites]),
            beta=np.array([s["beta"] for s in sites]).reshape(len(sites), K),
            beta_prime=np.array([s["beta_prime"] for s in sites]).reshape(len(sites), K),
        )


@dataclass(frozen=True, eq=False)
class ARFit:
    """AR(P) gaussien par site sur les résidus de la moyenne."""

    P: int
    phi: np.ndarray = field(repr=False)  # (n_sites, P)
    innovation_sd: np.ndarray = field(repr=False)

    def __post_init__(self):
        sd = np.asarray(self.innovation_sd, dtype=float)
        object.__setattr__(self, "innovation_sd", sd)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(len(sd), self.P))

    @property
    def n_sites(self) -> int:
        return len(self.innovation_sd)

    def subset(self, rows) -> "ARFit":
        rows = np.asarray(rows, dtype=np.int64)
        return ARFit(P=self.P, phi=self.phi[rows], innovation_sd=self.innovation_sd[rows])

    def companion(self, site: int) -> np.ndarray:
        comp = np.zeros((self.P, self.P))
        comp[0, :] = self.phi[site]
        comp[1:, :-1] = np.eye(self.P - 1)
        return comp

    def to_dict(self) -> Dict[str, Any]:
        return {
            "P": self.P,
            "sites": {
                str(i): {"phi": self.phi[i].tolist(), "innovation_sd": float(self.innovation_sd[i])}
                for i in range(self.n_sites)
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ARFit":
        sites = [data["sites"][str(i)] for i in range(len(data["sites"]))]
        P = int(data["P"])
        return cls(
            P=P,
            phi=np.array([s["phi"] for s in sites], dtype=float).reshape(len(sites), P),
            innovation_sd=np.array([s["innovation_sd"] for s in sites]),
        )
