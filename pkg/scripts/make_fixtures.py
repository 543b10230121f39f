"""
➡️ But : Générer un petit espace de travail synthétique pour essayer toutes les sous-commandes.

python -m scripts.make_fixtures demo/        (spécification : scripts/fixtures.yaml)

Écrit les champs historiques/futurs (O, S), les sites fins, les profils verticaux, les
courbes de puissance, les parcs et une config JSON par sous-commande.
"""

import argparse
import json
import logging
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd
import yaml

from app.core.logs import configure_logging, log_event
from app.features.fields.schemas import Calendar, SpatioTemporalField, make_sites
from app.features.fields.services import split_by_date
from app.storage.energy_inputs import CURVE_COLUMNS, FARM_COLUMNS
from app.storage.fields import FieldRepository

LOGGER = logging.getLogger("make_fixtures")

DEFAULT_SPEC = Path(__file__).with_name("fixtures.yaml")


# -----------------------------
# YAML loader
# -----------------------------
def load_spec(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Spécification de fixtures introuvable: {p}")
    data = yaml.safe_load(p.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("Le YAML de fixtures doit contenir un objet racine (mapping).")
    return data


# -----------------------------
# Générateurs
# -----------------------------
def grid(n_side: int) -> np.ndarray:
    ticks = (np.arange(n_side) + 0.5) / n_side
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def seasonal_field(
    rng: np.random.Generator, coords: np.ndarray, calendar: Calendar, side: Dict[str, Any]
) -> SpatioTemporalField:
    """Saison + gradient zonal + AR(1) d'innovations gamma centrées, valeurs ≥ 0."""
    n, T = len(coords), calendar.length_days
    phase = 2 * np.pi * calendar.day_of_year / calendar.period_of_year
    years = (calendar.year_of_day - calendar.year_of_day[0]).astype(float)
    shift = side.get("future_shift", 0.0) * np.clip(years - side["history_years"] + 1, 0, None)
    mu = side["level"] + side["amplitude"] * np.sin(phase)[None, :] + 0.5 * coords[:, :1] + shift
    eps = side["scale"] * (rng.gamma(2.0, 1.0, size=(n, T)) - 2.0) / np.sqrt(2.0)
    x = np.zeros_like(eps)
    for t in range(T):
        x[:, t] = eps[:, t] + (side["phi"] * x[:, t - 1] if t else 0.0)
    return SpatioTemporalField(
        sites=make_sites(coords), calendar=calendar, values=np.maximum(mu + x, 0.0)
    )


def vertical_profiles(rng: np.random.Generator, n_sites: int, spec: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    start = date(2010, 1, 1)
    for site in range(n_sites):
        for d in range(spec["n_days"]):
            base = rng.uniform(3.0, 9.0)
            day = (start + timedelta(days=d)).isoformat()
            for h in spec["heights"]:
                speed = base * (h / 10.0) ** spec["alpha"] * np.exp(spec["noise"] * rng.normal())
                rows.append((site, day, float(h), speed))
    return pd.DataFrame(rows, columns=["site_id", "date", "height_m", "speed_mps"])


# -----------------------------
# Écriture
# -----------------------------
def _dump(path: Path, data: Dict[str, Any]) -> None:
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")


def make_fixtures(out_dir: Path, spec: Dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec["seed"])
    repo = FieldRepository(out_dir)

    cal = spec["calendar"]
    start = date.fromisoformat(cal["start"])
    cut = date(start.year + cal["history_years"], start.month, start.day)
    end = date(cut.year + cal["future_years"], start.month, start.day)
    calendar = Calendar(start_date=start, length_days=(end - start).days)
    coords = grid(spec["grid"]["n_side"])

    for name in ("obs", "sim"):
        side = {**spec[name], "history_years": cal["history_years"]}
        hist, future = split_by_date(seasonal_field(rng, coords, calendar, side), cut)
        repo.save(hist, f"{name}_hist.csv")
        repo.save(future, f"{name}_future.bin")

    repo.save_sites(make_sites(grid(spec["grid"]["fine_n_side"])), "fine_sites.csv")
    vertical_profiles(rng, len(coords), spec["profiles"]).to_csv(
        out_dir / "profiles.csv", index=False, float_format="%.6g"
    )
    pd.DataFrame(spec["turbines"]).reindex(columns=CURVE_COLUMNS + ["points"]).to_csv(
        out_dir / "curves.csv", index=False
    )
    pd.DataFrame(spec["farms"], columns=FARM_COLUMNS).to_csv(out_dir / "farms.csv", index=False)

    seed = spec["seed"]
    _dump(out_dir / "fit.json", {
        "seed": seed, "obs_hist": "obs_hist.csv", "sim_hist": "sim_hist.csv",
        "output_dir": "fit", "clusters": {"k": 4, "restarts": 5},
    })
    _dump(out_dir / "adjust.json", {
        "seed": seed, "obs_hist": "obs_hist.csv", "sim_hist": "sim_hist.csv",
        "sim_future": "sim_future.bin", "obs_future": "obs_future.bin", "method": "TC",
        "clusters": "fit/clusters.csv", "covariance": "matern", "output": "adjusted.csv",
        "plan_output": "plan_tc.json",
    })
    _dump(out_dir / "kl.json", {
        "seed": seed, "obs": "obs_future.bin", "sim": "adjusted.csv", "both_directions": True,
    })
    _dump(out_dir / "energy.json", {
        "seed": seed, "surface_hist": "obs_hist.csv", "surface_future": "adjusted.csv",
        "power_curves": "curves.csv", "farms": "farms.csv", "profiles": "profiles.csv",
        "heights": spec["profiles"]["heights"], "n_draws": 50,
    })
    _dump(out_dir / "validate.json", {
        "seed": seed, "n_sims": 10, "methods": ["M", "MV", "MC", "T1"],
        "covariance": "matern", "lambda_strategy": "mle",
    })
    _dump(out_dir / "experiment.json", {
        "seed": seed, "output": "experiment.csv", "methods": ["M", "MV", "MC", "T1", "TC"],
        "covariance": "matern", "lambda_strategy": "mle",
        "experiment": {
            "obs": "obs_hist.csv", "sim": "sim_hist.csv", "clusters": "fit/clusters.csv",
            "split_date": date(start.year + cal["history_years"] - 2, start.month,
                               start.day).isoformat(),
            "subsample": {"n_subsamples": 20, "stratified_fraction": 0.5, "seed": seed},
        },
    })
    log_event(LOGGER, "fixtures_written", out_dir=str(out_dir), n_sites=len(coords),
              n_days=calendar.length_days, cut=cut.isoformat())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--spec", type=Path, default=DEFAULT_SPEC)
    args = parser.parse_args()
    configure_logging()
    make_fixtures(args.out_dir, load_spec(args.spec))


if __name__ == "__main__":
    main()
