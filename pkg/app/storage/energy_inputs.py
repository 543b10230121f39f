"""
➡️ But : Lire les tables d'entrée du module énergie et écrire les tables d'écarts de revenu.

- Courbes : `turbine,hub_height_m,rotor_d_m,rated_kw,cut_in,rated_speed,cut_out[,points]`
  où `points` vaut `v:p;v:p;...` (optionnel).
- Parcs : `site_id,turbine,count,tariff_per_kwh`.
- Profils verticaux : `site_id,date,height_m,speed_mps`.
"""

from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd
from pydantic import ValidationError

from app.core.errors import DataError
from app.features.energy.schemas import FarmSite, PowerCurve

CURVE_COLUMNS = ["turbine", "hub_height_m", "rotor_d_m", "rated_kw", "cut_in", "rated_speed",
                 "cut_out"]
FARM_COLUMNS = ["site_id", "turbine", "count", "tariff_per_kwh"]
PROFILE_COLUMNS = ["site_id", "date", "height_m", "speed_mps"]


def _read(path: str | Path, expected: List[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise DataError(f"Fichier introuvable: {p}")
    df = pd.read_csv(p, float_precision="round_trip", dtype={"turbine": str, "points": str})
    columns = list(df.columns)
    extra = columns[len(expected):]
    if columns[: len(expected)] != expected or any(c not in optional for c in extra):
        raise DataError(f"{p}:1: malformed header {columns!r}")
    if df[expected].isna().any().any():
        row = int(df[expected].isna().any(axis=1).to_numpy().argmax())
        raise DataError(f"{p}:{row + 2}: valeur manquante")
    return df


def _parse_points(raw: str, where: str) -> List[tuple]:
    try:
        pairs = [item.split(":") for item in raw.split(";") if item.strip()]
        return [(float(v), float(pw)) for v, pw in pairs]
    except ValueError as exc:
        raise DataError(f"{where}: points de courbe illisibles '{raw}'") from exc


def load_power_curves(path: str | Path) -> Dict[str, PowerCurve]:
    df = _read(path, CURVE_COLUMNS, optional=["points"])
    curves: Dict[str, PowerCurve] = {}
    for i, row in df.iterrows():
        where = f"{path}:{int(i) + 2}"
        raw = row.get("points")
        points = _parse_points(raw, where) if isinstance(raw, str) and raw.strip() else None
        try:
            curve = PowerCurve(
                turbine_name=row["turbine"],
                hub_height=row["hub_height_m"],
                rotor_diameter=row["rotor_d_m"],
                rated_power=row["rated_kw"],
                cut_in=row["cut_in"],
                rated_speed=row["rated_speed"],
                cut_out=row["cut_out"],
                points=points,
            )
        except ValidationError as exc:
            raise DataError(f"{where}: courbe invalide : {exc.errors()[0]['msg']}") from exc
        if curve.turbine_name in curves:
            raise DataError(f"{where}: turbine dupliquée '{curve.turbine_name}'")
        curves[curve.turbine_name] = curve
    return curves


def load_farms(path: str | Path) -> List[FarmSite]:
    df = _read(path, FARM_COLUMNS)
    farms = []
    for i, row in df.iterrows():
        try:
            farms.append(FarmSite(
                site_id=int(row["site_id"]),
                turbine=row["turbine"],
                turbine_count=int(row["count"]),
                tariff_per_kwh=float(row["tariff_per_kwh"]),
            ))
        except ValidationError as exc:
            raise DataError(
                f"{path}:{int(i) + 2}: parc invalide : {exc.errors()[0]['msg']}"
            ) from exc
    return farms


def load_profiles(path: str | Path) -> pd.DataFrame:
    df = _read(path, PROFILE_COLUMNS)
    df["site_id"] = df["site_id"].astype(int)
    return df


def save_delta_table(table: pd.DataFrame, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(p, index=False, float_format="%.10g")
    return p
