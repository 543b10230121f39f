"""
➡️ But : Lire / écrire les champs site × jour dans les deux formats d'échange.

- CSV : `site_id,lon,lat,date,speed_mps`, une ligne par (site, jour), rectangle complet.
- Binaire compact : `STG1`, u32 n_sites, u32 n_days, date ISO préfixée par sa longueur (u32),
  table des sites (u32 id, f64 lon, f64 lat), puis les valeurs f64 ligne par site.
  Tout en little-endian.
- CSV de sites seuls : `site_id,lon,lat`.

🔹 Les erreurs (DataError) portent le chemin et, pour le CSV, la ligne fautive.
"""

import struct
from datetime import date
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd

from app.core.errors import DataError
from app.features.fields.schemas import (
    Calendar,
    ResidualField,
    Site,
    SpatioTemporalField,
    make_sites,
)

FieldFormat = Literal["csv", "packed-binary"]

CSV_COLUMNS = ["site_id", "lon", "lat", "date", "speed_mps"]
SITES_COLUMNS = ["site_id", "lon", "lat"]
MAGIC = b"STG1"
_SITE_DTYPE = np.dtype([("id", "<u4"), ("lon", "<f8"), ("lat", "<f8")])


def detect_format(path: Path) -> FieldFormat:
    return "csv" if path.suffix.lower() == ".csv" else "packed-binary"


def _csv_line(df_index: int) -> int:
    # +1 pour l'en-tête, +1 car les lignes commencent à 1
    return int(df_index) + 2


# -----------------------------
# Repository
# -----------------------------
class FieldRepository:
    """Accès fichiers aux champs (aucune règle métier hormis les invariants de format)."""

    def __init__(self, root: str | Path = "."):
        self.root = Path(root)

    def _resolve(self, path: str | Path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    # ---------- READ ----------

    def load(
        self,
        path: str | Path,
        format: Optional[FieldFormat] = None,
        *,
        allow_negative: bool = False,
    ) -> SpatioTemporalField:
        p = self._resolve(path)
        if not p.exists():
            raise DataError(f"Fichier de champ introuvable: {p}")
        fmt = format or detect_format(p)
        if fmt == "csv":
            return self._load_csv(p, allow_negative=allow_negative)
        return self._load_packed(p, allow_negative=allow_negative)

    def _load_csv(self, path: Path, *, allow_negative: bool) -> SpatioTemporalField:
        with path.open("r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header != CSV_COLUMNS:
            raise DataError(f"{path}:1: malformed header {header!r}, attendu {CSV_COLUMNS!r}")

        try:
            df = pd.read_csv(path, dtype={"date": str}, float_precision="round_trip")
        except (ValueError, pd.errors.ParserError) as exc:
            raise DataError(f"{path}: CSV illisible: {exc}") from exc

        missing = df.isna().any(axis=1).to_numpy()
        if missing.any():
            raise DataError(f"{path}:{_csv_line(np.argmax(missing))}: valeur manquante")

        if not pd.api.types.is_integer_dtype(df["site_id"]):
            raise DataError(f"{path}: site_id doit être entier")

        speeds = df["speed_mps"].to_numpy(dtype=float)
        bad = ~np.isfinite(speeds)
        if bad.any():
            raise DataError(f"{path}:{_csv_line(np.argmax(bad))}: non-finite wind speed")
        if not allow_negative and np.any(speeds < 0):
            raise DataError(f"{path}:{_csv_line(np.argmax(speeds < 0))}: negative wind speed")

        try:
            df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
        except ValueError as exc:
            raise DataError(f"{path}: date invalide: {exc}") from exc

        dup = df.duplicated(subset=["site_id", "date"]).to_numpy()
        if dup.any():
            row = int(np.argmax(dup))
            raise DataError(
                f"{path}:{_csv_line(row)}: duplicate site id {int(df['site_id'].iloc[row])} "
                f"pour la date {df['date'].iloc[row].date()}"
            )

        coords = df.groupby("site_id")[["lon", "lat"]].nunique()
        if (coords > 1).any(axis=None):
            sid = int(coords.index[(coords > 1).any(axis=1)][0])
            raise DataError(f"{path}: coordonnées incohérentes pour le site {sid}")

        ids = np.sort(df["site_id"].unique())
        if not np.array_equal(ids, np.arange(len(ids))):
            raise DataError(f"{path}: identifiants de sites non contigus depuis 0")

        days = np.sort(df["date"].unique())
        n_sites, n_days = len(ids), len(days)
        if len(df) != n_sites * n_days:
            raise DataError(
                f"{path}: row/column count mismatch ({len(df)} lignes pour "
                f"{n_sites} sites × {n_days} jours)"
            )
        if n_days > 1 and np.any(np.diff(days) != np.timedelta64(1, "D")):
            raise DataError(f"{path}: les jours ne sont pas consécutifs")

        df = df.sort_values(["site_id", "date"], kind="stable")
        values = df["speed_mps"].to_numpy(dtype=float).reshape(n_sites, n_days)
        first = df.drop_duplicates("site_id")
        sites = tuple(
            Site(id=int(r.site_id), lon=float(r.lon), lat=float(r.lat))
            for r in first.itertuples(index=False)
        )
        calendar = Calendar(start_date=pd.Timestamp(days[0]).date(), length_days=n_days)
        cls = ResidualField if allow_negative else SpatioTemporalField
        return cls(sites=sites, calendar=calendar, values=values)

    def _load_packed(self, path: Path, *, allow_negative: bool) -> SpatioTemporalField:
        raw = path.read_bytes()
        if raw[:4] != MAGIC:
            raise DataError(f"{path}: malformed header (magic {raw[:4]!r})")
        try:
            n_sites, n_days, date_len = struct.unpack_from("<III", raw, 4)
            offset = 16
            start = date.fromisoformat(raw[offset : offset + date_len].decode("ascii"))
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise DataError(f"{path}: malformed header: {exc}") from exc
        offset += date_len

        table_bytes = n_sites * _SITE_DTYPE.itemsize
        expected = offset + table_bytes + 8 * n_sites * n_days
        if len(raw) != expected:
            raise DataError(
                f"{path}: row/column count mismatch ({len(raw)} octets, {expected} attendus)"
            )
        table = np.frombuffer(raw, dtype=_SITE_DTYPE, count=n_sites, offset=offset)
        offset += table_bytes
        values = np.frombuffer(raw, dtype="<f8", count=n_sites * n_days, offset=offset)

        ids = table["id"].astype(np.int64)
        if len(np.unique(ids)) != n_sites:
            raise DataError(f"{path}: duplicate site id")
        order = np.argsort(ids, kind="stable")
        if not np.array_equal(ids[order], np.arange(n_sites)):
            raise DataError(f"{path}: identifiants de sites non contigus depuis 0")

        values = values.reshape(n_sites, n_days)[order].astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise DataError(f"{path}: non-finite wind speed")
        if not allow_negative and np.any(values < 0):
            raise DataError(f"{path}: negative wind speed")

        sites = tuple(
            Site(id=int(ids[i]), lon=float(table["lon"][i]), lat=float(table["lat"][i]))
            for i in order
        )
        cls = ResidualField if allow_negative else SpatioTemporalField
        return cls(sites=sites, calendar=Calendar(start, n_days), values=values)

    # ---------- WRITE ----------

    def save(
        self, field: SpatioTemporalField, path: str | Path, format: Optional[FieldFormat] = None
    ) -> Path:
        p = self._resolve(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        fmt = format or detect_format(p)
        if fmt == "csv":
            self._save_csv(field, p)
        else:
            self._save_packed(field, p)
        return p

    def _save_csv(self, field: SpatioTemporalField, path: Path) -> None:
        n, t = field.values.shape
        coords = field.coords
        df = pd.DataFrame(
            {
                "site_id": np.repeat(np.arange(n), t),
                "lon": np.repeat(coords[:, 0], t),
                "lat": np.repeat(coords[:, 1], t),
                "date": np.tile(np.datetime_as_string(field.calendar.dates, unit="D"), n),
                "speed_mps": field.values.reshape(-1),
            },
            columns=CSV_COLUMNS,
        )
        df.to_csv(path, index=False, float_format="%.17g")

    def _save_packed(self, field: SpatioTemporalField, path: Path) -> None:
        iso = field.calendar.start_date.isoformat().encode("ascii")
        table = np.empty(field.n_sites, dtype=_SITE_DTYPE)
        table["id"] = [s.id for s in field.sites]
        table["lon"] = field.coords[:, 0]
        table["lat"] = field.coords[:, 1]
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<III", field.n_sites, field.n_days, len(iso)))
            fh.write(iso)
            fh.write(table.tobytes())
            fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())

    # ---------- SITES ----------

    def load_sites(self, path: str | Path) -> tuple[Site, ...]:
        p = self._resolve(path)
        if not p.exists():
            raise DataError(f"Fichier de sites introuvable: {p}")
        df = pd.read_csv(p, float_precision="round_trip")
        if list(df.columns) != SITES_COLUMNS:
            raise DataError(f"{p}:1: malformed header {list(df.columns)!r}")
        if df["site_id"].duplicated().any():
            row = int(np.argmax(df["site_id"].duplicated().to_numpy()))
            raise DataError(f"{p}:{_csv_line(row)}: duplicate site id")
        df = df.sort_values("site_id")
        if not np.array_equal(df["site_id"].to_numpy(), np.arange(len(df))):
            raise DataError(f"{p}: identifiants de sites non contigus depuis 0")
        return make_sites(df[["lon", "lat"]].to_numpy(dtype=float))

    def save_sites(self, sites: tuple[Site, ...], path: str | Path) -> Path:
        p = self._resolve(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(
            {"site_id": [s.id for s in sites], "lon": [s.lon for s in sites],
             "lat": [s.lat for s in sites]},
            columns=SITES_COLUMNS,
        )
        df.to_csv(p, index=False, float_format="%.17g")
        return p


# Raccourcis fonctionnels
def load_field(
    path: str | Path, format: Optional[FieldFormat] = None, *, allow_negative: bool = False
) -> SpatioTemporalField:
    return FieldRepository().load(path, format, allow_negative=allow_negative)


def save_field(
    field: SpatioTemporalField, path: str | Path, format: Optional[FieldFormat] = None
) -> Path:
    return FieldRepository().save(field, path, format)
