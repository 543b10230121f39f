"""
➡️ But : Centraliser ce dont les sous-commandes ont besoin.

load_run_config() : lit le fichier de config (JSON via yaml.safe_load), applique les
surcharges de la ligne de commande puis valide avec le modèle pydantic de la commande.

get_*_repository() : repositories de fichiers, enracinés dans le dossier de la config.

run_metadata() : graine, schema_version et version du paquet, recopiés dans chaque sortie.

🔹 Avantages :

Commandes plus propres (pas de code dupliqué).

Un seul endroit où les surcharges CLI sont appliquées.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

import yaml

from app import __version__
from app.cli.schemas import RunConfig
from app.core.errors import ConfigError
from app.storage.clusters import ClusterRepository
from app.storage.fields import FieldRepository
from app.storage.fits import ARRepository, ClimatologyRepository, TransformRepository
from app.storage.plans import PlanRepository

ConfigT = TypeVar("ConfigT", bound=RunConfig)


@dataclass(frozen=True)
class RunContext:
    """Config validée + dossier de référence pour les chemins relatifs."""

    config: RunConfig
    base_dir: Path

    def path(self, value: str | Path) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def threads(self) -> Optional[int]:
        return self.config.threads or None


def read_config_file(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"Fichier de config introuvable: {p}")
    try:
        with p.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config illisible {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p} doit contenir un objet à la racine.")
    return data


def load_run_config(
    path: str | Path, model: Type[ConfigT], overrides: Optional[Dict[str, Any]] = None
) -> RunContext:
    """Surcharges appliquées après lecture, avant validation (ValidationError → code 2)."""
    data = read_config_file(path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in model.model_fields:
            raise ConfigError(f"L'option --{key} ne s'applique pas à cette commande.")
        data[key] = value
    config = model.model_validate(data)
    return RunContext(config=config, base_dir=Path(path).resolve().parent)


def run_metadata(config: RunConfig) -> Dict[str, Any]:
    return {"seed": config.seed, "schema_version": config.schema_version, "version": __version__}


# -----------------------------
# Repositories
# -----------------------------
def get_field_repository(ctx: RunContext) -> FieldRepository:
    return FieldRepository(ctx.base_dir)


def get_cluster_repository(ctx: RunContext) -> ClusterRepository:
    return ClusterRepository(ctx.base_dir)


def get_plan_repository(ctx: RunContext) -> PlanRepository:
    return PlanRepository(ctx.base_dir)


def get_fit_repositories(ctx: RunContext, output_dir: Path):
    return (
        ClimatologyRepository(output_dir),
        ARRepository(output_dir),
        TransformRepository(output_dir),
    )
