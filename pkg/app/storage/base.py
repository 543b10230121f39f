"""
Repository de base pour les artefacts JSON (fits, plans, rapports).

👉 Ne contient aucune logique métier.
👉 Gère la persistance générique : save, load, exists, path_for.
👉 Les repositories concrets définissent `model = MaClasse` (pydantic ou to_dict/from_dict).
"""

import json
from pathlib import Path
from typing import Any, Dict, Generic, Protocol, Type, TypeVar, runtime_checkable

from pydantic import BaseModel

from app.core.errors import DataError


@runtime_checkable
class DictSerializable(Protocol):
    def to_dict(self) -> Dict[str, Any]: ...

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Any: ...


# Type générique pour l'artefact (ClimatologyFit, TransformSpec, MaternParams, etc.)
ModelT = TypeVar("ModelT")


def dump_json(data: Dict[str, Any], path: Path) -> Path:
    """Écriture déterministe : clés triées, indentation fixe, newline final."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise DataError(f"Artefact introuvable: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"JSON invalide {path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path} doit contenir un objet JSON racine.")
    return data


class JsonRepository(Generic[ModelT]):
    """Persistance d'un type d'artefact dans un dossier racine."""

    model: Type[ModelT]
    suffix: str = ".json"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, name: str) -> Path:
        path = Path(name)
        if path.suffix != self.suffix:
            path = path.with_suffix(self.suffix)
        return path if path.is_absolute() else self.root / path

    def exists(self, name: str) -> bool:
        return self.path_for(name).exists()

    # ---------- WRITE ----------

    def save(self, name: str, entity: ModelT, **meta: Any) -> Path:
        """Écrit l'artefact ; `meta` (seed, version...) est ajouté sous la clé `meta`."""
        data = self.to_data(entity)
        if meta:
            data = {**data, "meta": meta}
        return dump_json(data, self.path_for(name))

    # ---------- READ ----------

    def load(self, name: str) -> ModelT:
        data = read_json(self.path_for(name))
        data.pop("meta", None)
        try:
            return self.from_data(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"Artefact mal formé {self.path_for(name)}: {exc}") from exc

    # ---------- (DE)SERIALISATION ----------

    def to_data(self, entity: ModelT) -> Dict[str, Any]:
        if isinstance(entity, BaseModel):
            return entity.model_dump(mode="json")
        if isinstance(entity, DictSerializable):
            return entity.to_dict()
        raise TypeError(f"Type non sérialisable: {type(entity).__name__}")

    def from_data(self, data: Dict[str, Any]) -> ModelT:
        if isinstance(self.model, type) and issubclass(self.model, BaseModel):
            return self.model.model_validate(data)
        return self.model.from_dict(data)  # type: ignore[attr-defined]
