"""
Repositories des fits historiques : climatologie, AR, transformation, covariance.

👉 Un fichier JSON par artefact, indexé par identifiant de site.
"""

from typing import Any, Dict

from pydantic import TypeAdapter

from app.features.climatology.schemas import ARFit, ClimatologyFit
from app.features.covariance.schemas import CovarianceModel
from app.features.transform.schemas import TransformSpec
from app.storage.base import JsonRepository

_COVARIANCE = TypeAdapter(CovarianceModel)


class ClimatologyRepository(JsonRepository[ClimatologyFit]):
    model = ClimatologyFit


class ARRepository(JsonRepository[ARFit]):
    model = ARFit


class TransformRepository(JsonRepository[TransformSpec]):
    model = TransformSpec


class CovarianceRepository(JsonRepository[CovarianceModel]):
    """Paramètres seuls : les facteurs de Cholesky sont recalculés à la lecture."""

    def to_data(self, entity: CovarianceModel) -> Dict[str, Any]:
        return _COVARIANCE.dump_python(entity, mode="json")

    def from_data(self, data: Dict[str, Any]) -> CovarianceModel:
        return _COVARIANCE.validate_python(data)
