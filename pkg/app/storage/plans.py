from app.features.adjustment.schemas import AdjustmentPlan
from app.storage.base import JsonRepository


class PlanRepository(JsonRepository[AdjustmentPlan]):
    """Plan d'ajustement complet (fits O/S, modèles de covariance, λ) ; sans facteurs."""

    model = AdjustmentPlan
