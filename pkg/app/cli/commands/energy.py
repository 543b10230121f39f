"""
Sous-commande `energy` : vent de surface historique et futur → ensembles à hauteur de moyeu →
écarts de revenu par parc (moyenne et écart-type sur les tirages).

Les deux ensembles partagent la même graine : à entrées identiques, les écarts sont nuls.
"""

import logging
from pathlib import Path
from typing import Dict, List

import numpy as np

from app.cli.dependencies import RunContext, run_metadata
from app.cli.schemas import EnergyConfig
from app.core.config import settings
from app.core.errors import DataError
from app.core.logs import log_event
from app.features.energy.schemas import FarmSite, PowerCurve, ShearFit
from app.features.energy.services import (
    expected_multiplier,
    extrapolate,
    fit_shear,
    krige_downscale,
    revenue_delta,
)
from app.features.fields.schemas import SpatioTemporalField
from app.storage.base import dump_json
from app.storage.energy_inputs import (
    load_farms,
    load_power_curves,
    load_profiles,
    save_delta_table,
)
from app.storage.fields import FieldRepository

LOGGER = logging.getLogger(__name__)


class EnergyPipeline:
    def __init__(self, ctx: RunContext, fields: FieldRepository):
        self.ctx = ctx
        self.fields = fields

    @property
    def config(self) -> EnergyConfig:
        return self.ctx.config  # type: ignore[return-value]

    # -------- Helpers --------

    def _downscale(self, field: SpatioTemporalField) -> SpatioTemporalField:
        """Krigeage vers les sites fins ; les prédictions négatives sont ramenées à 0."""
        spec = self.config.downscale
        fine_sites = self.fields.load_sites(self.ctx.path(spec.fine_sites))
        fine_coords = np.array([[s.lon, s.lat] for s in fine_sites])
        prediction, _ = krige_downscale(field.values, field.coords, fine_coords, spec.variogram)
        negative = int(np.sum(prediction < 0))
        if negative:
            log_event(LOGGER, "downscale_clamped", level=logging.WARNING, count=negative)
        return SpatioTemporalField(
            sites=fine_sites, calendar=field.calendar, values=np.maximum(prediction, 0.0)
        )

    def _shear(self, n_sites: int) -> ShearFit:
        cfg = self.config
        if cfg.profiles is None:
            return ShearFit.constant(
                n_sites, alpha=settings.DEFAULT_SHEAR_ALPHA, reference_height=cfg.reference_height
            )
        shear = fit_shear(
            load_profiles(self.ctx.path(cfg.profiles)),
            heights=cfg.heights,
            reference_height=cfg.reference_height,
        )
        if shear.site_ids != tuple(range(n_sites)):
            raise DataError(
                f"Profils verticaux pour {shear.n_sites} sites, champ à {n_sites} sites."
            )
        return shear

    @staticmethod
    def _hub_heights(
        n_sites: int, farms: List[FarmSite], curves: Dict[str, PowerCurve]
    ) -> np.ndarray:
        """Hauteur de moyeu de la turbine du parc ; les sites sans parc prennent la plus haute."""
        used = [curves[f.turbine].hub_height for f in farms if f.turbine in curves]
        default = max(used) if used else max(c.hub_height for c in curves.values())
        heights = np.full(n_sites, default, dtype=float)
        for farm in farms:
            if farm.site_id < n_sites and farm.turbine in curves:
                heights[farm.site_id] = curves[farm.turbine].hub_height
        return heights

    # -------- Run --------

    def run(self) -> Dict[str, Path]:
        cfg = self.config
        hist = self.fields.load(self.ctx.path(cfg.surface_hist))
        future = self.fields.load(self.ctx.path(cfg.surface_future))
        if not hist.same_layout(future):
            raise DataError("Champs de surface historique et futur sur des sites différents.")
        if cfg.downscale is not None:
            hist, future = self._downscale(hist), self._downscale(future)

        curves = load_power_curves(self.ctx.path(cfg.power_curves))
        farms = load_farms(self.ctx.path(cfg.farms))
        shear = self._shear(hist.n_sites)
        heights = self._hub_heights(hist.n_sites, farms, curves)

        hist_ens = extrapolate(hist, shear, heights, n_draws=cfg.n_draws, seed=cfg.seed)
        future_ens = extrapolate(future, shear, heights, n_draws=cfg.n_draws, seed=cfg.seed)
        delta = revenue_delta(hist_ens, future_ens, farms, curves)

        out = save_delta_table(delta.per_site, self.ctx.path(cfg.output))
        multiplier = expected_multiplier(shear, heights)
        summary = {
            "meta": run_metadata(cfg),
            "n_draws": delta.n_draws,
            "n_farms": len(farms),
            "total_mean_delta": delta.total_mean,
            "total_sd_delta": delta.total_sd,
            "expected_multiplier_median": float(np.median(multiplier)),
            "shear_alpha_median": float(np.median(shear.alpha)),
            "downscaled": cfg.downscale is not None,
        }
        summary_path = dump_json(summary, self.ctx.path(cfg.summary))
        log_event(LOGGER, "energy_done", n_farms=len(farms), total_mean=delta.total_mean)
        return {"output": out, "summary": summary_path}


def cmd_energy(ctx: RunContext, fields: FieldRepository):
    return EnergyPipeline(ctx, fields).run()
