"""Sous-commande `kl` : divergence k-NN entre deux fichiers de champs (jours = points)."""

import logging
from pathlib import Path
from typing import Any, Dict

from app.cli.dependencies import RunContext, run_metadata
from app.cli.schemas import KlConfig
from app.core.errors import DataError
from app.core.logs import log_event
from app.features.divergence.services import knn_kl, knn_kl_both
from app.storage.base import dump_json
from app.storage.fields import FieldRepository

LOGGER = logging.getLogger(__name__)


def cmd_kl(ctx: RunContext, fields: FieldRepository) -> Dict[str, Path]:
    cfg: KlConfig = ctx.config  # type: ignore[assignment]
    obs = fields.load(ctx.path(cfg.obs), allow_negative=cfg.allow_negative)
    sim = fields.load(ctx.path(cfg.sim), allow_negative=cfg.allow_negative)
    if obs.n_sites != sim.n_sites:
        raise DataError(f"Dimensions incompatibles: {obs.n_sites} ≠ {sim.n_sites} sites.")

    record: Dict[str, Any] = {"meta": run_metadata(cfg)}
    if cfg.both_directions:
        forward, backward = knn_kl_both(obs.values.T, sim.values.T, k=cfg.k, threads=ctx.threads)
        record.update(forward.to_record())
        record["reverse"] = backward.to_record()
    else:
        record.update(knn_kl(obs.values.T, sim.values.T, k=cfg.k, threads=ctx.threads).to_record())

    out = dump_json(record, ctx.path(cfg.output))
    log_event(LOGGER, "kl_done", value=record["value"], k=record["k"], output=str(out))
    return {"output": out}
