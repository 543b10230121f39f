"""
Sous-commande `validate` : banc de simulation (O skew-t, S GLG), une ligne CSV par
(simulation, méthode) avec la KL et son rapport à la méthode de référence.

Avec un bloc `experiment` : ajustement sur la période d'entraînement d'un couple de champs
réels, correction de la période de test et rapports de KL par méthode, sur tous les sites
puis sur des sous-échantillons (données des boîtes à moustaches).
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from app.cli.dependencies import RunContext, run_metadata
from app.cli.schemas import ExperimentConfig, ValidateConfig
from app.core.logs import log_event
from app.features.adjustment.schemas import KlSearchOptions, PlanOptions
from app.features.adjustment.services import kl_ratio_experiment
from app.features.clustering.schemas import ClusterAssignment
from app.features.simgen.schemas import ValidationOptions
from app.features.simgen.services import run_validation
from app.storage.base import dump_json
from app.storage.clusters import ClusterRepository
from app.storage.fields import FieldRepository

LOGGER = logging.getLogger(__name__)


class ValidatePipeline:
    def __init__(self, ctx: RunContext, fields: FieldRepository, clusters: ClusterRepository):
        self.ctx = ctx
        self.fields = fields
        self.clusters = clusters

    @property
    def config(self) -> ValidateConfig:
        return self.ctx.config  # type: ignore[return-value]

    def _options(self) -> ValidationOptions:
        cfg = self.config
        defaults = ValidationOptions().plan
        plan = defaults.model_copy(update={
            "mode": cfg.mode,
            "transform_covariance": cfg.covariance,
            "lambda_strategy": cfg.lambda_strategy,
            "kl_search": defaults.kl_search.model_copy(update={"seed": cfg.seed}),
        })
        return ValidationOptions(
            n_replicates=cfg.n_replicates,
            n_history=cfg.n_history,
            n_clusters=cfg.n_clusters,
            kl_k=cfg.kl_k,
            seed=cfg.seed,
            plan=plan,
        )

    # -----------------------------
    # Banc simulé
    # -----------------------------
    def _simulated(self) -> tuple[pd.DataFrame, Dict[str, Any]]:
        cfg = self.config
        table = run_validation(
            cfg.skewt,
            cfg.glg,
            cfg.n_sims,
            methods=cfg.methods,
            options=self._options(),
            threads=self.ctx.threads,
        )
        summary = {
            "n_sims": cfg.n_sims,
            "failed": int(table.attrs.get("failed", 0)),
            "median_kl": {
                str(m): float(v) for m, v in table.groupby("method")["kl"].median().items()
            },
        }
        return table, summary

    # -----------------------------
    # Données réelles
    # -----------------------------
    def _plan_options(self, exp: ExperimentConfig) -> PlanOptions:
        cfg = self.config
        return PlanOptions(
            K=exp.K,
            P=exp.P,
            with_trend=exp.with_trend,
            mode=cfg.mode,
            metric=exp.metric,
            transform_covariance=cfg.covariance,
            lambda_strategy=cfg.lambda_strategy,
            clamp_negative=exp.clamp_negative,
            kl_search=KlSearchOptions(seed=cfg.seed),
        )

    def _cluster_assignment(self, exp: ExperimentConfig) -> Optional[ClusterAssignment]:
        if exp.clusters is None:
            return None
        return self.clusters.load_any(self.ctx.path(exp.clusters))

    def _experiment(self, exp: ExperimentConfig) -> tuple[pd.DataFrame, Dict[str, Any]]:
        cfg = self.config
        obs = self.fields.load(self.ctx.path(exp.obs), allow_negative=exp.allow_negative)
        sim = self.fields.load(self.ctx.path(exp.sim), allow_negative=exp.allow_negative)
        table = kl_ratio_experiment(
            obs,
            sim,
            exp.split_date,
            methods=cfg.methods,
            options=self._plan_options(exp),
            subsample=exp.subsample,
            clusters=self._cluster_assignment(exp),
            baseline=exp.baseline,
            k=cfg.kl_k,
            threads=self.ctx.threads,
        )
        full = table[table["subsample"] == 0]
        summary = {
            "experiment": {
                "split_date": exp.split_date.isoformat(),
                "baseline": exp.baseline,
                "n_subsamples": exp.subsample.n_subsamples,
            },
            "kl_ratio": {str(m): float(r) for m, r in zip(full["method"], full["kl_ratio"])},
        }
        if exp.subsample.n_subsamples:
            subs = table[table["subsample"] > 0]
            summary["median_subsample_ratio"] = {
                str(m): float(v) for m, v in subs.groupby("method")["kl_ratio"].median().items()
            }
        return table, summary

    def run(self) -> Dict[str, Path]:
        cfg = self.config
        if cfg.experiment is not None:
            table, summary = self._experiment(cfg.experiment)
        else:
            table, summary = self._simulated()
        out = self.ctx.path(cfg.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out, index=False, float_format="%.10g")

        meta_path = dump_json({"meta": run_metadata(cfg), **summary}, out.with_suffix(".meta.json"))
        log_event(LOGGER, "validate_done", rows=len(table), output=str(out),
                  experiment=cfg.experiment is not None)
        return {"output": out, "meta": meta_path}


def cmd_validate(ctx: RunContext, fields: FieldRepository, clusters: ClusterRepository):
    return ValidatePipeline(ctx, fields, clusters).run()
