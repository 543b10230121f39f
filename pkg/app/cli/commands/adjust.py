"""
Sous-commande `adjust` : ajuste (ou relit) un plan, corrige le champ simulé futur et écrit
le champ ajusté + un rapport JSON (méthode, λ, diagnostics, KL sur une tranche de contrôle).
"""

import dataclasses
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from app.cli.dependencies import RunContext, run_metadata
from app.cli.schemas import AdjustConfig
from app.core.errors import ConfigError
from app.core.logs import log_event
from app.features.adjustment.schemas import AdjustmentPlan, PlanOptions
from app.features.adjustment.services import apply_plan, fit_plan
from app.features.clustering.schemas import ClusterAssignment
from app.features.divergence.services import knn_kl
from app.storage.base import dump_json
from app.storage.clusters import ClusterRepository
from app.storage.fields import FieldRepository
from app.storage.plans import PlanRepository

LOGGER = logging.getLogger(__name__)


class AdjustPipeline:
    def __init__(
        self,
        ctx: RunContext,
        fields: FieldRepository,
        clusters: ClusterRepository,
        plans: PlanRepository,
    ):
        self.ctx = ctx
        self.fields = fields
        self.clusters = clusters
        self.plans = plans

    @property
    def config(self) -> AdjustConfig:
        return self.ctx.config  # type: ignore[return-value]

    def _load(self, path: str):
        return self.fields.load(self.ctx.path(path), allow_negative=self.config.allow_negative)

    def _options(self) -> PlanOptions:
        cfg = self.config
        kl_search = cfg.kl_search
        if "seed" not in kl_search.model_fields_set:
            kl_search = kl_search.model_copy(update={"seed": cfg.seed})
        return PlanOptions(
            K=cfg.K,
            P=cfg.P,
            with_trend=cfg.with_trend,
            mode=cfg.mode,
            metric=cfg.metric,
            transform_covariance=cfg.covariance,
            lambda_strategy=cfg.lambda_strategy,
            extrapolate_trend=cfg.extrapolate_trend,
            clamp_negative=cfg.clamp_negative,
            kl_search=kl_search,
        )

    def _cluster_assignment(self) -> Optional[ClusterAssignment]:
        if self.config.clusters is None:
            return None
        return self.clusters.load_any(self.ctx.path(self.config.clusters))

    def _plan(self) -> AdjustmentPlan:
        cfg = self.config
        if cfg.plan is not None:
            plan = self.plans.load(str(self.ctx.path(cfg.plan)))
            if plan.method != cfg.method:
                raise ConfigError(
                    f"Le plan {cfg.plan} est de méthode {plan.method}, config : {cfg.method}."
                )
            if "mode" in cfg.model_fields_set and cfg.mode != plan.mode:
                plan = dataclasses.replace(plan, mode=cfg.mode)
            return plan
        obs_hist = self._load(cfg.obs_hist)
        sim_hist = self._load(cfg.sim_hist)
        return fit_plan(
            obs_hist,
            sim_hist,
            cfg.method,
            self._options(),
            clusters=self._cluster_assignment(),
            threads=self.ctx.threads,
        )

    @staticmethod
    def _lambda_report(plan: AdjustmentPlan) -> Dict[str, Any]:
        if plan.transform is None:
            return {}
        out: Dict[str, Any] = {
            "lambda_obs": plan.transform[0].to_dict(),
            "lambda_sim": plan.transform[1].to_dict(),
        }
        if plan.lambda_search is not None:
            out["lambda_search"] = plan.lambda_search.to_dict()
        return out

    def run(self) -> Dict[str, Path]:
        cfg = self.config
        plan = self._plan()
        sim_future = self._load(cfg.sim_future)
        result = apply_plan(sim_future, plan)

        written: Dict[str, Path] = {
            "output": self.fields.save(result.field, self.ctx.path(cfg.output))
        }
        meta = run_metadata(cfg)
        if cfg.plan_output is not None:
            written["plan"] = self.plans.save(str(self.ctx.path(cfg.plan_output)), plan, **meta)

        report: Dict[str, Any] = {
            "meta": meta,
            "method": plan.method,
            "mode": plan.mode,
            "diagnostics": result.diagnostics.model_dump(mode="json"),
            **self._lambda_report(plan),
        }
        if cfg.obs_future is not None:
            obs_future = self._load(cfg.obs_future)
            estimate = knn_kl(
                obs_future.values.T, result.field.values.T, k=cfg.kl_k, threads=self.ctx.threads
            )
            report["kl_holdout"] = estimate.to_record()
        written["report"] = dump_json(report, self.ctx.path(cfg.report))
        log_event(LOGGER, "adjust_done", method=plan.method, outputs=sorted(written))
        return written


def cmd_adjust(
    ctx: RunContext, fields: FieldRepository, clusters: ClusterRepository, plans: PlanRepository
):
    return AdjustPipeline(ctx, fields, clusters, plans).run()
