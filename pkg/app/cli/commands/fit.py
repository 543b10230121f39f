"""
Sous-commande `fit` : climatologie, AR, λ par site, moments avant/après transformation,
covariance et clusters optionnels pour la paire historique (O, S).
"""

import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd

from app.cli.dependencies import RunContext, run_metadata
from app.cli.schemas import FitConfig
from app.core.errors import DataError
from app.core.logs import log_event
from app.features.climatology.services import (
    detrend,
    fit_ar,
    fit_mean,
    mean_residuals,
    trend_significance,
)
from app.features.clustering.services import cluster_features, weighted_kmeans
from app.features.covariance.services import fit_matern, fit_nonstat
from app.features.fields.schemas import SpatioTemporalField
from app.features.transform.schemas import TransformSpec
from app.features.transform.services import fit_lambda_mle, moments_table, transform_values
from app.storage.base import dump_json
from app.storage.clusters import ClusterRepository
from app.storage.fields import FieldRepository
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)


def _finite_or_none(value: float):
    return float(value) if np.isfinite(value) else None


class FitPipeline:
    def __init__(self, ctx: RunContext, fields: FieldRepository, clusters: ClusterRepository):
        self.ctx = ctx
        self.fields = fields
        self.clusters = clusters

    @property
    def config(self) -> FitConfig:
        return self.ctx.config  # type: ignore[return-value]

    # -------- Helpers --------

    def _lambdas(self, eps: np.ndarray):
        """λ-MLE par site ; les séries constantes gardent λ = 1 (rien à estimer)."""
        constant = np.isclose(np.std(eps, axis=1), 0.0, atol=1e-10)
        lam = np.ones(len(eps))
        ci = [[None, None] for _ in range(len(eps))]
        rows = np.flatnonzero(~constant)
        estimates = ordered_map(fit_lambda_mle, [eps[i] for i in rows], self.ctx.threads)
        for i, est in zip(rows, estimates):
            lam[i] = est.lambda_hat
            ci[i] = [est.ci_low, est.ci_high]
        if constant.any():
            log_event(LOGGER, "constant_innovations", level=logging.WARNING,
                      sites=np.flatnonzero(constant)[:20].tolist(), count=int(constant.sum()))
        return TransformSpec(lambda_per_site=lam, provenance="pointwise-mle"), ci

    def _fit_side(self, field: SpatioTemporalField) -> Dict[str, Any]:
        cfg = self.config
        mean_fit = fit_mean(field, K=cfg.K, with_trend=cfg.with_trend)
        ar_fit = fit_ar(mean_residuals(field, mean_fit), P=cfg.P, threads=self.ctx.threads)
        eps = detrend(field, mean_fit, ar_fit).values
        spec, ci = self._lambdas(eps)
        gaussian = transform_values(eps, spec)
        with np.errstate(divide="ignore", invalid="ignore"):
            before, after = moments_table(eps), moments_table(gaussian)
        side: Dict[str, Any] = {
            "mean_fit": mean_fit,
            "ar_fit": ar_fit,
            "transform": spec,
            "lambda_ci": ci,
            "moments": pd.DataFrame({
                "site_id": np.arange(field.n_sites),
                "skew_before": before[:, 0],
                "kurt_before": before[:, 1],
                "skew_after": after[:, 0],
                "kurt_after": after[:, 1],
            }),
            "significant": trend_significance(mean_fit, cfg.trend_level),
        }
        if cfg.covariance == "matern":
            side["covariance"] = fit_matern(gaussian, field.coords, metric=cfg.metric,
                                            threads=self.ctx.threads)
        elif cfg.covariance == "nonstationary":
            side["covariance"] = fit_nonstat(gaussian, field.coords, threads=self.ctx.threads)
        return side

    @staticmethod
    def _summary(side: Dict[str, Any]) -> Dict[str, Any]:
        moments = side["moments"]
        amplitude = side["mean_fit"].harmonic_amplitude()
        return {
            "trend_significant_sites": int(side["significant"].sum()),
            "harmonic_amplitude_max": float(amplitude.max()),
            "harmonic_amplitude_median": float(np.median(amplitude)),
            "median_abs_skew_before": _finite_or_none(np.nanmedian(moments["skew_before"].abs())),
            "median_abs_skew_after": _finite_or_none(np.nanmedian(moments["skew_after"].abs())),
            "median_kurt_before": _finite_or_none(np.nanmedian(moments["kurt_before"])),
            "median_kurt_after": _finite_or_none(np.nanmedian(moments["kurt_after"])),
            "lambda_median": float(np.median(side["transform"].lambda_per_site)),
            "innovation_sd_median": float(np.median(side["ar_fit"].innovation_sd)),
        }

    # -------- Run --------

    def run(self) -> Dict[str, Path]:
        cfg = self.config
        out_dir = self.ctx.path(cfg.output_dir)
        obs = self.fields.load(self.ctx.path(cfg.obs_hist))
        sim = self.fields.load(self.ctx.path(cfg.sim_hist))
        if not obs.same_layout(sim):
            raise DataError("Observations et simulations historiques n'ont pas les mêmes sites.")

        sides = {"obs": self._fit_side(obs), "sim": self._fit_side(sim)}
        meta = run_metadata(cfg)
        written: Dict[str, Path] = {}

        bundle: Dict[str, Any] = {"meta": meta, "n_sites": obs.n_sites}
        for name, side in sides.items():
            entry = {
                "climatology": side["mean_fit"].to_dict(),
                "ar": side["ar_fit"].to_dict(),
                "transform": side["transform"].to_dict(),
                "lambda_ci": {str(i): ci for i, ci in enumerate(side["lambda_ci"])},
            }
            if "covariance" in side:
                entry["covariance"] = side["covariance"].model_dump(mode="json")
            bundle[name] = entry
            path = out_dir / f"moments_{name}.csv"
            out_dir.mkdir(parents=True, exist_ok=True)
            side["moments"].to_csv(path, index=False, float_format="%.10g")
            written[f"moments_{name}"] = path
        written["bundle"] = dump_json(bundle, out_dir / "fit_bundle.json")

        summary: Dict[str, Any] = {
            "meta": meta,
            "n_sites": obs.n_sites,
            "n_days": {"obs": obs.n_days, "sim": sim.n_days},
            **{name: self._summary(side) for name, side in sides.items()},
        }

        if cfg.clusters is not None:
            features = cluster_features(sides["obs"]["transform"].lambda_per_site, obs.coords)
            assignment = weighted_kmeans(
                features,
                weights=cfg.clusters.weights,
                k=cfg.clusters.k,
                seed=cfg.seed,
                restarts=cfg.clusters.restarts,
                threads=self.ctx.threads,
            )
            written["clusters_csv"] = self.clusters.save_csv(assignment, out_dir / "clusters.csv")
            written["clusters_json"] = self.clusters.save(
                str(out_dir / "clusters.json"), assignment, **meta
            )
            summary["cluster_sizes"] = assignment.sizes().tolist()

        written["summary"] = dump_json(summary, out_dir / "summary.json")
        log_event(LOGGER, "fit_done", n_sites=obs.n_sites, outputs=sorted(written))
        return written


def cmd_fit(ctx: RunContext, fields: FieldRepository, clusters: ClusterRepository):
    return FitPipeline(ctx, fields, clusters).run()
