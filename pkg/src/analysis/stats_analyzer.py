"""
Module d'analyse statistique des mesures de segmentation.
"""
import logging
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from ..core.exceptions import EvaluationError
from ..core.models import AnalysisResult


logger = logging.getLogger(__name__)

METRICS = ("dice", "uvd")
REL_COLUMNS = {"dice": "rel_dice", "uvd": "rel_uvd"}


class StatsAnalyzer:
    """Analyseur statistique des mesures (Dice, UVD) par modèle et par graine."""

    def __init__(self):
        self._cache = {}

    @staticmethod
    def _check_records(df: pd.DataFrame, name: str) -> None:
        if df.empty:
            raise EvaluationError(f"{name}: aucune mesure fournie")
        missing = [c for c in ("model_id", "seed", "domain", "slice", "class", *METRICS) if c not in df.columns]
        if missing:
            raise EvaluationError(f"{name}: colonnes manquantes {missing}")

    def baseline_means(self, baseline_df: pd.DataFrame) -> pd.DataFrame:
        """Moyenne du Baseline par (domaine, classe), toutes graines et coupes confondues."""
        self._check_records(baseline_df, "baseline")
        return (baseline_df.groupby(["domain", "class"])[list(METRICS)]
                .mean()
                .rename(columns=lambda c: f"{c}_baseline")
                .reset_index())

    def relative_metrics(self, records_df: pd.DataFrame, baseline_df: pd.DataFrame,
                         use_cache: bool = True) -> AnalysisResult:
        """
        Calcule les métriques relatives au Baseline (en %).

        Pour chaque classe c : rel = m / moyenne_Baseline(c) - 1. Les valeurs sont
        moyennées sur les coupes de chaque classe, puis sur les classes avec un
        poids égal, par (modèle, graine, domaine).

        Args:
            records_df: Mesures des modèles à normaliser
            baseline_df: Mesures de tous les réplicats du Baseline

        Returns:
            AnalysisResult (colonnes model_id, seed, domain, rel_dice, rel_uvd)

        Raises:
            EvaluationError: Si le Baseline ne couvre pas une (domaine, classe) présente
        """
        self._check_records(records_df, "records")
        cache_key = ("relative", pd.util.hash_pandas_object(records_df).sum(),
                     pd.util.hash_pandas_object(baseline_df).sum())
        if use_cache and cache_key in self._cache:
            logger.debug("Utilisation des métriques relatives en cache")
            return self._cache[cache_key]

        means = self.baseline_means(baseline_df)
        merged = records_df.merge(means, on=["domain", "class"], how="left")
        uncovered = merged[merged["dice_baseline"].isna()][["domain", "class"]].drop_duplicates()
        if not uncovered.empty:
            cells = [tuple(r) for r in uncovered.itertuples(index=False)]
            raise EvaluationError(f"Le Baseline ne couvre pas les (domaine, classe): {cells}")

        excluded: Dict[str, List] = {}
        per_class = []
        keys = ["model_id", "seed", "domain", "class"]
        for metric in METRICS:
            baseline = merged[f"{metric}_baseline"]
            zero = baseline == 0
            if zero.any():
                cells = sorted(set(map(tuple, merged.loc[zero, ["domain", "class"]].values.tolist())))
                excluded[metric] = cells
                logger.warning(f"Moyenne Baseline nulle pour {metric}: classes exclues {cells}")
            rel = merged.loc[~zero, keys].copy()
            rel[REL_COLUMNS[metric]] = merged.loc[~zero, metric] / baseline[~zero] - 1.0
            per_class.append(rel.groupby(keys)[REL_COLUMNS[metric]].mean())

        class_level = pd.concat(per_class, axis=1).reset_index()
        result = (class_level.groupby(["model_id", "seed", "domain"])[list(REL_COLUMNS.values())]
                  .mean() * 100.0).reset_index()
        result = result.sort_values(["model_id", "domain", "seed"], kind="mergesort").reset_index(drop=True)

        analysis = AnalysisResult(data=result, summary={
            "excluded_classes": excluded,
            "models": sorted(result["model_id"].unique().tolist()),
        })
        if use_cache:
            self._cache[cache_key] = analysis
        logger.info(f"Métriques relatives calculées pour {len(analysis.summary['models'])} modèles")
        return analysis

    @staticmethod
    def confidence_interval(values, confidence: float = 0.95) -> Dict[str, float]:
        """Moyenne et intervalle de confiance de Student sur des moyennes de graines."""
        values = np.asarray(values, dtype=float)
        values = values[~np.isnan(values)]
        if values.size == 0:
            return {"mean": np.nan, "std": np.nan, "n": 0, "ci_low": np.nan, "ci_high": np.nan}
        mean = float(values.mean())
        if values.size < 2 or np.all(values == values[0]):
            return {"mean": mean, "std": 0.0, "n": int(values.size), "ci_low": mean, "ci_high": mean}
        low, high = stats.t.interval(confidence, values.size - 1, loc=mean, scale=stats.sem(values))
        return {"mean": mean, "std": float(values.std(ddof=1)), "n": int(values.size),
                "ci_low": float(low), "ci_high": float(high)}

    def seed_bands(self, relative_df: pd.DataFrame, confidence: float = 0.95) -> pd.DataFrame:
        """
        Bandes de confiance des métriques relatives sur les graines.

        Returns:
            DataFrame (model_id, domain, metric, mean, std, n, ci_low, ci_high)
        """
        rows = []
        for (model_id, domain), group in relative_df.groupby(["model_id", "domain"], sort=True):
            for column in REL_COLUMNS.values():
                band = self.confidence_interval(group[column].values, confidence)
                rows.append({"model_id": model_id, "domain": domain, "metric": column, **band})
        return pd.DataFrame(rows, columns=["model_id", "domain", "metric", "mean", "std", "n",
                                           "ci_low", "ci_high"])

    def seed_means(self, records_df: pd.DataFrame) -> pd.DataFrame:
        """Moyenne par (modèle, graine, domaine) : d'abord par classe sur les coupes, puis sur les classes."""
        self._check_records(records_df, "records")
        per_class = records_df.groupby(["model_id", "seed", "domain", "class"])[list(METRICS)].mean()
        return per_class.groupby(["model_id", "seed", "domain"]).mean().reset_index()

    def model_summary(self, records_df: pd.DataFrame) -> pd.DataFrame:
        """Moyenne ± écart-type sur les graines par (modèle, domaine)."""
        means = self.seed_means(records_df)
        summary = means.groupby(["model_id", "domain"])[list(METRICS)].agg(["mean", "std"])
        summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
        return summary.reset_index()

    def per_class_summary(self, records_df: pd.DataFrame) -> pd.DataFrame:
        """Dice (%) et UVD (fL) moyens ± écart-type sur les graines par (modèle, domaine, classe)."""
        self._check_records(records_df, "records")
        per_seed = records_df.groupby(["model_id", "seed", "domain", "class"])[list(METRICS)].mean()
        summary = per_seed.groupby(["model_id", "domain", "class"]).agg(["mean", "std"])
        summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
        return summary.reset_index()

    def clear_cache(self) -> None:
        """Vide le cache d'analyse."""
        self._cache.clear()


_analyzer: Optional[StatsAnalyzer] = None


def relative_metrics(records_df: pd.DataFrame, baseline_df: pd.DataFrame) -> pd.DataFrame:
    """Raccourci : métriques relatives par (modèle, graine, domaine)."""
    global _analyzer
    if _analyzer is None:
        _analyzer = StatsAnalyzer()
    return _analyzer.relative_metrics(records_df, baseline_df, use_cache=False).data
