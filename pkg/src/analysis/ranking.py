"""
Classement des modèles et tests de significativité appariés.
"""
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from ..core.exceptions import EvaluationError, RankingError
from ..core.models import RankTable, SignificanceResult


logger = logging.getLogger(__name__)

# Seuils (p <= seuil) des niveaux de significativité, du plus strict au plus large
SIGNIFICANCE_TIERS = ((1e-4, "****"), (1e-3, "***"), (1e-2, "**"), (5e-2, "*"))
NOT_SIGNIFICANT = "n.s."

CELL_KEYS = ["seed", "domain", "volume"]


def significance_tier(p_value: float) -> str:
    for threshold, tier in SIGNIFICANCE_TIERS:
        if p_value <= threshold:
            return tier
    return NOT_SIGNIFICANT


def volume_level(records_df: pd.DataFrame) -> pd.DataFrame:
    """Moyenne des mesures par (modèle, graine, domaine, volume) sur les coupes et les classes."""
    return (records_df.groupby(["model_id", *CELL_KEYS])[["dice", "uvd"]]
            .mean()
            .reset_index())


def rank_models(records_df: pd.DataFrame, models: Optional[Sequence[str]] = None) -> RankTable:
    """
    Classe les modèles par volume, graine et métrique, puis moyenne les rangs.

    Rang 1 = meilleur (Dice le plus élevé, UVD le plus faible) ; les égalités
    reçoivent le rang moyen.

    Args:
        records_df: Mesures (colonnes model_id, seed, domain, volume, dice, uvd)
        models: Modèles à classer (par défaut tous)

    Returns:
        RankTable (colonnes model_id, rank, dice_rank, uvd_rank)

    Raises:
        RankingError: Si une cellule (modèle, graine, volume) est absente
    """
    if records_df.empty:
        raise RankingError("Aucune mesure à classer")
    df = records_df if models is None else records_df[records_df["model_id"].isin(models)]
    model_ids = sorted(df["model_id"].unique().tolist()) if models is None else list(models)
    unknown = [m for m in model_ids if m not in set(df["model_id"])]
    if unknown:
        raise RankingError(f"Modèles sans mesures: {unknown}")

    volumes = volume_level(df)
    cells = volumes[CELL_KEYS].drop_duplicates()
    expected = pd.MultiIndex.from_tuples(
        [(m, *cell) for m in model_ids for cell in cells.itertuples(index=False)],
        names=["model_id", *CELL_KEYS])
    present = pd.MultiIndex.from_frame(volumes[["model_id", *CELL_KEYS]])
    missing = expected.difference(present)
    if len(missing):
        listed = ", ".join(f"(model={m}, seed={s}, domain={d}, volume={v})" for m, s, d, v in missing)
        raise RankingError(f"Cellules manquantes: {listed}")

    grouped = volumes.groupby(CELL_KEYS)
    volumes["dice_rank"] = grouped["dice"].transform(lambda s: stats.rankdata(-s.to_numpy()))
    volumes["uvd_rank"] = grouped["uvd"].transform(lambda s: stats.rankdata(s.to_numpy()))

    table = volumes.groupby("model_id")[["dice_rank", "uvd_rank"]].mean()
    table["rank"] = table[["dice_rank", "uvd_rank"]].mean(axis=1)
    table = (table.reset_index()[["model_id", "rank", "dice_rank", "uvd_rank"]]
             .sort_values(["rank", "model_id"], kind="mergesort")
             .reset_index(drop=True))

    metadata = {
        "n_models": len(model_ids),
        "n_seeds": int(cells["seed"].nunique()),
        "n_volumes": int(cells[["domain", "volume"]].drop_duplicates().shape[0]),
        "n_cells": int(len(cells)),
    }
    logger.info(f"Classement de {len(model_ids)} modèles sur {metadata['n_cells']} cellules")
    return RankTable(data=table, metadata=metadata)


def paired_ttest(values_a: Sequence[float], values_b: Sequence[float]) -> SignificanceResult:
    """
    Test t apparié bilatéral sur les différences a - b.

    Conventions : différences toutes nulles -> p = 1 ; variance nulle avec
    moyenne non nulle -> p = 0.

    Raises:
        EvaluationError: Longueurs différentes ou moins de 2 paires
    """
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError(f"paired_ttest: séries de longueurs différentes ({a.shape} / {b.shape})")
    if a.size < 2:
        raise EvaluationError("paired_ttest: au moins 2 paires sont requises")

    differences = a - b
    mean_difference = float(differences.mean())
    if np.all(differences == 0):
        return SignificanceResult(1.0, NOT_SIGNIFICANT, 0.0, 0.0, int(a.size))
    if np.all(differences == differences[0]):
        statistic = float(np.sign(mean_difference) * np.inf)
        return SignificanceResult(0.0, significance_tier(0.0), statistic, mean_difference, int(a.size))

    result = stats.ttest_rel(a, b)
    p_value = float(result.pvalue)
    return SignificanceResult(p_value, significance_tier(p_value), float(result.statistic),
                              mean_difference, int(a.size))


def significance_report(records_df: pd.DataFrame, baseline_model: str,
                        models: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Compare chaque modèle au modèle de référence, par domaine et par métrique.

    Les valeurs appariées sont les moyennes par graine (classes pondérées également).

    Returns:
        DataFrame (model_id, baseline, domain, metric, mean_model, mean_baseline,
        mean_difference, statistic, p_value, tier, n)
    """
    if baseline_model not in set(records_df["model_id"]):
        raise EvaluationError(f"Modèle de référence inconnu: {baseline_model}")
    per_seed = (records_df.groupby(["model_id", "seed", "domain", "class"])[["dice", "uvd"]].mean()
                .groupby(["model_id", "seed", "domain"]).mean().reset_index())
    candidates = models if models is not None else sorted(set(per_seed["model_id"]) - {baseline_model})

    rows = []
    for model_id in candidates:
        for domain in sorted(per_seed["domain"].unique()):
            left = per_seed[(per_seed["model_id"] == model_id) & (per_seed["domain"] == domain)]
            right = per_seed[(per_seed["model_id"] == baseline_model) & (per_seed["domain"] == domain)]
            paired = left.merge(right, on="seed", suffixes=("_model", "_baseline"))
            if len(paired) < 2:
                logger.warning(f"Moins de 2 graines communes pour {model_id} / {baseline_model} sur {domain}")
                continue
            for metric in ("dice", "uvd"):
                result = paired_ttest(paired[f"{metric}_model"], paired[f"{metric}_baseline"])
                rows.append({
                    "model_id": model_id,
                    "baseline": baseline_model,
                    "domain": domain,
                    "metric": metric,
                    "mean_model": float(paired[f"{metric}_model"].mean()),
                    "mean_baseline": float(paired[f"{metric}_baseline"].mean()),
                    "mean_difference": result.mean_difference,
                    "statistic": result.statistic,
                    "p_value": result.p_value,
                    "tier": result.tier,
                    "n": result.n,
                })
    return pd.DataFrame(rows, columns=["model_id", "baseline", "domain", "metric", "mean_model",
                                       "mean_baseline", "mean_difference", "statistic", "p_value",
                                       "tier", "n"])
