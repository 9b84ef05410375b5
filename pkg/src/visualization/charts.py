"""
Module de visualisation des résultats d'expériences de segmentation.
"""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from ..core.exceptions import VisualizationError


logger = logging.getLogger(__name__)

METRIC_LABELS = {"rel_dice": "Dice relatif (%)", "rel_uvd": "UVD relative (%)"}


class SegmentationCharts:
    """Générateur de graphiques pour les métriques relatives et l'entraînement."""

    def __init__(self, style: str = 'seaborn-v0_8', figsize: Tuple[int, int] = (12, 5)):
        """
        Initialise le générateur de graphiques.

        Args:
            style: Style matplotlib à utiliser
            figsize: Taille par défaut des figures
        """
        self.figsize = figsize
        try:
            plt.style.use(style)
        except OSError:
            logger.warning(f"Style {style} non disponible, utilisation du style par défaut")
            plt.style.use('default')

        sns.set_palette("husl")

    @staticmethod
    def _save(fig, save_path: Optional[Union[str, Path]]) -> None:
        if save_path:
            Path(save_path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(save_path, dpi=150, bbox_inches='tight', metadata={"Software": None})
            logger.info(f"Graphique sauvegardé: {save_path}")
        plt.close(fig)

    def plot_relative_metrics(self, relative_df: pd.DataFrame, bands_df: pd.DataFrame,
                              domain: str, title: Optional[str] = None,
                              save_path: Optional[Union[str, Path]] = None) -> None:
        """
        Trace les métriques relatives par modèle : une valeur par graine, la
        moyenne et sa bande de confiance à 95 %, le Baseline en pointillés à 0.

        Args:
            relative_df: Sortie de StatsAnalyzer.relative_metrics (par graine)
            bands_df: Sortie de StatsAnalyzer.seed_bands
            domain: Domaine à tracer
            title: Titre de la figure
            save_path: Chemin du fichier image

        Raises:
            VisualizationError: Si la création du graphique échoue
        """
        data = relative_df[relative_df["domain"] == domain]
        if data.empty:
            raise VisualizationError(f"Aucune donnée à visualiser pour le domaine {domain}")

        try:
            models = sorted(data["model_id"].unique())
            fig, axes = plt.subplots(1, 2, figsize=self.figsize)
            for ax, metric in zip(axes, METRIC_LABELS):
                sns.stripplot(data=data, x="model_id", y=metric, order=models, ax=ax,
                              color="0.3", size=4, jitter=0.15)
                bands = (bands_df[(bands_df["domain"] == domain) & (bands_df["metric"] == metric)]
                         .set_index("model_id"))
                for position, model_id in enumerate(models):
                    if model_id not in bands.index:
                        continue
                    band = bands.loc[model_id]
                    ax.fill_between([position - 0.3, position + 0.3], band["ci_low"], band["ci_high"],
                                    color="tab:blue", alpha=0.25, linewidth=0)
                    ax.hlines(band["mean"], position - 0.3, position + 0.3, color="tab:blue", linewidth=2)
                ax.axhline(0.0, color="black", linestyle="--", linewidth=1)
                ax.set_xlabel("Modèle")
                ax.set_ylabel(METRIC_LABELS[metric])
                ax.tick_params(axis="x", rotation=30)
                ax.grid(axis="y", alpha=0.3)

            fig.suptitle(title or f"Métriques relatives au Baseline - {domain}", fontsize=14, fontweight='bold')
            fig.tight_layout()
            self._save(fig, save_path)

        except Exception as e:
            raise VisualizationError(f"Erreur lors de la création du graphique des métriques relatives: {e}") from e

    def plot_training_history(self, history_df: pd.DataFrame, title: str = "Historique d'entraînement",
                              save_path: Optional[Union[str, Path]] = None) -> None:
        """
        Trace les pertes par époque et le Dice de validation.

        Raises:
            VisualizationError: Si la création échoue
        """
        if history_df.empty:
            raise VisualizationError("Historique vide")
        try:
            fig, (loss_ax, dice_ax) = plt.subplots(1, 2, figsize=self.figsize)
            steps = range(1, len(history_df) + 1)
            for column in ("loss_total", "loss_sup", "loss_con_source", "loss_con_target"):
                if column in history_df and history_df[column].notna().any():
                    loss_ax.plot(steps, history_df[column], label=column)
            loss_ax.set_xlabel("Époque")
            loss_ax.set_ylabel("Perte")
            loss_ax.legend()
            loss_ax.grid(alpha=0.3)

            if "val_dice" in history_df and history_df["val_dice"].notna().any():
                dice_ax.plot(steps, history_df["val_dice"], color="tab:green", marker="o", markersize=3)
            dice_ax.set_xlabel("Époque")
            dice_ax.set_ylabel("Dice de validation (%)")
            dice_ax.grid(alpha=0.3)

            fig.suptitle(title, fontsize=14, fontweight='bold')
            fig.tight_layout()
            self._save(fig, save_path)

        except Exception as e:
            raise VisualizationError(f"Erreur lors de la création du graphique d'entraînement: {e}") from e

    def close_all(self) -> None:
        """Ferme toutes les figures ouvertes."""
        plt.close('all')
