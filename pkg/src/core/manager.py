"""
Gestionnaire principal des expériences de segmentation.
"""
import json
import logging
import os
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from .. import __version__
from .config import config_hash, load_experiment_plan, load_generation_config, read_yaml
from .exceptions import ConfigurationError, EvaluationError, ReportError, SegClrError
from .models import BASELINE, RunManifest, TrainHistory
from ..analysis.metrics import evaluate_model, read_records_csv, write_records_csv
from ..analysis.ranking import rank_models, significance_report
from ..analysis.stats_analyzer import StatsAnalyzer
from ..data.catalog import DomainCatalog
from ..data.storage import save_dataset
from ..data.synthdata import generate_domain, split_dataset
from ..modeling.state import load_checkpoint, save_checkpoint
from ..training.trainer import configure_determinism, run_replicates
from ..visualization.charts import SegmentationCharts


logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "SEGCLR_LOG_LEVEL"
MANIFEST_NAME = "run_manifest.json"

PathLike = Union[str, Path]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def domain_seed(seed: int, index: int) -> int:
    """Graine de génération du domaine d'indice ``index``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


class ExperimentManager:
    """
    Gestionnaire principal des expériences.

    Cette classe orchestre la génération des données synthétiques,
    l'entraînement des réplicats, l'évaluation, le classement et le rapport.
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """
        Initialise le gestionnaire.

        Args:
            config: Configuration optionnelle (log_level)
        """
        self.config = config or {}
        self._setup_logging()

        self.stats_analyzer = StatsAnalyzer()
        self.charts = SegmentationCharts()

        logger.info("ExperimentManager initialisé")

    def _setup_logging(self) -> None:
        """Configure le système de logging."""
        log_level = os.environ.get(LOG_LEVEL_ENV) or self.config.get('log_level', 'INFO')
        level = getattr(logging, str(log_level).upper(), None)
        if not isinstance(level, int):
            raise ConfigurationError(f"{LOG_LEVEL_ENV}: niveau de log inconnu {log_level!r}")
        logging.basicConfig(
            level=level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    # ------------------------------------------------------------------
    # Génération
    # ------------------------------------------------------------------

    def generate(self, config_path: PathLike, out_dir: PathLike) -> List[Path]:
        """
        Génère un répertoire de données par domaine décrit dans la configuration.

        Args:
            config_path: Document YAML de génération
            out_dir: Répertoire racine des jeux de données

        Returns:
            Répertoires des domaines, dans l'ordre de la configuration
        """
        config = load_generation_config(config_path)
        out_dir = Path(out_dir)
        directories = []
        for index, spec in enumerate(config.domains):
            seed = domain_seed(config.seed, index)
            volumes = generate_domain(spec, seed)
            split = split_dataset(volumes, config.split, seed)
            directory = save_dataset(split, out_dir / spec.domain_id)

            description = {
                "seed": seed,
                "split": list(config.split),
                "spec": json.loads(json.dumps(asdict(spec))),
            }
            (directory / "domain.yaml").write_text(
                yaml.safe_dump(description, sort_keys=False, allow_unicode=True), encoding="utf-8")
            logger.info(f"Domaine {spec.domain_id} généré: {len(volumes)} volumes, split {split.sizes}")
            directories.append(directory)
        return directories

    # ------------------------------------------------------------------
    # Entraînement
    # ------------------------------------------------------------------

    def train(self, config_path: PathLike, data_dir: PathLike, out_dir: PathLike,
              seeds: Optional[Sequence[int]] = None, force: bool = False, workers: int = 1,
              models: Optional[Sequence[str]] = None) -> RunManifest:
        """
        Entraîne un réplicat par graine pour chaque modèle de l'expérience.

        Args:
            config_path: Document YAML d'expérience
            data_dir: Racine des jeux de données générés
            out_dir: Répertoire des artefacts
            seeds: Graines remplaçant celles de la configuration
            force: Autorise l'écrasement d'une exécution existante
            workers: Processus d'entraînement par modèle
            models: Sous-ensemble des modèles à entraîner

        Returns:
            RunManifest écrit dans ``out_dir/run_manifest.json``

        Raises:
            ConfigurationError: Exécution existante sans force, modèle inconnu
            ReplicateError: Échec d'une graine
        """
        started_at = _now()
        plan = load_experiment_plan(config_path)
        if seeds:
            plan = plan.with_seeds(seeds)
        configs = plan.configs if not models else [plan.get(m) for m in models]

        out_dir = Path(out_dir)
        manifest_path = out_dir / MANIFEST_NAME
        if manifest_path.exists() and not force:
            raise ConfigurationError(
                f"{manifest_path} existe déjà; utilisez --force pour écraser l'exécution")
        out_dir.mkdir(parents=True, exist_ok=True)
        if configure_determinism():
            logger.info("Mode déterministe activé")

        catalog = DomainCatalog(data_dir)
        artifacts: Dict[str, Dict[str, str]] = {}
        model_entries: Dict[str, Dict[str, Any]] = {}
        total_counts = DomainCatalog()

        for config in configs:
            logger.info(f"Entraînement de {config.name} ({config.model_variant}), graines {list(config.seeds)}")
            catalog.reset_counts()
            results = run_replicates(config, catalog, workers=workers)
            best_epochs = {}
            for seed, state, history in results:
                seed_dir = out_dir / config.name / f"seed_{seed}"
                checkpoint = save_checkpoint(state, seed_dir / "model.pt")
                history_path = self._write_history(history, seed_dir / "history.jsonl")
                artifacts[f"{config.name}/seed_{seed}"] = {
                    "checkpoint": checkpoint.relative_to(out_dir).as_posix(),
                    "history": history_path.relative_to(out_dir).as_posix(),
                }
                best_epochs[str(seed)] = history.best_epoch

            counts = catalog.read_counts()
            total_counts.merge_counts(counts)
            model_entries[config.name] = {
                "variant": config.model_variant,
                "seeds": [int(s) for s in config.seeds],
                "source_domains": list(config.source_domains),
                "target_domains": list(config.target_domains),
                "evaluation_domains": list(config.domains_to_evaluate),
                "threshold": config.threshold,
                "best_epochs": best_epochs,
                "read_counts": counts,
            }

        manifest = RunManifest(
            config_hash=config_hash(read_yaml(config_path)),
            seeds=sorted({int(s) for c in configs for s in c.seeds}),
            artifacts=artifacts,
            started_at=started_at,
            finished_at=_now(),
            version=__version__,
            read_counts=total_counts.read_counts(),
            config_path=str(config_path),
            data_dir=str(data_dir),
            models=model_entries,
            baseline_model=plan.baseline_model,
        )
        self._write_manifest(manifest, manifest_path)
        return manifest

    @staticmethod
    def _write_history(history: TrainHistory, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(record.to_dict(), sort_keys=True) for record in history.records]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return path

    @staticmethod
    def _write_manifest(manifest: RunManifest, path: Path) -> None:
        root = path.parent
        for entry in manifest.artifacts.values():
            for kind, relative in entry.items():
                if not (root / relative).exists():
                    raise SegClrError(f"Artefact {kind} absent au moment d'écrire le manifeste: {relative}")
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Manifeste écrit: {path}")

    @staticmethod
    def load_manifest(path: PathLike) -> RunManifest:
        """
        Relit un manifeste d'exécution.

        Raises:
            EvaluationError: Fichier absent ou illisible
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise EvaluationError(f"Manifeste introuvable: {path}")
        try:
            return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, TypeError) as e:
            raise EvaluationError(f"Manifeste illisible {path}: {e}")

    # ------------------------------------------------------------------
    # Évaluation
    # ------------------------------------------------------------------

    def evaluate(self, manifest_path: PathLike, data_dir: Optional[PathLike], out_csv: PathLike,
                 models: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """
        Évalue chaque (modèle, graine) du manifeste sur ses domaines d'évaluation.

        Returns:
            DataFrame des mesures, tel qu'écrit dans ``out_csv``

        Raises:
            EvaluationError: Modèle inconnu ou checkpoint absent
        """
        manifest_path = Path(manifest_path)
        manifest = self.load_manifest(manifest_path)
        root = manifest_path if manifest_path.is_dir() else manifest_path.parent
        model_ids = list(models) if models else list(manifest.models)
        unknown = [m for m in model_ids if m not in manifest.models]
        if unknown:
            raise EvaluationError(f"Modèles inconnus dans le manifeste: {unknown}")

        catalog = DomainCatalog(data_dir or manifest.data_dir)
        records = []
        for model_id in model_ids:
            entry = manifest.models[model_id]
            for seed in entry["seeds"]:
                artifact = manifest.artifacts.get(f"{model_id}/seed_{seed}")
                if artifact is None:
                    raise EvaluationError(f"Checkpoint absent pour {model_id}, graine {seed}")
                state = load_checkpoint(root / artifact["checkpoint"])
                for domain in entry["evaluation_domains"]:
                    records += evaluate_model(state, catalog.evaluation_volumes(domain),
                                              threshold=entry["threshold"], model_id=model_id, seed=seed)
            logger.info(f"Modèle {model_id} évalué sur {entry['evaluation_domains']}")

        path = write_records_csv(records, out_csv)
        return read_records_csv(path)

    # ------------------------------------------------------------------
    # Classement et rapport
    # ------------------------------------------------------------------

    @staticmethod
    def _resolve_baseline(records_df: pd.DataFrame, baseline: Optional[str]) -> Optional[str]:
        model_ids = sorted(records_df["model_id"].unique())
        if baseline is not None:
            if baseline not in model_ids:
                raise EvaluationError(f"Modèle de référence inconnu: {baseline}")
            return baseline
        candidates = [m for m in model_ids if BASELINE in m]
        if candidates:
            logger.info(f"Modèle de référence déduit: {candidates[0]}")
            return candidates[0]
        logger.warning("Aucun modèle de référence identifié")
        return None

    def rank(self, csvs: Sequence[PathLike], out_dir: PathLike,
             baseline: Optional[str] = None) -> Dict[str, Path]:
        """
        Classe les modèles et écrit le rapport de significativité.

        Returns:
            Chemins de rank_table.csv et significance.json
        """
        records = read_records_csv(list(csvs))
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        table = rank_models(records)
        rank_path = out_dir / "rank_table.csv"
        table.data.to_csv(rank_path, index=False)

        baseline = self._resolve_baseline(records, baseline)
        report = (significance_report(records, baseline) if baseline is not None
                  else pd.DataFrame())
        significance_path = out_dir / "significance.json"
        significance_path.write_text(json.dumps({
            "baseline": baseline,
            "ranking": table.metadata,
            "comparisons": json.loads(report.to_json(orient="records")),
        }, indent=2, sort_keys=True), encoding="utf-8")

        logger.info(f"Classement écrit dans {rank_path}")
        return {"rank_table": rank_path, "significance": significance_path}

    def report(self, csvs: Sequence[PathLike], out_dir: PathLike, baseline: Optional[str] = None,
               models: Optional[Sequence[str]] = None, manifest: Optional[PathLike] = None,
               plots: bool = True) -> List[Path]:
        """
        Produit le résumé statique : tableaux CSV et XLSX, graphiques des
        métriques relatives par domaine et, si un manifeste est fourni,
        l'historique d'entraînement de chaque réplicat.

        Returns:
            Fichiers écrits, triés

        Raises:
            ReportError: Liste de modèles vide ou génération impossible
        """
        if models is not None and len(models) == 0:
            raise ReportError("Liste de modèles vide")
        records = read_records_csv(list(csvs))
        baseline = self._resolve_baseline(records, baseline)
        if models is not None:
            unknown = [m for m in models if m not in set(records["model_id"])]
            if unknown:
                raise ReportError(f"Modèles sans mesures: {unknown}")
            keep = set(models) | ({baseline} if baseline else set())
            records = records[records["model_id"].isin(keep)]

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tables = {
            "summary": self.stats_analyzer.model_summary(records),
            "per_class": self.stats_analyzer.per_class_summary(records),
        }
        relative = None
        if baseline is not None:
            baseline_df = records[records["model_id"] == baseline]
            relative = self.stats_analyzer.relative_metrics(records, baseline_df).data
            tables["relative"] = relative
            tables["bands"] = self.stats_analyzer.seed_bands(relative)

        written = []
        try:
            for name, table in tables.items():
                path = out_dir / f"{name}.csv"
                table.to_csv(path, index=False, encoding='utf-8')
                written.append(path)
            workbook = out_dir / "report.xlsx"
            with pd.ExcelWriter(workbook, engine="openpyxl") as writer:
                for name, table in tables.items():
                    table.to_excel(writer, sheet_name=name, index=False)
            written.append(workbook)
        except Exception as e:
            raise ReportError(f"Erreur lors de l'export du rapport: {e}")

        if plots and relative is not None:
            for domain in sorted(relative["domain"].unique()):
                path = out_dir / f"relative_{domain}.png"
                self.charts.plot_relative_metrics(relative, tables["bands"], domain, save_path=path)
                written.append(path)
        if plots and manifest is not None:
            written += self._plot_histories(manifest, out_dir / "histories")

        self.charts.close_all()
        logger.info(f"Rapport écrit dans {out_dir} ({len(written)} fichiers)")
        return sorted(written)

    def _plot_histories(self, manifest_path: PathLike, out_dir: Path) -> List[Path]:
        manifest_path = Path(manifest_path)
        manifest = self.load_manifest(manifest_path)
        root = manifest_path if manifest_path.is_dir() else manifest_path.parent
        written = []
        for key, artifact in sorted(manifest.artifacts.items()):
            if "history" not in artifact:
                continue
            history = pd.read_json(root / artifact["history"], lines=True)
            if history.empty:
                continue
            path = out_dir / f"{key.replace('/', '_')}.png"
            self.charts.plot_training_history(history, title=f"Historique - {key}", save_path=path)
            written.append(path)
        return written

    def clear_cache(self) -> None:
        """Vide tous les caches."""
        self.stats_analyzer.clear_cache()
        logger.info("Tous les caches vidés")
