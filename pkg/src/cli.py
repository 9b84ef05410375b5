"""
Interface en ligne de commande : generate, train, evaluate, rank, report.

Codes de sortie : 0 succès, 1 erreur de validation, 2 erreur d'exécution.
Toute erreur produit une ligne ``error code=<n> type=<Nom> message=<texte>``
sur la sortie d'erreur.
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import typer

from .core.exceptions import ConfigurationError, SegClrError, exit_code_for


logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Segmentation de coupes supervisée et contrastive.")


def format_error(error: Exception) -> str:
    code = exit_code_for(error) if isinstance(error, SegClrError) else 2
    message = " ".join(str(error).split())
    return f"error code={code} type={type(error).__name__} message={message}"


@contextmanager
def _guarded():
    try:
        yield
    except SegClrError as e:
        typer.echo(format_error(e), err=True)
        raise typer.Exit(code=exit_code_for(e))
    except Exception as e:
        logger.exception("Erreur inattendue")
        typer.echo(format_error(e), err=True)
        raise typer.Exit(code=2)


def parse_seeds(value: Optional[str]) -> Optional[List[int]]:
    """Lit une liste de graines ``0,1,2``."""
    if value is None or not value.strip():
        return None
    try:
        seeds = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"seeds: entiers séparés par des virgules attendus, trouvé {value!r}")
    if any(s < 0 for s in seeds):
        raise ConfigurationError(f"seeds: graines positives attendues, trouvé {seeds}")
    return seeds


def _split_names(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [name.strip() for name in value.split(",") if name.strip()]


def _manager():
    from .core.manager import ExperimentManager
    return ExperimentManager()


@app.command()
def generate(
    config: Path = typer.Option(..., "--config", help="Configuration YAML des domaines"),
    out: Path = typer.Option(..., "--out", help="Répertoire racine des jeux de données"),
):
    """Génère un jeu de données synthétique par domaine."""
    with _guarded():
        directories = _manager().generate(config, out)
        for directory in directories:
            typer.echo(str(directory))


@app.command()
def train(
    config: Path = typer.Option(..., "--config", help="Configuration YAML de l'expérience"),
    data: Path = typer.Option(..., "--data", help="Racine des jeux de données"),
    out: Path = typer.Option(..., "--out", help="Répertoire des artefacts"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="Graines, ex. 0,1,2"),
    force: bool = typer.Option(False, "--force", help="Écrase une exécution existante"),
    workers: int = typer.Option(1, "--workers", min=1, help="Processus par modèle"),
    models: Optional[str] = typer.Option(None, "--models", help="Sous-ensemble de modèles"),
):
    """Entraîne un réplicat par graine et écrit le manifeste d'exécution."""
    with _guarded():
        manifest = _manager().train(config, data, out, seeds=parse_seeds(seeds), force=force,
                                    workers=workers, models=_split_names(models))
        typer.echo(f"{len(manifest.artifacts)} réplicats entraînés, manifeste: {out / 'run_manifest.json'}")


@app.command()
def evaluate(
    manifest: Path = typer.Option(..., "--manifest", help="run_manifest.json ou son répertoire"),
    out: Path = typer.Option(..., "--out", help="Fichier CSV des mesures"),
    data: Optional[Path] = typer.Option(None, "--data", help="Racine des jeux de données"),
    models: Optional[str] = typer.Option(None, "--models", help="Sous-ensemble de modèles"),
):
    """Évalue les modèles entraînés coupe par coupe et classe par classe."""
    with _guarded():
        records = _manager().evaluate(manifest, data, out, models=_split_names(models))
        typer.echo(f"{len(records)} mesures écrites dans {out}")


@app.command()
def rank(
    metrics: List[Path] = typer.Argument(..., help="CSV de mesures"),
    out: Path = typer.Option(..., "--out", help="Répertoire de sortie"),
    baseline: Optional[str] = typer.Option(None, "--baseline", help="Modèle de référence"),
):
    """Classe les modèles et teste leur différence au modèle de référence."""
    with _guarded():
        paths = _manager().rank(metrics, out, baseline=baseline)
        for path in paths.values():
            typer.echo(str(path))


@app.command()
def report(
    metrics: List[Path] = typer.Argument(..., help="CSV de mesures"),
    out: Path = typer.Option(..., "--out", help="Répertoire du rapport"),
    baseline: Optional[str] = typer.Option(None, "--baseline", help="Modèle de référence"),
    models: Optional[str] = typer.Option(None, "--models", help="Modèles à inclure"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Manifeste pour les historiques"),
    plots: bool = typer.Option(True, "--plots/--no-plots", help="Produit les graphiques PNG"),
):
    """Écrit les tableaux (CSV, XLSX) et les graphiques des métriques relatives."""
    with _guarded():
        written = _manager().report(metrics, out, baseline=baseline, models=_split_names(models),
                                    manifest=manifest, plots=plots)
        for path in written:
            typer.echo(str(path))


def main() -> None:
    app()


if __name__ == "__main__":
    main()
