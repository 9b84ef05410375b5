"""
Protocoles expérimentaux dérivés d'une configuration de base.
"""
import logging
from dataclasses import replace
from typing import List, Sequence

from ..core.exceptions import ConfigurationError
from ..core.models import BASELINE, SEGCLR, UPPER_BOUND, ExperimentConfig


logger = logging.getLogger(__name__)


def ablation_schedule(base_config: ExperimentConfig, fractions: Sequence[float]) -> List[ExperimentConfig]:
    """
    Une configuration par fraction de données non étiquetées ; seul
    ``unlabeled_fraction`` change d'une configuration à l'autre.

    Raises:
        ConfigurationError: Fraction hors de [0, 1]
    """
    configs = []
    for fraction in fractions:
        if not 0.0 <= float(fraction) <= 1.0:
            raise ConfigurationError(f"fractions: {fraction} hors de [0, 1]")
        configs.append(replace(base_config, unlabeled_fraction=float(fraction)))
    logger.debug(f"Ablation: {len(configs)} configurations pour {base_config.name}")
    return configs


def generalization_grid(base_config: ExperimentConfig, domains: Sequence[str]) -> List[ExperimentConfig]:
    """
    Grille de généralisation de domaine : pour chaque domaine seul puis pour
    l'union de tous les domaines, un Baseline et un SegCLR entraînés sans
    domaine cible, évalués sur tous les domaines.
    """
    domains = tuple(domains)
    if not domains:
        raise ConfigurationError("domains: au moins un domaine est requis")
    source_sets = [(domain,) for domain in domains]
    if len(domains) > 1:
        source_sets.append(domains)

    configs = []
    for sources in source_sets:
        label = "all" if len(sources) > 1 else sources[0]
        for variant in (BASELINE, SEGCLR):
            configs.append(replace(
                base_config,
                name=f"{base_config.name}_{variant}_{label}",
                model_variant=variant,
                source_domains=sources,
                target_domains=(),
                evaluation_domains=domains,
            ))
    return configs


def upper_bound_config(base_config: ExperimentConfig) -> ExperimentConfig:
    """UNet supervisé sur les étiquettes du domaine cible (référence haute)."""
    if not base_config.target_domains:
        raise ConfigurationError("target_domains: requis pour upper_bound")
    return replace(base_config, name=f"{base_config.name}_{UPPER_BOUND}", model_variant=UPPER_BOUND)


def baseline_config(base_config: ExperimentConfig) -> ExperimentConfig:
    """Baseline UNet de même architecture et mêmes graines."""
    return replace(base_config, name=f"{base_config.name}_{BASELINE}", model_variant=BASELINE)
