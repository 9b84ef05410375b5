"""
Chargement des configurations YAML (génération de données et expériences).

Chaque clé correspond à un champ des dataclasses de ``models.py`` ; les erreurs
nomment le chemin du champ fautif (``loss.tau``, ``domains[1].slice_spacing``).
"""
import hashlib
import json
import logging
from dataclasses import MISSING, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from .exceptions import ConfigurationError, DataValidationError
from .models import BASELINE, DomainSpec, ExperimentConfig
from ..training.protocols import ablation_schedule, generalization_grid


logger = logging.getLogger(__name__)

PROTOCOL_KINDS = ("single", "ablation", "dg_grid")


@dataclass
class GenerationConfig:
    """Description des domaines synthétiques à générer."""
    domains: List[DomainSpec]
    seed: int = 0
    split: Tuple[float, float, float] = (0.7, 0.15, 0.15)


@dataclass
class ExperimentPlan:
    """Ensemble des modèles d'une expérience, issu d'un document de configuration."""
    name: str
    configs: List[ExperimentConfig]
    baseline_model: Optional[str] = None
    protocol: str = "single"
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def model_ids(self) -> List[str]:
        return [config.name for config in self.configs]

    @property
    def seeds(self) -> List[int]:
        ordered: List[int] = []
        for config in self.configs:
            ordered += [s for s in config.seeds if s not in ordered]
        return ordered

    def get(self, model_id: str) -> ExperimentConfig:
        for config in self.configs:
            if config.name == model_id:
                return config
        raise ConfigurationError(f"models: modèle inconnu {model_id!r}")

    def with_seeds(self, seeds) -> "ExperimentPlan":
        seeds = tuple(int(s) for s in seeds)
        if not seeds:
            raise ConfigurationError("seeds: au moins une graine est requise")
        return replace(self, configs=[replace(c, seeds=seeds) for c in self.configs])


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(value: Any, hint: Any, path: str) -> Any:
    origin = get_origin(hint)
    args = get_args(hint)

    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if isinstance(hint, type) and is_dataclass(hint):
        return build_dataclass(hint, value, path)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path}: liste attendue, trouvé {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigurationError(f"{path}: {len(args)} valeurs attendues, trouvé {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path}: liste attendue, trouvé {value!r}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: booléen attendu, trouvé {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: entier attendu, trouvé {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool):
            raise ConfigurationError(f"{path}: nombre attendu, trouvé {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{path}: nombre attendu, trouvé {value!r}")
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: chaîne attendue, trouvé {value!r}")
        return value
    return value


def build_dataclass(cls, data: Any, path: str = ""):
    """
    Construit une dataclass à partir d'un mapping, récursivement.

    Raises:
        ConfigurationError: Clé inconnue, champ requis absent ou type invalide
    """
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or cls.__name__}: mapping attendu, trouvé {type(data).__name__}")
    hints = get_type_hints(cls)
    known = {f.name: f for f in fields(cls) if f.init}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(f"{_join(path, unknown[0])}: clé inconnue")

    values = {}
    for name, spec in known.items():
        if name in data:
            values[name] = _coerce(data[name], hints[name], _join(path, name))
        elif spec.default is MISSING and spec.default_factory is MISSING:
            raise ConfigurationError(f"{_join(path, name)}: champ requis absent")
    try:
        return cls(**values)
    except DataValidationError as e:
        raise ConfigurationError(f"{path}.{e}" if path else str(e))


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """Lit un document YAML et vérifie qu'il s'agit d'un mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Fichier de configuration introuvable: {path}")
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"YAML invalide dans {path}: {e}")
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: le document doit être un mapping")
    return document


def config_hash(document: Dict[str, Any]) -> str:
    """Empreinte SHA-256 d'un document de configuration (clés triées)."""
    canonical = json.dumps(document, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_generation_config(document: Dict[str, Any]) -> GenerationConfig:
    """Construit et valide un GenerationConfig."""
    config = build_dataclass(GenerationConfig, document)
    if not config.domains:
        raise ConfigurationError("domains: au moins un domaine est requis")
    seen = set()
    for index, spec in enumerate(config.domains):
        try:
            spec.validate()
        except DataValidationError as e:
            raise ConfigurationError(f"domains[{index}].{e}")
        if spec.domain_id in seen:
            raise ConfigurationError(f"domains[{index}].domain_id: doublon {spec.domain_id!r}")
        seen.add(spec.domain_id)
    if any(f < 0 for f in config.split) or abs(sum(config.split) - 1.0) > 1e-9:
        raise ConfigurationError(f"split: fractions positives de somme 1 attendues, trouvé {config.split}")
    return config


def load_generation_config(path: Union[str, Path]) -> GenerationConfig:
    return parse_generation_config(read_yaml(path))


def _validated(config: ExperimentConfig, path: str) -> ExperimentConfig:
    try:
        config.validate()
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}.{e}" if path else str(e))
    return config


def parse_experiment_plan(document: Dict[str, Any]) -> ExperimentPlan:
    """
    Construit un ExperimentPlan.

    Structure : les champs d'ExperimentConfig au premier niveau (valeurs
    communes), une liste optionnelle ``models`` de surcharges par modèle, et une
    section optionnelle ``protocol`` (kind: single | ablation | dg_grid).

    Raises:
        ConfigurationError: Le message contient le chemin du champ
    """
    document = dict(document)
    models = document.pop("models", None)
    protocol = document.pop("protocol", None) or {}
    baseline_model = document.pop("baseline_model", None)
    if not isinstance(protocol, dict):
        raise ConfigurationError("protocol: mapping attendu")
    kind = protocol.get("kind", "single")
    if kind not in PROTOCOL_KINDS:
        raise ConfigurationError(f"protocol.kind: attendu {PROTOCOL_KINDS}, trouvé {kind!r}")
    unknown = sorted(set(protocol) - {"kind", "fractions", "domains"})
    if unknown:
        raise ConfigurationError(f"protocol.{unknown[0]}: clé inconnue")

    name = document.get("name", "")
    if kind == "dg_grid":
        domains = protocol.get("domains")
        if not isinstance(domains, list) or not domains:
            raise ConfigurationError("protocol.domains: liste de domaines requise")
        base = build_dataclass(ExperimentConfig, {"source_domains": domains[:1], **document})
        configs = [_validated(c, "") for c in generalization_grid(base, domains)]
    else:
        entries = models if models is not None else [{}]
        if not isinstance(entries, list) or not entries:
            raise ConfigurationError("models: liste non vide attendue")
        configs = []
        for index, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise ConfigurationError(f"models[{index}]: mapping attendu")
            merged = _merge(document, entry)
            config = build_dataclass(ExperimentConfig, merged, f"models[{index}]" if models else "")
            configs.append(_validated(config, f"models[{index}]" if models else ""))
        if kind == "ablation":
            configs = _expand_ablation(configs, protocol.get("fractions"))

    names = [c.name for c in configs]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise ConfigurationError(f"models: identifiants de modèle dupliqués {duplicates}")
    if baseline_model is None:
        baseline_model = next((c.name for c in configs if c.model_variant == BASELINE), None)
    elif baseline_model not in names:
        raise ConfigurationError(f"baseline_model: modèle inconnu {baseline_model!r}")

    return ExperimentPlan(name=name or configs[0].name, configs=configs, baseline_model=baseline_model,
                          protocol=kind, raw=document)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Fusion récursive de deux mappings (override prioritaire)."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _expand_ablation(configs: List[ExperimentConfig], fractions) -> List[ExperimentConfig]:
    if not isinstance(fractions, list) or not fractions:
        raise ConfigurationError("protocol.fractions: liste de fractions requise")
    try:
        fractions = [float(f) for f in fractions]
    except (TypeError, ValueError):
        raise ConfigurationError(f"protocol.fractions: nombres attendus, trouvé {fractions}")
    expanded = []
    for config in configs:
        if not config.is_contrastive:
            expanded.append(config)
            continue
        for variant in ablation_schedule(config, fractions):
            expanded.append(replace(variant, name=f"{config.name}_f{variant.unlabeled_fraction:g}"))
    return expanded


def load_experiment_plan(path: Union[str, Path]) -> ExperimentPlan:
    return parse_experiment_plan(read_yaml(path))
