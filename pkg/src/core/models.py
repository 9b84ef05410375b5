"""
Modèles de données du framework SegCLR.
"""
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, DataValidationError


# Ordre global des classes, fixe pour tout le framework
GLOBAL_CLASSES: Tuple[str, ...] = ("IRF", "SRF", "PED", "SHRM")

# Variantes de modèle
BASELINE = "baseline_unet"
SEGCLR = "segclr"
SIMCLR_PRETRAIN = "simclr_pretrain"
SIMSIAM_PRETRAIN = "simsiam_pretrain"
UPPER_BOUND = "upper_bound"
MODEL_VARIANTS = (BASELINE, SEGCLR, SIMCLR_PRETRAIN, SIMSIAM_PRETRAIN, UPPER_BOUND)

# Stratégies de paires et têtes de projection
PAIRING_STRATEGIES = ("a", "s", "s+a")
PROJECTION_KINDS = ("pool", "ch")
CONTRASTIVE_KINDS = ("ntxent", "simsiam")


# ---------------------------------------------------------------------------
# Données synthétiques
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AppearanceSpec:
    """Paramètres d'apparence (appareil d'acquisition)."""
    noise_std: float = 0.05
    contrast_gain: float = 1.0
    blur_sigma: float = 0.0


@dataclass(frozen=True)
class ContentSpec:
    """Paramètres de contenu (maladie)."""
    lesion_density: float = 3.0
    lesion_scale: float = 5.0


@dataclass(frozen=True)
class DomainSpec:
    """Description d'un domaine synthétique."""
    domain_id: str
    n_volumes: int = 20
    slices_per_volume: int = 8
    slice_shape: Tuple[int, int] = (64, 64)
    in_plane_resolution: Tuple[float, float] = (32.0, 80.0)
    slice_spacing: float = 111.0
    class_set: Tuple[str, ...] = GLOBAL_CLASSES
    appearance: AppearanceSpec = field(default_factory=AppearanceSpec)
    content: ContentSpec = field(default_factory=ContentSpec)
    labeled_slices_per_volume: Optional[int] = None

    def validate(self) -> None:
        """
        Vérifie les invariants du domaine.

        Raises:
            DataValidationError: Le message nomme le champ invalide
        """
        if not self.domain_id or not str(self.domain_id).strip():
            raise DataValidationError("domain_id: doit être une chaîne non vide")
        if self.n_volumes < 1:
            raise DataValidationError(f"n_volumes: doit être positif, trouvé {self.n_volumes}")
        if self.slices_per_volume < 1:
            raise DataValidationError(
                f"slices_per_volume: doit être positif, trouvé {self.slices_per_volume}")
        if len(self.slice_shape) != 2 or min(self.slice_shape) < 16:
            raise DataValidationError(
                f"slice_shape: les dimensions doivent être >= 16, trouvé {self.slice_shape}")
        if len(self.in_plane_resolution) != 2 or min(self.in_plane_resolution) <= 0:
            raise DataValidationError(
                f"in_plane_resolution: doit être strictement positive, trouvé {self.in_plane_resolution}")
        if not self.slice_spacing > 0:
            raise DataValidationError(
                f"slice_spacing: doit être strictement positif, trouvé {self.slice_spacing}")
        if not self.class_set:
            raise DataValidationError("class_set: ne peut pas être vide")
        unknown = [name for name in self.class_set if name not in GLOBAL_CLASSES]
        if unknown:
            raise DataValidationError(f"class_set: classes inconnues {unknown}")
        if len(set(self.class_set)) != len(self.class_set):
            raise DataValidationError(f"class_set: classes dupliquées dans {self.class_set}")
        if self.appearance.noise_std < 0:
            raise DataValidationError("appearance.noise_std: doit être >= 0")
        if self.appearance.contrast_gain <= 0:
            raise DataValidationError("appearance.contrast_gain: doit être > 0")
        if self.appearance.blur_sigma < 0:
            raise DataValidationError("appearance.blur_sigma: doit être >= 0")
        if self.content.lesion_density < 0:
            raise DataValidationError("content.lesion_density: doit être >= 0")
        if self.content.lesion_scale <= 0:
            raise DataValidationError("content.lesion_scale: doit être > 0")
        if self.labeled_slices_per_volume is not None and not (
                0 <= self.labeled_slices_per_volume <= self.slices_per_volume):
            raise DataValidationError(
                "labeled_slices_per_volume: doit être dans [0, slices_per_volume]")

    @property
    def ordered_classes(self) -> Tuple[str, ...]:
        """Classes du domaine dans l'ordre global."""
        return tuple(name for name in GLOBAL_CLASSES if name in self.class_set)


@dataclass(eq=False)
class Volume:
    """Volume 3D [coupe, hauteur, largeur] avec étiquettes optionnelles."""
    voxels: np.ndarray
    labels: Optional[np.ndarray]
    labeled_slice_indices: Tuple[int, ...]
    resolution: Tuple[float, float, float]
    domain_id: str
    volume_id: str
    class_set: Tuple[str, ...] = GLOBAL_CLASSES

    def __post_init__(self):
        self.labeled_slice_indices = tuple(int(i) for i in self.labeled_slice_indices)
        self.resolution = tuple(float(r) for r in self.resolution)
        self.class_set = tuple(self.class_set)

    def validate(self) -> None:
        """Vérifie les invariants du volume."""
        if self.voxels.ndim != 3:
            raise DataValidationError(
                f"voxels: tableau 3D attendu pour {self.volume_id}, trouvé {self.voxels.ndim}D")
        if len(self.resolution) != 3 or min(self.resolution) <= 0:
            raise DataValidationError(f"resolution: doit être strictement positive ({self.volume_id})")
        if any(i < 0 or i >= self.n_slices for i in self.labeled_slice_indices):
            raise DataValidationError(
                f"labeled_slice_indices: hors de [0, {self.n_slices}) pour {self.volume_id}")
        if self.labels is not None:
            expected = (self.n_slices, len(self.class_set)) + self.voxels.shape[1:]
            if self.labels.shape != expected:
                raise DataValidationError(
                    f"labels: forme {self.labels.shape} attendue {expected} ({self.volume_id})")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataValidationError(f"labels: valeurs non binaires ({self.volume_id})")

    @property
    def n_slices(self) -> int:
        return int(self.voxels.shape[0])

    @property
    def slice_shape(self) -> Tuple[int, int]:
        return int(self.voxels.shape[1]), int(self.voxels.shape[2])

    @property
    def pixel_area_um2(self) -> float:
        """Surface d'un pixel dans le plan (µm²)."""
        return self.resolution[0] * self.resolution[1]

    @property
    def slice_spacing_um(self) -> float:
        return self.resolution[2]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None and len(self.labeled_slice_indices) > 0

    def equals(self, other: "Volume") -> bool:
        """Égalité bit à bit des tableaux et des métadonnées."""
        if not isinstance(other, Volume):
            return False
        same_meta = (
            self.labeled_slice_indices == other.labeled_slice_indices
            and self.resolution == other.resolution
            and self.domain_id == other.domain_id
            and self.volume_id == other.volume_id
            and self.class_set == other.class_set
        )
        if not same_meta or self.voxels.dtype != other.voxels.dtype:
            return False
        if not np.array_equal(self.voxels, other.voxels):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass
class DatasetSplit:
    """Partition train / val / test au niveau des volumes."""
    train: List[Volume] = field(default_factory=list)
    val: List[Volume] = field(default_factory=list)
    test: List[Volume] = field(default_factory=list)

    SPLIT_NAMES = ("train", "val", "test")

    def get(self, name: str) -> List[Volume]:
        if name not in self.SPLIT_NAMES:
            raise DataValidationError(f"Split inconnu: {name}")
        return getattr(self, name)

    def validate(self) -> None:
        """Vérifie que les splits sont disjoints."""
        seen: Dict[str, str] = {}
        for name in self.SPLIT_NAMES:
            for volume in self.get(name):
                if volume.volume_id in seen:
                    raise DataValidationError(
                        f"Le volume {volume.volume_id} apparaît dans {seen[volume.volume_id]} et {name}")
                seen[volume.volume_id] = name

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass
class SliceBatch:
    """Pile de coupes 2D avec provenance et étiquettes optionnelles (ordre global des classes)."""
    images: np.ndarray
    volume_ids: Tuple[str, ...]
    slice_indices: Tuple[int, ...]
    domain_ids: Tuple[str, ...]
    labels: Optional[np.ndarray] = None
    class_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.images.shape[0])
        if not (len(self.volume_ids) == len(self.slice_indices) == len(self.domain_ids) == n):
            raise DataValidationError("SliceBatch: provenance incohérente avec le nombre d'images")
        if self.labels is not None and self.labels.shape[0] != n:
            raise DataValidationError("SliceBatch: labels incohérents avec le nombre d'images")

    def __len__(self) -> int:
        return int(self.images.shape[0])


# ---------------------------------------------------------------------------
# Paires contrastives
# ---------------------------------------------------------------------------

def _check_unit_interval(**values: float) -> None:
    for name, value in values.items():
        if not 0.0 <= value <= 1.0:
            raise DataValidationError(f"{name}: doit être dans [0, 1], trouvé {value}")


@dataclass(frozen=True)
class AugmentParams:
    """Paramètres d'augmentation pour P_a."""
    p_hflip: float = 0.5
    max_translate_frac: float = 0.25
    max_zoom_in_frac: float = 0.5
    max_brightness_frac: float = 0.6
    max_jitter_frac: float = 0.2

    def __post_init__(self):
        _check_unit_interval(**asdict(self))

    @classmethod
    def none(cls) -> "AugmentParams":
        """Paramètres neutres (transformation identité)."""
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SlicePairingParams:
    """Paramètres de l'échantillonnage gaussien de coupes voisines (P_s)."""
    sigma_um: float = 250.0
    slice_spacing_um: float = 111.0

    def __post_init__(self):
        if not self.sigma_um > 0:
            raise DataValidationError(f"sigma_um: doit être strictement positif, trouvé {self.sigma_um}")
        if not self.slice_spacing_um > 0:
            raise DataValidationError(
                f"slice_spacing_um: doit être strictement positif, trouvé {self.slice_spacing_um}")

    @property
    def sigma_slices(self) -> float:
        """Écart-type exprimé en nombre de coupes."""
        return self.sigma_um / self.slice_spacing_um


@dataclass
class PairBatch:
    """Deux vues alignées ; l'élément k des deux vues provient du même échantillon."""
    view_a: SliceBatch
    view_b: SliceBatch

    def __post_init__(self):
        if len(self.view_a) != len(self.view_b) or self.view_a.images.shape != self.view_b.images.shape:
            raise DataValidationError("PairBatch: les deux vues doivent avoir la même forme")
        if self.view_a.volume_ids != self.view_b.volume_ids:
            raise DataValidationError("PairBatch: les deux vues doivent provenir des mêmes volumes")

    @property
    def domain_ids(self) -> Tuple[str, ...]:
        return self.view_a.domain_ids

    def __len__(self) -> int:
        return len(self.view_a)


# ---------------------------------------------------------------------------
# Modèle, pertes et expérience
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchitectureSpec:
    """Description de l'architecture UNet et de la tête contrastive."""
    depth: int = 2
    base_channels: int = 8
    n_classes: int = len(GLOBAL_CLASSES)
    input_shape: Tuple[int, int] = (64, 64)
    dropout_p: float = 0.5
    head_kind: str = "ch"
    mlp_units: int = 128
    groupnorm_groups: int = 4
    in_channels: int = 1

    def validate(self) -> None:
        """Vérifie les invariants de l'architecture."""
        if self.depth < 2:
            raise DataValidationError(f"arch.depth: doit être >= 2, trouvé {self.depth}")
        if self.n_classes < 1:
            raise DataValidationError(f"arch.n_classes: doit être >= 1, trouvé {self.n_classes}")
        factor = 2 ** self.depth
        if any(dim % factor for dim in self.input_shape):
            raise DataValidationError(
                f"arch.input_shape: {self.input_shape} doit être divisible par 2^depth={factor}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise DataValidationError(f"arch.dropout_p: doit être dans [0, 1), trouvé {self.dropout_p}")
        if self.head_kind not in PROJECTION_KINDS:
            raise DataValidationError(f"arch.head_kind: attendu {PROJECTION_KINDS}, trouvé {self.head_kind}")
        if self.groupnorm_groups < 1 or self.base_channels % self.groupnorm_groups:
            raise DataValidationError(
                "arch.groupnorm_groups: doit diviser base_channels "
                f"({self.base_channels} / {self.groupnorm_groups})")
        if self.mlp_units % self.groupnorm_groups:
            raise DataValidationError("arch.mlp_units: doit être divisible par groupnorm_groups")

    @property
    def bottleneck_shape(self) -> Tuple[int, int]:
        factor = 2 ** self.depth
        return self.input_shape[0] // factor, self.input_shape[1] // factor

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2 ** self.depth

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["input_shape"] = list(self.input_shape)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchitectureSpec":
        values = dict(data)
        values["input_shape"] = tuple(values.get("input_shape", (64, 64)))
        return cls(**values)


@dataclass(frozen=True)
class LossConfig:
    """Hyperparamètres des pertes."""
    epsilon: float = 1e-12
    tau: float = 0.5
    lambda_sup: float = 20.0
    contrastive_kind: str = "ntxent"
    include_positive: bool = False
    contrastive_weight: float = 1.0

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError(f"loss.epsilon: doit être > 0, trouvé {self.epsilon}")
        if not self.tau > 0:
            raise ConfigurationError(f"loss.tau: doit être > 0, trouvé {self.tau}")
        if self.lambda_sup < 0:
            raise ConfigurationError(f"loss.lambda_sup: doit être >= 0, trouvé {self.lambda_sup}")
        if self.contrastive_kind not in CONTRASTIVE_KINDS:
            raise ConfigurationError(
                f"loss.contrastive_kind: attendu {CONTRASTIVE_KINDS}, trouvé {self.contrastive_kind}")
        if self.contrastive_weight < 0:
            raise ConfigurationError("loss.contrastive_weight: doit être >= 0")


@dataclass(frozen=True)
class OptimizerConfig:
    """Configuration de l'optimiseur."""
    name: str = "adam"
    lr: float = 1e-3

    def validate(self) -> None:
        if self.name != "adam":
            raise ConfigurationError(f"optimizer.name: seul 'adam' est supporté, trouvé {self.name}")
        if not self.lr > 0:
            raise ConfigurationError(f"optimizer.lr: doit être > 0, trouvé {self.lr}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Description déclarative d'une expérience."""
    name: str
    source_domains: Tuple[str, ...]
    target_domains: Tuple[str, ...] = ()
    unlabeled_fraction: float = 1.0
    model_variant: str = SEGCLR
    pairing: str = "a"
    projection: str = "ch"
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 30
    pretrain_epochs: Optional[int] = None
    batch_size_sup: int = 8
    batch_size_con: int = 8
    seeds: Tuple[int, ...] = (0,)
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    augment: AugmentParams = field(default_factory=AugmentParams)
    sigma_um: float = 250.0
    augment_supervised: bool = False
    threshold: float = 0.5
    evaluation_domains: Tuple[str, ...] = ()
    device: str = "cpu"

    def validate(self) -> None:
        """
        Vérifie la cohérence de la configuration.

        Raises:
            ConfigurationError: Le message contient le chemin du champ
        """
        if not self.name:
            raise ConfigurationError("name: ne peut pas être vide")
        if self.model_variant not in MODEL_VARIANTS:
            raise ConfigurationError(
                f"model_variant: attendu {MODEL_VARIANTS}, trouvé {self.model_variant}")
        if self.model_variant == UPPER_BOUND:
            if not self.target_domains:
                raise ConfigurationError("target_domains: upper_bound requiert un domaine cible étiqueté")
        elif not self.source_domains:
            raise ConfigurationError("source_domains: au moins un domaine source étiqueté est requis")
        overlap = set(self.source_domains) & set(self.target_domains)
        if overlap:
            raise ConfigurationError(f"target_domains: domaines aussi déclarés source {sorted(overlap)}")
        if not 0.0 <= self.unlabeled_fraction <= 1.0:
            raise ConfigurationError(
                f"unlabeled_fraction: doit être dans [0, 1], trouvé {self.unlabeled_fraction}")
        if self.pairing not in PAIRING_STRATEGIES:
            raise ConfigurationError(f"pairing: attendu {PAIRING_STRATEGIES}, trouvé {self.pairing}")
        if self.projection not in PROJECTION_KINDS:
            raise ConfigurationError(f"projection: attendu {PROJECTION_KINDS}, trouvé {self.projection}")
        if self.projection != self.arch.head_kind:
            raise ConfigurationError("arch.head_kind: doit correspondre à projection")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs: doit être >= 1, trouvé {self.epochs}")
        if self.pretrain_epochs is not None and self.pretrain_epochs < 1:
            raise ConfigurationError("pretrain_epochs: doit être >= 1")
        if self.batch_size_sup < 1 or self.batch_size_con < 2:
            raise ConfigurationError("batch_size_sup >= 1 et batch_size_con >= 2 sont requis")
        if not self.seeds:
            raise ConfigurationError("seeds: au moins une graine est requise")
        if not self.sigma_um > 0:
            raise ConfigurationError(f"sigma_um: doit être > 0, trouvé {self.sigma_um}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold: doit être dans (0, 1), trouvé {self.threshold}")
        self.loss.validate()
        self.optimizer.validate()
        try:
            self.arch.validate()
        except DataValidationError as e:
            raise ConfigurationError(str(e))
        if self.arch.n_classes != len(GLOBAL_CLASSES):
            raise ConfigurationError(
                f"arch.n_classes: doit valoir {len(GLOBAL_CLASSES)} (classes {GLOBAL_CLASSES})")

    @property
    def is_contrastive(self) -> bool:
        return self.model_variant in (SEGCLR, SIMCLR_PRETRAIN, SIMSIAM_PRETRAIN)

    @property
    def is_pretrain(self) -> bool:
        return self.model_variant in (SIMCLR_PRETRAIN, SIMSIAM_PRETRAIN)

    @property
    def contrastive_kind(self) -> str:
        """Type de perte contrastive effectivement utilisé."""
        if self.model_variant == SIMCLR_PRETRAIN:
            return "ntxent"
        if self.model_variant == SIMSIAM_PRETRAIN:
            return "simsiam"
        return self.loss.contrastive_kind

    @property
    def needs_predictor(self) -> bool:
        return self.is_contrastive and self.contrastive_kind == "simsiam"

    @property
    def labeled_domains(self) -> Tuple[str, ...]:
        """Domaines dont les étiquettes sont lues pendant l'entraînement."""
        return self.target_domains if self.model_variant == UPPER_BOUND else self.source_domains

    @property
    def uses_target_pool(self) -> bool:
        """Vrai si des volumes non étiquetés du domaine cible sont lus."""
        if self.model_variant in (BASELINE, UPPER_BOUND):
            return False
        return bool(self.target_domains) and self.unlabeled_fraction > 0

    @property
    def domains_to_evaluate(self) -> Tuple[str, ...]:
        if self.evaluation_domains:
            return self.evaluation_domains
        ordered = list(self.source_domains)
        ordered += [d for d in self.target_domains if d not in ordered]
        return tuple(ordered)


@dataclass
class EpochRecord:
    """Résumé d'une époque d'entraînement."""
    epoch: int
    phase: str
    loss_sup: Optional[float]
    loss_con_source: Optional[float]
    loss_con_target: Optional[float]
    loss_total: float
    val_dice: Optional[float]
    steps: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainHistory:
    """Historique d'entraînement (une entrée par époque terminée)."""
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    phase_epochs: Dict[str, int] = field(default_factory=dict)
    checkpoints: List[str] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)
        self.phase_epochs[record.phase] = self.phase_epochs.get(record.phase, 0) + 1

    def for_phase(self, phase: str) -> List[EpochRecord]:
        return [r for r in self.records if r.phase == phase]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records])


@dataclass(frozen=True)
class MetricRecord:
    """Une mesure (coupe, classe, modèle, graine) de Dice et UVD."""
    model_id: str
    seed: int
    domain_id: str
    volume_id: str
    slice_index: int
    class_name: str
    dice: float
    uvd: float

    CSV_COLUMNS = ("model_id", "seed", "domain", "volume", "slice", "class", "dice", "uvd")

    def to_row(self) -> Dict[str, Any]:
        return dict(zip(self.CSV_COLUMNS, (
            self.model_id, self.seed, self.domain_id, self.volume_id,
            self.slice_index, self.class_name, self.dice, self.uvd)))


@dataclass
class AnalysisResult:
    """Résultat d'analyse : tableau + résumé."""
    data: pd.DataFrame
    summary: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SignificanceResult:
    """Test t apparié entre deux séries de valeurs."""
    p_value: float
    tier: str
    statistic: float
    mean_difference: float
    n: int


@dataclass
class RankTable:
    """Rangs moyens par modèle (global et par métrique)."""
    data: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    def rank_of(self, model_id: str) -> float:
        return float(self.data.set_index("model_id").loc[model_id, "rank"])

    @property
    def model_ids(self) -> List[str]:
        return self.data["model_id"].tolist()


@dataclass
class RunManifest:
    """Manifeste d'une exécution de cmd_train."""
    config_hash: str
    seeds: List[int]
    artifacts: Dict[str, Dict[str, str]]
    started_at: str
    finished_at: str
    version: str
    read_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    config_path: Optional[str] = None
    data_dir: Optional[str] = None
    models: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    baseline_model: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})
