"""
Catalogue des domaines avec chargement paresseux et comptage des accès.

Le comptage permet de vérifier qu'un entraînement Baseline ne lit jamais de
volumes non étiquetés et qu'un entraînement en généralisation de domaine ne
lit aucun fichier du domaine cible.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..core.exceptions import DatasetIOError
from ..core.models import DatasetSplit, Volume
from .storage import load_dataset


logger = logging.getLogger(__name__)

LabeledSample = Tuple[Volume, int]


class DomainCatalog:
    """Accès aux splits de plusieurs domaines, chargés à la demande."""

    def __init__(self, root: Optional[Union[str, Path]] = None,
                 splits: Optional[Dict[str, DatasetSplit]] = None):
        """
        Args:
            root: Répertoire contenant un sous-répertoire par domaine
            splits: Splits déjà en mémoire, indexés par domaine
        """
        self.root = Path(root) if root is not None else None
        self._cache: Dict[str, DatasetSplit] = dict(splits or {})
        self._counts: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))

    @classmethod
    def from_splits(cls, splits: Dict[str, DatasetSplit]) -> "DomainCatalog":
        return cls(splits=splits)

    def available_domains(self) -> List[str]:
        """Domaines connus, sans les charger."""
        domains = set(self._cache)
        if self.root is not None and self.root.is_dir():
            domains |= {p.name for p in self.root.iterdir() if (p / "train").is_dir()}
        return sorted(domains)

    def _split(self, domain_id: str) -> DatasetSplit:
        if domain_id not in self._cache:
            if self.root is None:
                raise DatasetIOError(f"Domaine inconnu: {domain_id}")
            directory = self.root / domain_id
            if not directory.is_dir():
                raise DatasetIOError(f"Domaine {domain_id} introuvable dans {self.root}")
            self._cache[domain_id] = load_dataset(directory)
            self._counts[domain_id]["file_loads"] += 1
        return self._cache[domain_id]

    def labeled_samples(self, domain_id: str, split: str = "train") -> List[LabeledSample]:
        """Coupes annotées (volume, indice) d'un split ; compte une lecture d'étiquettes."""
        volumes = self._split(domain_id).get(split)
        self._counts[domain_id]["label_reads"] += 1
        return [(volume, index) for volume in volumes if volume.labels is not None
                for index in volume.labeled_slice_indices]

    def unlabeled_volumes(self, domain_id: str, split: str = "train") -> List[Volume]:
        """Volumes utilisés comme données non étiquetées ; compte une lecture non étiquetée."""
        volumes = self._split(domain_id).get(split)
        self._counts[domain_id]["unlabeled_reads"] += 1
        return list(volumes)

    def evaluation_volumes(self, domain_id: str, split: str = "test") -> List[Volume]:
        """Volumes d'évaluation (vérité terrain utilisée uniquement pour les métriques)."""
        volumes = self._split(domain_id).get(split)
        self._counts[domain_id]["evaluation_reads"] += 1
        return list(volumes)

    def read_counts(self) -> Dict[str, Dict[str, int]]:
        """Compteurs d'accès par domaine."""
        return {domain: dict(counts) for domain, counts in sorted(self._counts.items())}

    def reads_for(self, domain_id: str) -> int:
        """Nombre total d'accès enregistrés pour un domaine."""
        return sum(self._counts.get(domain_id, {}).values())

    def reset_counts(self) -> None:
        self._counts.clear()

    def merge_counts(self, counts: Dict[str, Dict[str, int]]) -> None:
        """Ajoute des compteurs produits ailleurs (processus de travail)."""
        for domain, values in counts.items():
            for name, value in values.items():
                self._counts[domain][name] += int(value)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_counts"] = {d: dict(c) for d, c in self._counts.items()}
        return state

    def __setstate__(self, state):
        counts = state.pop("_counts")
        self.__dict__.update(state)
        self._counts = defaultdict(lambda: defaultdict(int))
        for domain, values in counts.items():
            self._counts[domain].update(values)
