"""
Persistance des jeux de données : manifeste texte + charge binaire par volume.

Organisation d'un répertoire de jeu de données::

    <directory>/train/manifest.txt
    <directory>/train/vol_<id>.img   float32 little-endian, [coupe, h, w]
    <directory>/train/vol_<id>.lbl   uint8, [coupe, classe, h, w]
    <directory>/val/...
    <directory>/test/...
"""
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..core.exceptions import DatasetIOError, DataValidationError
from ..core.models import DatasetSplit, Volume


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
MANIFEST_FORMAT = "segclr-dataset"
MANIFEST_VERSION = "1"
VOXEL_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("u1")

_SAFE_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _format_ints(values) -> str:
    return " ".join(str(int(v)) for v in values)


class DatasetStorage:
    """Lecture et écriture des splits de jeux de données."""

    def save_dataset(self, split: DatasetSplit, directory: Union[str, Path]) -> Path:
        """
        Écrit un DatasetSplit sur disque.

        Args:
            split: Splits à sauvegarder
            directory: Répertoire de destination (créé si besoin)

        Returns:
            Chemin du répertoire

        Raises:
            DatasetIOError: Si l'écriture échoue
        """
        root = Path(directory)
        split.validate()
        try:
            for name in DatasetSplit.SPLIT_NAMES:
                self._save_split(name, split.get(name), root / name)
        except OSError as e:
            raise DatasetIOError(f"Erreur lors de l'écriture du jeu de données {root}: {e}")

        logger.info(f"Jeu de données sauvegardé dans {root} (train/val/test = {split.sizes})")
        return root

    def _save_split(self, name: str, volumes: List[Volume], directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        lines = [
            f"format = {MANIFEST_FORMAT}",
            f"version = {MANIFEST_VERSION}",
            f"split = {name}",
            f"volumes = {len(volumes)}",
        ]
        for volume in volumes:
            volume.validate()
            if not _SAFE_ID.match(volume.volume_id):
                raise DataValidationError(f"volume_id non utilisable comme nom de fichier: {volume.volume_id!r}")
            voxels_file = f"vol_{volume.volume_id}.img"
            labels_file = f"vol_{volume.volume_id}.lbl"
            volume.voxels.astype(VOXEL_DTYPE).tofile(directory / voxels_file)
            has_labels = volume.labels is not None
            if has_labels:
                volume.labels.astype(LABEL_DTYPE).tofile(directory / labels_file)
            lines += [
                "",
                "[volume]",
                f"volume_id = {volume.volume_id}",
                f"domain_id = {volume.domain_id}",
                f"shape = {_format_ints(volume.voxels.shape)}",
                f"resolution = {_format_floats(volume.resolution)}",
                f"class_set = {' '.join(volume.class_set)}",
                f"labeled_slices = {_format_ints(volume.labeled_slice_indices)}",
                f"labels = {'yes' if has_labels else 'no'}",
                f"voxels_file = {voxels_file}",
                f"labels_file = {labels_file if has_labels else ''}",
            ]
        (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def load_dataset(self, directory: Union[str, Path]) -> DatasetSplit:
        """
        Charge un DatasetSplit depuis le disque.

        Raises:
            DatasetIOError: Manifeste absent ou corrompu, charge binaire incohérente
        """
        root = Path(directory)
        if not root.is_dir():
            raise DatasetIOError(f"Le répertoire {root} n'existe pas")

        parts = {name: self._load_split(name, root / name) for name in DatasetSplit.SPLIT_NAMES}
        split = DatasetSplit(**parts)
        try:
            split.validate()
        except DataValidationError as e:
            raise DatasetIOError(f"Jeu de données incohérent dans {root}: {e}")

        logger.info(f"Jeu de données chargé depuis {root} (train/val/test = {split.sizes})")
        return split

    def _load_split(self, name: str, directory: Path) -> List[Volume]:
        manifest = directory / MANIFEST_NAME
        if not manifest.exists():
            raise DatasetIOError(f"Manifeste absent: {manifest}")
        header, records = self.parse_manifest(manifest.read_text(encoding="utf-8"), manifest)

        if header.get("format") != MANIFEST_FORMAT:
            raise DatasetIOError(f"Format de manifeste inconnu dans {manifest}: {header.get('format')!r}")
        if header.get("split") != name:
            raise DatasetIOError(f"Le manifeste {manifest} décrit le split {header.get('split')!r}, attendu {name!r}")
        try:
            expected = int(header.get("volumes", ""))
        except ValueError:
            raise DatasetIOError(f"Champ 'volumes' invalide dans {manifest}")
        if expected != len(records):
            raise DatasetIOError(
                f"Le manifeste {manifest} annonce {expected} volumes mais en décrit {len(records)}")

        return [self._load_volume(record, directory, manifest) for record in records]

    @staticmethod
    def parse_manifest(text: str, source: Path) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
        """Découpe un manifeste en en-tête et enregistrements [volume]."""
        header: Dict[str, str] = {}
        records: List[Dict[str, str]] = []
        current: Optional[Dict[str, str]] = None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "[volume]":
                current = {}
                records.append(current)
                continue
            if "=" not in line:
                raise DatasetIOError(f"Ligne {number} invalide dans {source}: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            (header if current is None else current)[key] = value
        return header, records

    def _load_volume(self, record: Dict[str, str], directory: Path, manifest: Path) -> Volume:
        try:
            volume_id = record["volume_id"]
            shape = tuple(int(v) for v in record["shape"].split())
            resolution = tuple(float(v) for v in record["resolution"].split())
            class_set = tuple(record["class_set"].split())
            labeled = tuple(int(v) for v in record["labeled_slices"].split())
            has_labels = record["labels"] == "yes"
            domain_id = record["domain_id"]
            voxels_file = record["voxels_file"]
            labels_file = record.get("labels_file", "")
        except (KeyError, ValueError) as e:
            raise DatasetIOError(f"Enregistrement de volume corrompu dans {manifest}: {e}")
        if len(shape) != 3 or len(resolution) != 3:
            raise DatasetIOError(f"Forme ou résolution invalide pour {volume_id} dans {manifest}")

        voxels = self._read_payload(directory / voxels_file, VOXEL_DTYPE, shape, volume_id)
        labels = None
        if has_labels:
            label_shape = (shape[0], len(class_set), shape[1], shape[2])
            labels = self._read_payload(directory / labels_file, LABEL_DTYPE, label_shape, volume_id)

        volume = Volume(
            voxels=voxels.astype(np.float32, copy=False),
            labels=labels,
            labeled_slice_indices=labeled,
            resolution=resolution,
            domain_id=domain_id,
            volume_id=volume_id,
            class_set=class_set,
        )
        try:
            volume.validate()
        except DataValidationError as e:
            raise DatasetIOError(f"Volume {volume_id} invalide dans {manifest}: {e}")
        return volume

    @staticmethod
    def _read_payload(path: Path, dtype: np.dtype, shape: Tuple[int, ...], volume_id: str) -> np.ndarray:
        if not path.exists():
            raise DatasetIOError(f"Fichier binaire absent pour {volume_id}: {path}")
        data = np.fromfile(path, dtype=dtype)
        expected = int(np.prod(shape))
        if data.size != expected:
            raise DatasetIOError(
                f"Incohérence de forme pour {volume_id}: le manifeste annonce {shape} "
                f"({expected} éléments) mais {path.name} en contient {data.size}")
        return data.reshape(shape)


_storage = DatasetStorage()


def save_dataset(split: DatasetSplit, directory: Union[str, Path]) -> Path:
    """Raccourci vers DatasetStorage.save_dataset."""
    return _storage.save_dataset(split, directory)


def load_dataset(directory: Union[str, Path]) -> DatasetSplit:
    """Raccourci vers DatasetStorage.load_dataset."""
    return _storage.load_dataset(directory)
