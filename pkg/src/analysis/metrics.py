"""
Métriques par coupe et par classe : Dice (%) et UVD (fL).
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from ..core.exceptions import EvaluationError
from ..core.models import GLOBAL_CLASSES, MetricRecord, Volume
from ..modeling.state import ModelState, forward_segment


logger = logging.getLogger(__name__)

SORT_KEYS = ["model_id", "seed", "domain", "volume", "slice", "class"]


def _check_masks(pred_mask: np.ndarray, gt_mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise EvaluationError(f"Formes de masques incompatibles: {pred.shape} / {gt.shape}")
    return pred, gt


def dice_score(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """
    Dice en pourcentage ; deux masques vides donnent un score parfait (100).

    Raises:
        EvaluationError: Si les formes diffèrent
    """
    pred, gt = _check_masks(pred_mask, gt_mask)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * int(np.logical_and(pred, gt).sum()) / total


def uvd(pred_mask: np.ndarray, gt_mask: np.ndarray, pixel_area_um2: float, slice_spacing_um: float) -> float:
    """
    Volume d'erreur (FP + FN) en femtolitres (µm³).

    Chaque pixel représente pixel_area_um2 * slice_spacing_um µm³.
    """
    pred, gt = _check_masks(pred_mask, gt_mask)
    if not (pixel_area_um2 > 0 and slice_spacing_um > 0):
        raise EvaluationError("uvd: la géométrie doit être strictement positive")
    errors = int(np.logical_xor(pred, gt).sum())
    return errors * float(pixel_area_um2) * float(slice_spacing_um)


@contextmanager
def evaluation_mode(state: ModelState):
    """Passe le modèle en mode évaluation (dropout désactivé) le temps du bloc."""
    was_training = state.training
    state.eval()
    try:
        with torch.no_grad():
            yield state
    finally:
        state.train(was_training)


def predict_slices(state: ModelState, volume: Volume, indices: Sequence[int],
                   batch_size: int = 16) -> np.ndarray:
    """Probabilités [k, C, h, w] pour les coupes ``indices`` d'un volume (mode évaluation)."""
    outputs = []
    with evaluation_mode(state):
        for start in range(0, len(indices), batch_size):
            chunk = list(indices[start:start + batch_size])
            try:
                probabilities = forward_segment(state, volume.voxels[chunk])
            except Exception as e:
                raise EvaluationError(f"Prédiction impossible pour {volume.volume_id}: {e}")
            outputs.append(probabilities.detach().cpu().double().numpy())
    if not outputs:
        return np.zeros((0, state.arch.n_classes) + volume.slice_shape)
    return np.concatenate(outputs)


def _volume_classes(volume: Volume) -> List[Tuple[str, int, int]]:
    """(nom, indice global, indice local) des classes annotées du volume."""
    return [(name, GLOBAL_CLASSES.index(name), local)
            for local, name in enumerate(volume.class_set) if name in GLOBAL_CLASSES]


def evaluate_model(state: ModelState, volumes: Iterable[Volume], threshold: float = 0.5,
                   model_id: str = "model", seed: int = 0) -> List[MetricRecord]:
    """
    Évalue un modèle sur les coupes annotées de volumes de test.

    Args:
        state: Modèle
        volumes: Volumes de test (étiquetés)
        threshold: Seuil de binarisation (p >= seuil)
        model_id: Identifiant du modèle dans les enregistrements
        seed: Graine du réplicat

    Returns:
        Liste de MetricRecord, une par (coupe annotée, classe disponible)
    """
    if not 0.0 < threshold < 1.0:
        raise EvaluationError(f"threshold: doit être dans (0, 1), trouvé {threshold}")

    records: List[MetricRecord] = []
    for volume in volumes:
        if volume.labels is None or not volume.labeled_slice_indices:
            continue
        indices = list(volume.labeled_slice_indices)
        probabilities = predict_slices(state, volume, indices)
        for row, slice_index in enumerate(indices):
            for name, global_index, local_index in _volume_classes(volume):
                pred = probabilities[row, global_index] >= threshold
                gt = volume.labels[slice_index, local_index]
                records.append(MetricRecord(
                    model_id=model_id,
                    seed=int(seed),
                    domain_id=volume.domain_id,
                    volume_id=volume.volume_id,
                    slice_index=int(slice_index),
                    class_name=name,
                    dice=dice_score(pred, gt),
                    uvd=uvd(pred, gt, volume.pixel_area_um2, volume.slice_spacing_um),
                ))

    logger.debug(f"{len(records)} mesures calculées pour {model_id} (graine {seed})")
    return records


def validation_dice(state: ModelState, samples: Sequence[Tuple[Volume, int]],
                    threshold: float = 0.5) -> Optional[float]:
    """Dice moyen (%) sur des coupes annotées (volume, indice), toutes classes disponibles confondues."""
    by_volume: Dict[str, Tuple[Volume, List[int]]] = {}
    for volume, index in samples:
        by_volume.setdefault(volume.volume_id, (volume, []))[1].append(index)

    scores = []
    for volume, indices in by_volume.values():
        probabilities = predict_slices(state, volume, indices)
        for row, slice_index in enumerate(indices):
            for _, global_index, local_index in _volume_classes(volume):
                scores.append(dice_score(probabilities[row, global_index] >= threshold,
                                         volume.labels[slice_index, local_index]))
    return float(np.mean(scores)) if scores else None


def records_to_frame(records: Iterable[MetricRecord]) -> pd.DataFrame:
    """DataFrame trié sur les clés (model_id, seed, domain, volume, slice, class)."""
    df = pd.DataFrame([r.to_row() for r in records], columns=list(MetricRecord.CSV_COLUMNS))
    return df.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)


def write_records_csv(records: Union[pd.DataFrame, Iterable[MetricRecord]], path: Union[str, Path]) -> Path:
    """Écrit les mesures au format CSV (en-tête model_id,seed,domain,volume,slice,class,dice,uvd)."""
    df = records if isinstance(records, pd.DataFrame) else records_to_frame(records)
    df = df.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, columns=list(MetricRecord.CSV_COLUMNS))
    logger.info(f"{len(df)} mesures écrites dans {path}")
    return path


def read_records_csv(paths: Union[str, Path, Sequence[Union[str, Path]]]) -> pd.DataFrame:
    """
    Relit un ou plusieurs CSV de mesures.

    Raises:
        EvaluationError: Fichier absent ou colonnes manquantes
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    frames = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise EvaluationError(f"Fichier de mesures introuvable: {path}")
        df = pd.read_csv(path, dtype={"model_id": str, "domain": str, "volume": str, "class": str})
        missing = [c for c in MetricRecord.CSV_COLUMNS if c not in df.columns]
        if missing:
            raise EvaluationError(f"Colonnes manquantes dans {path}: {missing}")
        frames.append(df)
    if not frames:
        raise EvaluationError("Aucun fichier de mesures fourni")
    df = pd.concat(frames, ignore_index=True)
    return df.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)
