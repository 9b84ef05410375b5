"""
Génération de jeux de données volumétriques synthétiques multi-domaines.

Chaque volume contient des bandes horizontales lisses (couches rétiniennes)
et des lésions ellipsoïdales, une classe de lésion par entrée de
``DomainSpec.class_set``. Le contenu (bandes, lésions, étiquettes) est tiré
d'un flux aléatoire distinct de celui de l'apparence (flou, contraste,
bruit) : deux domaines qui ne diffèrent que par l'apparence partagent
exactement les mêmes étiquettes.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from ..core.exceptions import DataValidationError
from ..core.models import DatasetSplit, DomainSpec, GLOBAL_CLASSES, Volume


logger = logging.getLogger(__name__)

# Intensité cible et zone verticale (fraction de la hauteur) par classe
LESION_APPEARANCE = {
    "IRF": (0.02, (0.30, 0.45)),
    "SRF": (0.10, (0.50, 0.60)),
    "PED": (0.90, (0.60, 0.72)),
    "SHRM": (0.75, (0.45, 0.55)),
}

BAND_FRACTIONS = (0.25, 0.45, 0.60, 0.75)
BAND_INTENSITIES = (0.05, 0.55, 0.35, 0.70, 0.25)


def generate_domain(spec: DomainSpec, seed: int) -> List[Volume]:
    """
    Génère les volumes d'un domaine synthétique.

    Args:
        spec: Description du domaine
        seed: Graine (la sortie est une fonction pure de (spec, seed))

    Returns:
        Liste de volumes, identifiants ``<domain_id>_<index>``

    Raises:
        DataValidationError: Si la spécification est invalide
    """
    spec.validate()
    if seed < 0:
        raise DataValidationError(f"seed: doit être >= 0, trouvé {seed}")

    volumes = []
    for index in range(spec.n_volumes):
        content_rng = np.random.default_rng([seed, index, 0])
        appearance_rng = np.random.default_rng([seed, index, 1])

        clean, labels, labeled = _render_content(spec, content_rng)
        voxels = _apply_appearance(clean, spec, appearance_rng)

        volume = Volume(
            voxels=voxels,
            labels=labels,
            labeled_slice_indices=labeled,
            resolution=(spec.in_plane_resolution[0], spec.in_plane_resolution[1], spec.slice_spacing),
            domain_id=spec.domain_id,
            volume_id=f"{spec.domain_id}_{index:03d}",
            class_set=spec.ordered_classes,
        )
        volumes.append(volume)

    n_lesion_px = sum(int(v.labels.sum()) for v in volumes)
    logger.info(f"Domaine {spec.domain_id} généré: {len(volumes)} volumes, "
                f"{n_lesion_px} voxels de lésion étiquetés")
    return volumes


def _render_content(spec: DomainSpec, rng: np.random.Generator
                    ) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
    """Rend les bandes de fond et les lésions, sans effet d'apparence."""
    n_slices = spec.slices_per_volume
    height, width = spec.slice_shape
    classes = spec.ordered_classes

    # Bandes : frontières ondulées, lisses d'une coupe à l'autre
    yy = np.arange(height, dtype=np.float64)[None, :, None]
    xx = np.arange(width, dtype=np.float64)[None, None, :]
    ss = np.arange(n_slices, dtype=np.float64)[:, None, None]

    shift = rng.uniform(-0.05, 0.05) * height
    amplitude = rng.uniform(0.02, 0.06) * height
    frequency = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 2 * np.pi)
    intensities = np.asarray(BAND_INTENSITIES) + rng.uniform(-0.05, 0.05, size=len(BAND_INTENSITIES))

    image = np.full((n_slices, height, width), intensities[0])
    for k, fraction in enumerate(BAND_FRACTIONS):
        boundary = (fraction * height + shift
                    + amplitude * np.sin(2 * np.pi * frequency * xx / width + phase + 0.15 * ss))
        edge = 1.0 / (1.0 + np.exp(-(yy - boundary) / 0.8))
        image = image + (intensities[k + 1] - intensities[k]) * edge

    # Lésions ellipsoïdales
    labels = np.zeros((n_slices, len(classes), height, width), dtype=np.uint8)
    scale = spec.content.lesion_scale
    for class_index, class_name in enumerate(classes):
        target, (zone_lo, zone_hi) = LESION_APPEARANCE[class_name]
        n_lesions = rng.poisson(spec.content.lesion_density)
        for _ in range(n_lesions):
            zc = rng.uniform(0, n_slices - 1) if n_slices > 1 else 0.0
            yc = rng.uniform(zone_lo, zone_hi) * height
            xc = rng.uniform(0.15, 0.85) * width
            rz = rng.uniform(0.8, 2.0)
            ry = scale * rng.uniform(0.5, 1.0)
            rx = scale * rng.uniform(1.0, 2.0)
            d2 = ((ss - zc) / rz) ** 2 + ((yy - yc) / ry) ** 2 + ((xx - xc) / rx) ** 2
            mask = d2 <= 1.0
            alpha = np.clip((1.15 - d2) * 4.0, 0.0, 1.0)
            image = image * (1.0 - alpha) + target * alpha
            labels[:, class_index] |= mask.astype(np.uint8)

    if spec.labeled_slices_per_volume is None:
        labeled = tuple(range(n_slices))
    else:
        chosen = rng.choice(n_slices, size=spec.labeled_slices_per_volume, replace=False)
        labeled = tuple(int(i) for i in np.sort(chosen))
        unlabeled = np.setdiff1d(np.arange(n_slices), chosen)
        labels[unlabeled] = 0

    return np.clip(image, 0.0, 1.0), labels, labeled


def _apply_appearance(clean: np.ndarray, spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Applique flou, gain de contraste et bruit après le rendu du contenu."""
    appearance = spec.appearance
    out = clean
    if appearance.blur_sigma > 0:
        out = gaussian_filter(out, sigma=(0.0, appearance.blur_sigma, appearance.blur_sigma))
    out = (out - 0.5) * appearance.contrast_gain + 0.5
    if appearance.noise_std > 0:
        out = out + rng.normal(0.0, appearance.noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resample_slice(image: np.ndarray, labels: Optional[np.ndarray],
                   target_shape: Tuple[int, int]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Rééchantillonne une coupe : bilinéaire pour l'image, plus proche voisin pour les masques.

    Args:
        image: Image 2D
        labels: Masques binaires [h, w] ou [C, h, w], optionnels
        target_shape: Forme cible (h, w)

    Returns:
        Tuple (image, labels) rééchantillonnés ; les masques restent binaires
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise DataValidationError(f"image: coupe 2D non vide attendue, forme {image.shape}")
    target = tuple(int(d) for d in target_shape)
    if len(target) != 2 or min(target) < 1:
        raise DataValidationError(f"target_shape: dimensions >= 1 attendues, trouvé {target_shape}")

    if target == image.shape:
        return image.copy(), None if labels is None else np.asarray(labels).copy()

    tensor = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float64))[None, None]
    resized = F.interpolate(tensor, size=target, mode="bilinear", align_corners=False)
    out_image = resized[0, 0].numpy().astype(image.dtype)

    out_labels = None
    if labels is not None:
        masks = np.asarray(labels)
        squeeze = masks.ndim == 2
        stack = masks[None] if squeeze else masks
        tensor = torch.from_numpy(np.ascontiguousarray(stack, dtype=np.float32))[None]
        nearest = F.interpolate(tensor, size=target, mode="nearest-exact")[0].numpy()
        out_labels = (nearest > 0.5).astype(masks.dtype)
        if squeeze:
            out_labels = out_labels[0]

    return out_image, out_labels


def resample_volume(volume: Volume, target_shape: Tuple[int, int]) -> Volume:
    """Rééchantillonne toutes les coupes d'un volume et ajuste la résolution dans le plan."""
    height, width = volume.slice_shape
    slices, masks = [], []
    for index in range(volume.n_slices):
        labels = None if volume.labels is None else volume.labels[index]
        image, resized = resample_slice(volume.voxels[index], labels, target_shape)
        slices.append(image)
        masks.append(resized)
    resolution = (volume.resolution[0] * height / target_shape[0],
                  volume.resolution[1] * width / target_shape[1],
                  volume.resolution[2])
    return Volume(
        voxels=np.stack(slices),
        labels=None if volume.labels is None else np.stack(masks),
        labeled_slice_indices=volume.labeled_slice_indices,
        resolution=resolution,
        domain_id=volume.domain_id,
        volume_id=volume.volume_id,
        class_set=volume.class_set,
    )


def _split_counts(n: int, fractions: Sequence[float]) -> List[int]:
    """Répartit n volumes selon les fractions (méthode du plus fort reste)."""
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    # Chaque split demandé reçoit au moins un volume
    for i, fraction in enumerate(fractions):
        if fraction > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_dataset(volumes: Sequence[Volume], fractions: Tuple[float, float, float],
                  seed: int) -> DatasetSplit:
    """
    Partitionne des volumes en train / val / test.

    Args:
        volumes: Volumes à répartir
        fractions: Fractions (train, val, test), somme 1
        seed: Graine de la permutation

    Returns:
        DatasetSplit disjoint au niveau des volumes

    Raises:
        DataValidationError: Fractions invalides ou trop peu de volumes
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DataValidationError(f"fractions: trois valeurs >= 0 attendues, trouvé {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataValidationError(f"fractions: la somme doit valoir 1, trouvé {sum(fractions)}")
    n_required = sum(1 for f in fractions if f > 0)
    if len(volumes) < n_required:
        raise DataValidationError(
            f"Pas assez de volumes ({len(volumes)}) pour {n_required} splits non vides")

    counts = _split_counts(len(volumes), fractions)
    order = np.random.default_rng(seed).permutation(len(volumes))
    bounds = np.cumsum([0] + counts)
    parts = [[volumes[i] for i in order[bounds[k]:bounds[k + 1]]] for k in range(3)]

    split = DatasetSplit(train=parts[0], val=parts[1], test=parts[2])
    split.validate()
    logger.debug(f"Split {split.sizes} (graine {seed})")
    return split


def subsample_unlabeled(volumes: Sequence[Volume], fraction: float, seed: int) -> List[Volume]:
    """
    Conserve ceil(fraction × n) volumes, tirés sans remise, dans l'ordre d'origine.

    Une fraction nulle renvoie une liste vide (cas sans données non étiquetées).
    """
    if not 0.0 <= fraction <= 1.0:
        raise DataValidationError(f"fraction: doit être dans [0, 1], trouvé {fraction}")
    n = len(volumes)
    if fraction >= 1.0:
        return list(volumes)
    keep = int(math.ceil(fraction * n - 1e-9))
    if keep == 0:
        return []
    chosen = np.sort(np.random.default_rng(seed).choice(n, size=keep, replace=False))
    return [volumes[i] for i in chosen]


def expand_labels(volume: Volume, slice_index: int,
                  classes: Sequence[str] = GLOBAL_CLASSES) -> Tuple[np.ndarray, np.ndarray]:
    """
    Projette les étiquettes d'une coupe sur une liste de classes globale.

    Returns:
        Tuple (masques [C, h, w] uint8, disponibilité [C] bool)
    """
    height, width = volume.slice_shape
    masks = np.zeros((len(classes), height, width), dtype=np.uint8)
    available = np.zeros(len(classes), dtype=bool)
    if volume.labels is None:
        return masks, available
    for local_index, name in enumerate(volume.class_set):
        if name in classes:
            global_index = list(classes).index(name)
            masks[global_index] = volume.labels[slice_index, local_index]
            available[global_index] = True
    return masks, available
