"""
Génération de paires positives pour l'apprentissage contrastif.

Trois stratégies :
    - P_a   : deux augmentations indépendantes de la même coupe
    - P_s   : la coupe elle-même et une coupe voisine tirée selon une gaussienne
    - P_s+a : P_s puis augmentations indépendantes de chaque vue

Toutes les fonctions sont pures vis-à-vis du flux aléatoire ``rng`` fourni.
Le tirage de l'indice de coupe utilise un flux enfant (``rng.spawn``) afin
que les tirages d'augmentation restent identiques entre P_a et P_s+a pour
une même graine.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..core.exceptions import DataValidationError
from ..core.models import AugmentParams, PairBatch, SliceBatch, SlicePairingParams, Volume
from .synthdata import resample_slice


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SliceView:
    """Une coupe 2D et sa provenance."""
    image: np.ndarray
    volume_id: str
    slice_index: int
    domain_id: str


@dataclass(frozen=True)
class AugmentRecord:
    """Tirages effectivement appliqués par augment()."""
    flipped: bool
    shift: Tuple[int, int]
    crop: Tuple[int, int, int, int]
    brightness: float
    jitter: Tuple[float, float, float]


def slice_view(volume: Volume, index: int) -> SliceView:
    """Extrait (copie) la coupe ``index`` d'un volume."""
    return SliceView(volume.voxels[index].copy(), volume.volume_id, int(index), volume.domain_id)


def _translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translation entière avec remplissage par zéros."""
    height, width = image.shape
    out = np.zeros_like(image)
    if abs(dy) >= height or abs(dx) >= width:
        return out
    src_y = slice(max(-dy, 0), height - max(dy, 0))
    dst_y = slice(max(dy, 0), height - max(-dy, 0))
    src_x = slice(max(-dx, 0), width - max(dx, 0))
    dst_x = slice(max(dx, 0), width - max(-dx, 0))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def augment_with_record(image: np.ndarray, params: AugmentParams,
                        rng: np.random.Generator) -> Tuple[np.ndarray, AugmentRecord]:
    """
    Applique, dans l'ordre : retournement horizontal, translation, zoom avant,
    distorsion de couleur (via 3 canaux RGB puis retour en niveaux de gris).

    Les tirages aléatoires sont toujours consommés dans le même ordre, même
    lorsque l'amplitude d'une opération est nulle.

    Args:
        image: Coupe 2D à valeurs dans [0, 1]
        params: Amplitudes des augmentations
        rng: Flux aléatoire

    Returns:
        Tuple (image augmentée dans [0, 1], tirages appliqués)
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataValidationError(f"image: coupe 2D attendue, forme {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise DataValidationError("image: les valeurs doivent être dans [0, 1]")
    height, width = image.shape

    flipped = bool(rng.random() < params.p_hflip)
    max_dy = params.max_translate_frac * height
    max_dx = params.max_translate_frac * width
    dy = int(np.trunc(rng.uniform(-max_dy, max_dy)))
    dx = int(np.trunc(rng.uniform(-max_dx, max_dx)))
    side = rng.uniform(1.0 - params.max_zoom_in_frac, 1.0)
    crop_h = max(1, int(round(side * height)))
    crop_w = max(1, int(round(side * width)))
    y0 = int(rng.integers(0, height - crop_h + 1))
    x0 = int(rng.integers(0, width - crop_w + 1))
    brightness = float(rng.uniform(-params.max_brightness_frac, params.max_brightness_frac))
    jitter = rng.uniform(1.0 - params.max_jitter_frac, 1.0 + params.max_jitter_frac, size=3)

    out = image.astype(np.float64)
    if flipped:
        out = np.fliplr(out)
    if dy or dx:
        out = _translate(out, dy, dx)
    if (crop_h, crop_w) != (height, width):
        window = out[y0:y0 + crop_h, x0:x0 + crop_w]
        out, _ = resample_slice(window, None, (height, width))
    if params.max_brightness_frac > 0 or params.max_jitter_frac > 0:
        rgb = np.repeat(out[None], 3, axis=0) + brightness
        rgb = rgb * jitter[:, None, None]
        out = rgb.mean(axis=0)
    out = np.clip(out, 0.0, 1.0).astype(image.dtype)

    record = AugmentRecord(flipped, (dy, dx), (y0, x0, crop_h, crop_w), brightness,
                           tuple(float(j) for j in jitter))
    return out, record


def augment(image: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Augmente une coupe (voir augment_with_record)."""
    out, _ = augment_with_record(image, params, rng)
    return out


def pair_augmentation(x: SliceView, params: AugmentParams,
                      rng: np.random.Generator) -> Tuple[SliceView, SliceView]:
    """P_a : deux augmentations indépendantes de la même coupe."""
    first = augment(x.image, params, rng)
    second = augment(x.image, params, rng)
    return (SliceView(first, x.volume_id, x.slice_index, x.domain_id),
            SliceView(second, x.volume_id, x.slice_index, x.domain_id))


def sample_slice_index(b: int, params: SlicePairingParams, n_slices: int,
                       rng: np.random.Generator) -> int:
    """
    Tire un indice de coupe voisin : décalage ~ N(0, (sigma/espacement)²),
    arrondi à l'entier le plus proche, puis borné à [0, n_slices - 1].
    """
    if not 0 <= b < n_slices:
        raise DataValidationError(f"b: indice {b} hors de [0, {n_slices})")
    offset = rng.normal(0.0, params.sigma_slices)
    index = b + int(np.rint(offset))
    return min(max(index, 0), n_slices - 1)


def pair_slice(volume: Volume, b: int, params: SlicePairingParams,
               rng: np.random.Generator) -> Tuple[SliceView, SliceView]:
    """P_s : x' est la coupe b inchangée, x'' une coupe voisine du même volume."""
    (index_rng,) = rng.spawn(1)
    neighbour = sample_slice_index(b, params, volume.n_slices, index_rng)
    return slice_view(volume, b), slice_view(volume, neighbour)


def pair_slice_aug(volume: Volume, b: int, slice_params: SlicePairingParams,
                   aug_params: AugmentParams, rng: np.random.Generator) -> Tuple[SliceView, SliceView]:
    """P_s+a : P_s puis une augmentation indépendante de chaque vue."""
    first, second = pair_slice(volume, b, slice_params, rng)
    return (SliceView(augment(first.image, aug_params, rng), first.volume_id,
                      first.slice_index, first.domain_id),
            SliceView(augment(second.image, aug_params, rng), second.volume_id,
                      second.slice_index, second.domain_id))


def make_pair(strategy: str, volume: Volume, b: int, aug_params: AugmentParams,
              sigma_um: float, rng: np.random.Generator) -> Tuple[SliceView, SliceView]:
    """Forme une paire positive selon la stratégie 'a', 's' ou 's+a'."""
    if strategy == "a":
        return pair_augmentation(slice_view(volume, b), aug_params, rng)
    slice_params = SlicePairingParams(sigma_um=sigma_um, slice_spacing_um=volume.slice_spacing_um)
    if strategy == "s":
        return pair_slice(volume, b, slice_params, rng)
    if strategy == "s+a":
        return pair_slice_aug(volume, b, slice_params, aug_params, rng)
    raise DataValidationError(f"Stratégie de paires inconnue: {strategy}")


def _stack_views(views: List[SliceView]) -> SliceBatch:
    return SliceBatch(
        images=np.stack([v.image for v in views]).astype(np.float32),
        volume_ids=tuple(v.volume_id for v in views),
        slice_indices=tuple(v.slice_index for v in views),
        domain_ids=tuple(v.domain_id for v in views),
    )


def build_pair_batch(samples: Sequence[Tuple[Volume, int]], strategy: str,
                     aug_params: AugmentParams, sigma_um: float,
                     rng: np.random.Generator) -> PairBatch:
    """
    Construit un PairBatch à partir d'échantillons (volume, indice de coupe).

    Les étiquettes ne sont jamais lues : les paires n'alimentent que la branche contrastive.
    """
    if not samples:
        raise DataValidationError("build_pair_batch: aucun échantillon fourni")
    firsts, seconds = [], []
    for volume, index in samples:
        first, second = make_pair(strategy, volume, index, aug_params, sigma_um, rng)
        firsts.append(first)
        seconds.append(second)
    return PairBatch(view_a=_stack_views(firsts), view_b=_stack_views(seconds))
