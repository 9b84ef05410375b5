"""
État d'un modèle (backbone, tête de projection, prédicteur) et opérations associées.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
import torch
from torch import nn

from ..core.exceptions import ModelError
from ..core.models import ArchitectureSpec, SliceBatch
from .heads import Predictor, ProjectionHead
from .unet import UNet


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "segclr-checkpoint-1"

# Flux dérivés de la graine pour l'initialisation des sous-réseaux
_HEAD_STREAM = 1
_PREDICTOR_STREAM = 2

BatchLike = Union[SliceBatch, np.ndarray, torch.Tensor]


def derive_seed(seed: int, stream: int) -> int:
    """Graine entière dérivée de (seed, stream), stable d'une plateforme à l'autre."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


@dataclass
class ModelState:
    """Backbone F et, selon le mode d'entraînement, tête C et prédicteur Q."""
    arch: ArchitectureSpec
    backbone: UNet
    head: Optional[ProjectionHead] = None
    predictor: Optional[Predictor] = None

    def modules(self) -> Iterator[nn.Module]:
        for module in (self.backbone, self.head, self.predictor):
            if module is not None:
                yield module

    def parameters(self) -> Iterator[nn.Parameter]:
        for module in self.modules():
            yield from module.parameters()

    def train(self, mode: bool = True) -> "ModelState":
        for module in self.modules():
            module.train(mode)
        return self

    def eval(self) -> "ModelState":
        return self.train(False)

    @property
    def training(self) -> bool:
        return self.backbone.training

    def to(self, device: Union[str, torch.device, None] = None,
           dtype: Optional[torch.dtype] = None) -> "ModelState":
        for module in self.modules():
            module.to(device=device, dtype=dtype)
        return self

    @property
    def device(self) -> torch.device:
        return next(self.backbone.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.backbone.parameters()).dtype


def _init_module(factory, seed: int) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def build_model(arch: ArchitectureSpec, seed: int, with_head: bool = False,
                with_predictor: bool = False) -> ModelState:
    """
    Construit un ModelState initialisé de façon déterministe.

    Le backbone est initialisé à partir de ``seed`` seul : un Baseline et un
    SegCLR de même graine partent des mêmes poids de backbone.

    Args:
        arch: Architecture
        seed: Graine d'initialisation
        with_head: Ajouter la tête de projection (C_pool ou C_ch selon arch.head_kind)
        with_predictor: Ajouter le prédicteur Q (SimSiam)

    Returns:
        ModelState en mode entraînement

    Raises:
        ModelError: Si l'architecture est invalide
    """
    try:
        arch.validate()
    except Exception as e:
        raise ModelError(f"Architecture invalide: {e}")

    backbone = _init_module(lambda: UNet(arch), int(seed))
    head = _init_module(lambda: ProjectionHead(arch), derive_seed(seed, _HEAD_STREAM)) if with_head else None
    predictor = None
    if with_predictor:
        predictor = _init_module(lambda: Predictor(arch.mlp_units), derive_seed(seed, _PREDICTOR_STREAM))
    return ModelState(arch=arch, backbone=backbone, head=head, predictor=predictor)


def as_input_tensor(state: ModelState, batch: BatchLike) -> torch.Tensor:
    """Convertit un lot de coupes en tenseur [N, 1, h, w] au type et au device du modèle."""
    images = batch.images if isinstance(batch, SliceBatch) else batch
    tensor = images if isinstance(images, torch.Tensor) else torch.from_numpy(np.asarray(images))
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(1)
    expected = (state.arch.in_channels,) + tuple(state.arch.input_shape)
    if tensor.dim() != 4 or tuple(tensor.shape[1:]) != expected:
        raise ModelError(f"Forme d'entrée {tuple(tensor.shape)} incompatible avec [N, {expected}]")
    return tensor.to(device=state.device, dtype=state.dtype)


def forward_segment(state: ModelState, batch: BatchLike) -> torch.Tensor:
    """Cartes de probabilités p = F(x), forme [N, C, h, w]."""
    return state.backbone(as_input_tensor(state, batch))


def forward_with_features(state: ModelState, batch: BatchLike):
    """(p, h) issus du même passage avant."""
    return state.backbone.forward_with_features(as_input_tensor(state, batch))


def encode(state: ModelState, batch: BatchLike) -> torch.Tensor:
    """Activations du goulot h = E(x), forme [N, c, h', w']."""
    h, _ = state.backbone.encode(as_input_tensor(state, batch))
    return h


def project(state: ModelState, h: torch.Tensor) -> torch.Tensor:
    """Projection z = C(h)."""
    if state.head is None:
        raise ModelError("Aucune tête de projection dans ce modèle")
    return state.head(h)


def predict(state: ModelState, z: torch.Tensor) -> torch.Tensor:
    """Sortie du prédicteur q = Q(z)."""
    if state.predictor is None:
        raise ModelError("Aucun prédicteur dans ce modèle")
    return state.predictor(z)


def _count(module: Optional[nn.Module]) -> int:
    return 0 if module is None else sum(p.numel() for p in module.parameters())


def count_params(state: ModelState, mode: str = "inference") -> int:
    """
    Nombre de paramètres.

    Args:
        state: Modèle
        mode: 'inference' (backbone seul) ou 'training' (backbone + tête + prédicteur)
    """
    if mode == "inference":
        return _count(state.backbone)
    if mode == "training":
        return _count(state.backbone) + _count(state.head) + _count(state.predictor)
    raise ModelError(f"Mode de comptage inconnu: {mode}")


def aggregation_param_count(state: ModelState) -> int:
    """Paramètres de l'agrégation de la tête (c + 1 pour C_ch, 0 pour C_pool)."""
    if state.head is None:
        return 0
    return _count(state.head.aggregation)


def copy_backbone(source: ModelState, target: ModelState) -> None:
    """Copie les poids du backbone de ``source`` dans ``target``."""
    target.backbone.load_state_dict(source.backbone.state_dict())


def inference_state(state: ModelState) -> ModelState:
    """ModelState réduit au backbone."""
    return ModelState(arch=state.arch, backbone=state.backbone)


def save_checkpoint(state: ModelState, path: Union[str, Path]) -> Path:
    """
    Sauvegarde les tenseurs nommés et l'architecture dans un seul fichier.

    Raises:
        ModelError: Si l'écriture échoue
    """
    path = Path(path)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "arch": state.arch.to_dict(),
        "dtype": str(state.dtype).replace("torch.", ""),
        "backbone": state.backbone.state_dict(),
        "head": None if state.head is None else state.head.state_dict(),
        "predictor": None if state.predictor is None else state.predictor.state_dict(),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(blob, path)
    except OSError as e:
        raise ModelError(f"Erreur lors de l'écriture du checkpoint {path}: {e}")
    logger.debug(f"Checkpoint écrit: {path}")
    return path


def load_checkpoint(path: Union[str, Path], map_location: str = "cpu") -> ModelState:
    """
    Recharge un ModelState écrit par save_checkpoint.

    Raises:
        ModelError: Fichier absent ou format inconnu
    """
    path = Path(path)
    if not path.exists():
        raise ModelError(f"Checkpoint introuvable: {path}")
    try:
        blob = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as e:
        raise ModelError(f"Checkpoint illisible {path}: {e}")
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ModelError(f"Format de checkpoint inconnu: {path}")

    arch = ArchitectureSpec.from_dict(blob["arch"])
    state = build_model(arch, seed=0, with_head=blob["head"] is not None,
                        with_predictor=blob["predictor"] is not None)
    state.to(dtype=getattr(torch, blob.get("dtype", "float32")))
    state.backbone.load_state_dict(blob["backbone"])
    if state.head is not None:
        state.head.load_state_dict(blob["head"])
    if state.predictor is not None:
        state.predictor.load_state_dict(blob["predictor"])
    return state.eval()
