"""
Boucle d'entraînement : assemblage des lots, optimisation de la perte jointe,
sélection du meilleur checkpoint, pré-entraînement contrastif et réplicats.
"""
import copy
import logging
import math
import multiprocessing
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..core.exceptions import ReplicateError, TrainingDivergenceError, TrainingError
from ..core.models import (
    AugmentParams, ExperimentConfig, EpochRecord, GLOBAL_CLASSES, PairBatch, SliceBatch, TrainHistory,
)
from ..analysis.metrics import validation_dice
from ..data.catalog import DomainCatalog, LabeledSample
from ..data.pairing import augment, build_pair_batch
from ..data.synthdata import expand_labels, subsample_unlabeled
from ..modeling.state import ModelState, build_model, copy_backbone, derive_seed, encode, forward_segment, project
from .losses import ProjectionBatch, dice_loss, joint_loss, ntxent_loss, simsiam_loss


logger = logging.getLogger(__name__)

TRAIN_PHASE = "train"
PRETRAIN_PHASE = "pretrain"
FINETUNE_PHASE = "finetune"
_PHASE_CODES = {TRAIN_PHASE: 0, PRETRAIN_PHASE: 1, FINETUNE_PHASE: 2}

_DROPOUT_STREAM = 3
_ORDER_STREAM = 4

DETERMINISTIC_ENV = "SEGCLR_DETERMINISTIC"


@dataclass
class TrainingPools:
    """Échantillons (volume, coupe) disponibles pour un entraînement."""
    labeled: List[LabeledSample] = field(default_factory=list)
    validation: List[LabeledSample] = field(default_factory=list)
    source_pairs: Dict[str, List[LabeledSample]] = field(default_factory=dict)
    target_pairs: Dict[str, List[LabeledSample]] = field(default_factory=dict)


@dataclass
class StepBatches:
    """Entrées d'une étape d'optimisation."""
    supervised: Optional[SliceBatch]
    source_pairs: Optional[PairBatch]
    target_pairs: Optional[PairBatch]


def configure_determinism() -> bool:
    """Active les algorithmes déterministes de torch si SEGCLR_DETERMINISTIC=1."""
    enabled = os.environ.get(DETERMINISTIC_ENV, "0").strip().lower() in ("1", "true", "yes")
    if enabled:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True)
    return enabled


def _all_slices(volumes) -> List[LabeledSample]:
    return [(volume, index) for volume in volumes for index in range(volume.n_slices)]


def prepare_pools(config: ExperimentConfig, catalog: DomainCatalog, seed: int,
                  contrastive: Optional[bool] = None) -> TrainingPools:
    """
    Lit les données nécessaires à un entraînement.

    Les volumes non étiquetés du domaine cible ne sont lus qu'en mode contrastif
    avec un domaine cible et une fraction non nulle.

    Raises:
        TrainingError: Si aucune coupe annotée n'est disponible
    """
    contrastive = config.is_contrastive if contrastive is None else contrastive
    pools = TrainingPools()
    for domain in config.labeled_domains:
        samples = catalog.labeled_samples(domain, "train")
        pools.labeled.extend(samples)
        if contrastive and samples:
            pools.source_pairs[domain] = samples
        pools.validation.extend(catalog.labeled_samples(domain, "val"))
    if not pools.labeled:
        raise TrainingError(f"Aucune coupe annotée dans les domaines {list(config.labeled_domains)}")

    if contrastive and config.uses_target_pool:
        for domain in config.target_domains:
            volumes = subsample_unlabeled(catalog.unlabeled_volumes(domain, "train"),
                                          config.unlabeled_fraction, seed)
            if volumes:
                pools.target_pairs[domain] = _all_slices(volumes)

    logger.debug(f"Pools: {len(pools.labeled)} coupes annotées, {len(pools.validation)} de validation, "
                 f"cibles {sorted(pools.target_pairs)}")
    return pools


def prepare_pretrain_pools(config: ExperimentConfig, catalog: DomainCatalog, seed: int) -> TrainingPools:
    """Pool non étiqueté du pré-entraînement : domaine cible, ou images sources s'il n'y en a pas."""
    pools = TrainingPools()
    if config.uses_target_pool:
        for domain in config.target_domains:
            volumes = subsample_unlabeled(catalog.unlabeled_volumes(domain, "train"),
                                          config.unlabeled_fraction, seed)
            if volumes:
                pools.target_pairs[domain] = _all_slices(volumes)
    if not pools.target_pairs:
        for domain in config.source_domains:
            pools.target_pairs[domain] = _all_slices(catalog.unlabeled_volumes(domain, "train"))
    if not any(pools.target_pairs.values()):
        raise TrainingError("Aucune image disponible pour le pré-entraînement contrastif")
    return pools


def _supervised_batch(samples: Sequence[LabeledSample], config: ExperimentConfig,
                      rng: np.random.Generator) -> SliceBatch:
    images, labels, masks = [], [], []
    photometric = AugmentParams(0.0, 0.0, 0.0, config.augment.max_brightness_frac,
                                config.augment.max_jitter_frac)
    for volume, index in samples:
        image = volume.voxels[index]
        if config.augment_supervised:
            image = augment(image, photometric, rng)
        y, available = expand_labels(volume, index, GLOBAL_CLASSES)
        images.append(image)
        labels.append(y)
        masks.append(available)
    return SliceBatch(
        images=np.stack(images).astype(np.float32),
        volume_ids=tuple(v.volume_id for v, _ in samples),
        slice_indices=tuple(int(i) for _, i in samples),
        domain_ids=tuple(v.domain_id for v, _ in samples),
        labels=np.stack(labels),
        class_mask=np.stack(masks),
    )


def _pair_batch(pools: Dict[str, List[LabeledSample]], config: ExperimentConfig,
                rng: np.random.Generator) -> Optional[PairBatch]:
    samples: List[LabeledSample] = []
    for domain in sorted(pools):
        pool = pools[domain]
        if not pool:
            continue
        picks = rng.integers(0, len(pool), size=config.batch_size_con)
        samples.extend(pool[int(i)] for i in picks)
    if not samples:
        return None
    return build_pair_batch(samples, config.pairing, config.augment, config.sigma_um, rng)


def assemble_step_batches(pools: TrainingPools, config: ExperimentConfig, rng: np.random.Generator,
                          sup_indices: Optional[Sequence[int]] = None) -> StepBatches:
    """
    Assemble les lots d'une étape : lot supervisé, paires source et paires cible.

    Le flux ``rng`` est scindé en un flux supervisé et un flux contrastif, de sorte
    que le lot supervisé ne dépend pas de la présence des paires.

    Args:
        pools: Données disponibles
        config: Configuration d'expérience
        rng: Flux aléatoire de l'étape
        sup_indices: Indices imposés dans pools.labeled (sinon tirage aléatoire)

    Raises:
        TrainingError: Si le pool annoté est vide
    """
    if not pools.labeled:
        raise TrainingError("assemble_step_batches: pool annoté vide")
    sup_rng, pair_rng = rng.spawn(2)
    if sup_indices is None:
        sup_indices = sup_rng.choice(len(pools.labeled), size=config.batch_size_sup,
                                     replace=len(pools.labeled) < config.batch_size_sup)
    supervised = _supervised_batch([pools.labeled[int(i)] for i in sup_indices], config, sup_rng)
    source = _pair_batch(pools.source_pairs, config, pair_rng) if pools.source_pairs else None
    target = _pair_batch(pools.target_pairs, config, pair_rng) if pools.target_pairs else None
    return StepBatches(supervised, source, target)


def _epoch_indices(permutation: np.ndarray, step: int, batch_size: int) -> np.ndarray:
    """Indices de l'étape ; le dernier lot se complète en reprenant le début de la permutation."""
    positions = np.arange(step * batch_size, (step + 1) * batch_size) % len(permutation)
    return permutation[positions]


def _contrastive_loss(state: ModelState, pairs: PairBatch, config: ExperimentConfig) -> torch.Tensor:
    z_a = project(state, encode(state, pairs.view_a))
    z_b = project(state, encode(state, pairs.view_b))
    if not (torch.isfinite(z_a).all() and torch.isfinite(z_b).all()):
        return torch.full((), float("nan"), dtype=z_a.dtype, device=z_a.device)
    batch = ProjectionBatch(z_a, z_b, pairs.domain_ids)
    if config.contrastive_kind == "simsiam":
        return simsiam_loss(batch, state.predictor)
    return ntxent_loss(batch, config.loss.tau, config.loss.include_positive)


def _optimization_step(state: ModelState, optimizer: torch.optim.Optimizer, config: ExperimentConfig,
                       batches: StepBatches, step: int, contrastive_weight: float) -> Dict[str, Optional[float]]:
    l_sup = l_source = l_target = None
    if batches.supervised is not None:
        p = forward_segment(state, batches.supervised)
        y = torch.from_numpy(batches.supervised.labels).to(device=p.device, dtype=p.dtype)
        l_sup = dice_loss(p, y, batches.supervised.class_mask, config.loss.epsilon)
    if batches.source_pairs is not None:
        l_source = _contrastive_loss(state, batches.source_pairs, config)
    if batches.target_pairs is not None:
        l_target = _contrastive_loss(state, batches.target_pairs, config)
    total = joint_loss(l_source, l_target, l_sup, config.loss.lambda_sup, contrastive_weight)

    terms = {
        "loss_sup": None if l_sup is None else float(l_sup.detach()),
        "loss_con_source": None if l_source is None else float(l_source.detach()),
        "loss_con_target": None if l_target is None else float(l_target.detach()),
        "loss_total": float(total.detach()),
    }
    if not all(math.isfinite(v) for v in terms.values() if v is not None):
        raise TrainingDivergenceError(step, terms)

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return terms


def _mean_or_none(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _fit(state: ModelState, config: ExperimentConfig, pools: TrainingPools, seed: int, phase: str,
         epochs: int, history: TrainHistory, supervised: bool = True,
         contrastive_weight: float = 1.0) -> ModelState:
    """
    Entraîne ``state`` en place pendant ``epochs`` époques.

    Phase supervisée : une époque = un passage sur les coupes annotées, et le
    modèle retourné est celui de l'époque au meilleur Dice de validation (la
    plus précoce en cas d'égalité). Phase purement contrastive : une époque =
    un passage (en moyenne) sur le pool non étiqueté, et l'état final est retourné.
    """
    optimizer = torch.optim.Adam(list(state.parameters()), lr=config.optimizer.lr)
    phase_code = _PHASE_CODES[phase]
    order_rng = np.random.default_rng([int(seed), _ORDER_STREAM, phase_code])
    if supervised:
        steps_per_epoch = math.ceil(len(pools.labeled) / config.batch_size_sup)
    else:
        pool_size = sum(len(p) for p in pools.target_pairs.values())
        steps_per_epoch = max(1, math.ceil(pool_size / config.batch_size_con))
    if supervised and not pools.validation:
        logger.warning("Aucune coupe de validation : la dernière époque sera retenue")

    best_state, best_score = None, None
    global_step = sum(r.steps for r in history.records)
    for epoch in range(1, epochs + 1):
        state.train()
        permutation = order_rng.permutation(len(pools.labeled)) if supervised else None
        logged: Dict[str, List[Optional[float]]] = {}
        for step in range(steps_per_epoch):
            step_rng = np.random.default_rng([int(seed), phase_code, epoch, step])
            if supervised:
                batches = assemble_step_batches(
                    pools, config, step_rng, _epoch_indices(permutation, step, config.batch_size_sup))
            else:
                _, pair_rng = step_rng.spawn(2)
                batches = StepBatches(None, None, _pair_batch(pools.target_pairs, config, pair_rng))
            terms = _optimization_step(state, optimizer, config, batches, global_step, contrastive_weight)
            global_step += 1
            for name, value in terms.items():
                logged.setdefault(name, []).append(value)

        val_dice = validation_dice(state, pools.validation, config.threshold) if supervised else None
        record = EpochRecord(
            epoch=epoch,
            phase=phase,
            loss_sup=_mean_or_none(logged.get("loss_sup", [])),
            loss_con_source=_mean_or_none(logged.get("loss_con_source", [])),
            loss_con_target=_mean_or_none(logged.get("loss_con_target", [])),
            loss_total=float(np.mean(logged["loss_total"])),
            val_dice=val_dice,
            steps=steps_per_epoch,
        )
        history.append(record)
        logger.info(f"[{config.name} graine={seed} {phase}] époque {epoch}/{epochs}: "
                    f"total={record.loss_total:.4f} sup={record.loss_sup} "
                    f"con_s={record.loss_con_source} con_t={record.loss_con_target} val_dice={val_dice}")

        if not supervised:
            continue
        if val_dice is None or best_score is None or val_dice > best_score:
            best_state, best_score = copy.deepcopy(state), val_dice
            history.best_epoch = epoch

    if not supervised:
        return state
    logger.info(f"[{config.name} graine={seed}] époque retenue: {history.best_epoch} (val_dice={best_score})")
    return best_state.eval()


def _train_joint(config: ExperimentConfig, catalog: DomainCatalog, seed: int) -> Tuple[ModelState, TrainHistory]:
    state = build_model(config.arch, seed, with_head=config.is_contrastive,
                        with_predictor=config.needs_predictor).to(config.device)
    pools = prepare_pools(config, catalog, seed)
    history = TrainHistory()
    weight = config.loss.contrastive_weight if config.is_contrastive else 0.0
    best = _fit(state, config, pools, seed, TRAIN_PHASE, config.epochs, history,
                supervised=True, contrastive_weight=weight)
    return best, history


def train(config: ExperimentConfig, catalog: DomainCatalog, seed: int) -> Tuple[ModelState, TrainHistory]:
    """
    Entraîne un modèle pour une graine.

    Baseline et UpperBound : perte supervisée seule. SegCLR : perte jointe à
    chaque étape. Variantes *_pretrain : pré-entraînement puis affinage.

    Returns:
        Tuple (modèle à la meilleure époque de validation, historique)

    Raises:
        TrainingDivergenceError: Perte non finie
    """
    config.validate()
    configure_determinism()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, _DROPOUT_STREAM))
        if config.is_pretrain:
            return pretrain_finetune(config, catalog, seed)
        return _train_joint(config, catalog, seed)


def pretrain_contrastive(config: ExperimentConfig, catalog: DomainCatalog, seed: int,
                         history: Optional[TrainHistory] = None) -> ModelState:
    """Phase 1 : optimise uniquement la perte contrastive sur le pool non étiqueté (aucune étiquette lue)."""
    history = history if history is not None else TrainHistory()
    state = build_model(config.arch, seed, with_head=True,
                        with_predictor=config.contrastive_kind == "simsiam").to(config.device)
    pools = prepare_pretrain_pools(config, catalog, seed)
    epochs = config.pretrain_epochs or config.epochs
    return _fit(state, config, pools, seed, PRETRAIN_PHASE, epochs, history, supervised=False)


def initialize_from_pretrained(pretrained: ModelState, config: ExperimentConfig, seed: int) -> ModelState:
    """Nouveau modèle sans tête dont le backbone reprend les poids pré-entraînés."""
    state = build_model(config.arch, seed).to(config.device)
    copy_backbone(pretrained, state)
    return state


def pretrain_finetune(config: ExperimentConfig, catalog: DomainCatalog, seed: int) -> Tuple[ModelState, TrainHistory]:
    """
    Pré-entraînement contrastif (SimCLR ou SimSiam) puis affinage supervisé sur la source.

    Returns:
        Tuple (modèle affiné à la meilleure époque, historique des deux phases)
    """
    if not config.is_contrastive:
        raise TrainingError(f"pretrain_finetune requiert une variante contrastive, trouvé {config.model_variant}")
    history = TrainHistory()
    pretrained = pretrain_contrastive(config, catalog, seed, history)
    state = initialize_from_pretrained(pretrained, config, seed)
    pools = prepare_pools(config, catalog, seed, contrastive=False)
    best = _fit(state, config, pools, seed, FINETUNE_PHASE, config.epochs, history,
                supervised=True, contrastive_weight=0.0)
    return best, history


def _replicate_worker(args):
    config, catalog, seed = args
    catalog.reset_counts()
    try:
        state, history = train(config, catalog, seed)
    except Exception as e:
        raise ReplicateError(seed, e)
    return seed, state, history, catalog.read_counts()


def run_replicates(config: ExperimentConfig, catalog: DomainCatalog, seeds: Optional[Sequence[int]] = None,
                   workers: int = 1) -> List[Tuple[int, ModelState, TrainHistory]]:
    """
    Entraîne un modèle indépendant par graine.

    Args:
        config: Configuration d'expérience
        catalog: Catalogue des domaines
        seeds: Graines (par défaut config.seeds), dans l'ordre de sortie
        workers: Nombre de processus (1 = séquentiel)

    Raises:
        ReplicateError: Échec d'une graine (porte l'identifiant de la graine)
    """
    seeds = [int(s) for s in (config.seeds if seeds is None else seeds)]
    if workers <= 1 or len(seeds) <= 1:
        results = []
        for seed in seeds:
            try:
                state, history = train(config, catalog, seed)
            except Exception as e:
                raise ReplicateError(seed, e)
            results.append((seed, state, history))
        return results

    context = multiprocessing.get_context("spawn")
    with context.Pool(processes=min(workers, len(seeds))) as pool:
        outputs = pool.map(_replicate_worker, [(config, catalog, seed) for seed in seeds])
    for _, _, _, counts in outputs:
        catalog.merge_counts(counts)
    return [(seed, state, history) for seed, state, history, _ in outputs]
