"""
Fonctions de perte : Dice logarithmique, NT-Xent adapté, SimSiam et perte jointe.

Toutes les pertes sont moyennées sur le mini-lot.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from ..core.exceptions import LossError


logger = logging.getLogger(__name__)

Scalar = Union[torch.Tensor, float]


@dataclass
class ProjectionBatch:
    """Projections des deux vues ; la ligne i de z_a et de z_b forme une paire positive."""
    z_a: torch.Tensor
    z_b: torch.Tensor
    domain_ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.z_a.shape != self.z_b.shape or self.z_a.dim() != 2:
            raise LossError(f"ProjectionBatch: formes incompatibles {tuple(self.z_a.shape)} / "
                            f"{tuple(self.z_b.shape)}")
        if self.domain_ids is not None and len(self.domain_ids) != self.z_a.shape[0]:
            raise LossError("ProjectionBatch: un domain_id par ligne est requis")
        if not (torch.isfinite(self.z_a).all() and torch.isfinite(self.z_b).all()):
            raise LossError("ProjectionBatch: projections non finies")

    def __len__(self) -> int:
        return int(self.z_a.shape[0])

    def by_domain(self):
        """Itère sur les sous-lots (domain_id, z_a, z_b) dans l'ordre de première apparition."""
        if self.domain_ids is None:
            yield None, self.z_a, self.z_b
            return
        domains = list(dict.fromkeys(self.domain_ids))
        for domain in domains:
            rows = [i for i, d in enumerate(self.domain_ids) if d == domain]
            index = torch.tensor(rows, device=self.z_a.device)
            yield domain, self.z_a.index_select(0, index), self.z_b.index_select(0, index)


def dice_loss(p: torch.Tensor, y: torch.Tensor, mask, epsilon: float = 1e-12) -> torch.Tensor:
    """
    Perte Dice logarithmique moyennée sur les classes disponibles.

    Args:
        p: Probabilités [N, C, h, w]
        y: Vérité terrain binaire [N, C, h, w]
        mask: Disponibilité des classes, [C] ou [N, C]
        epsilon: Constante de lissage (numérateur et dénominateur)

    Returns:
        Scalaire

    Raises:
        LossError: Formes incompatibles ou aucune classe disponible
    """
    if p.shape != y.shape or p.dim() != 4:
        raise LossError(f"dice_loss: formes incompatibles {tuple(p.shape)} / {tuple(y.shape)}")
    y = y.to(dtype=p.dtype)
    mask = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask,
                           device=p.device)
    n, c = p.shape[:2]
    if mask.dim() == 1:
        mask = mask.unsqueeze(0).expand(n, c)
    if tuple(mask.shape) != (n, c):
        raise LossError(f"dice_loss: masque de forme {tuple(mask.shape)}, attendu [{c}] ou [{n}, {c}]")
    weights = mask.to(dtype=p.dtype)
    available = mask.bool().any(dim=0)
    if not available.any():
        raise LossError("dice_loss: toutes les classes sont masquées")

    intersection = ((y * p).sum(dim=(2, 3)) * weights).sum(dim=0)
    total = ((y.sum(dim=(2, 3)) + p.sum(dim=(2, 3))) * weights).sum(dim=0)
    terms = -torch.log((2.0 * intersection + epsilon) / (epsilon + total))
    return terms[available].mean()


def _warn_zero_norm(norms: torch.Tensor) -> None:
    if bool((norms == 0).any()):
        logger.warning("Vecteur de projection nul: similarité cosinus fixée à 0")


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Similarité cosinus de deux vecteurs (0 si l'un est nul)."""
    u = torch.as_tensor(u)
    if not u.is_floating_point():
        u = u.to(torch.float64)
    v = torch.as_tensor(v).to(dtype=u.dtype, device=u.device)
    norms = torch.stack([u.norm(), v.norm()])
    if bool((norms == 0).any()):
        _warn_zero_norm(norms)
        return (u * v).sum() * 0.0
    return (u * v).sum() / (norms[0] * norms[1])


def _normalize_rows(z: torch.Tensor) -> torch.Tensor:
    norms = z.norm(dim=1, keepdim=True)
    _warn_zero_norm(norms)
    return z / torch.where(norms == 0, torch.ones_like(norms), norms)


def rowwise_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Similarité cosinus ligne à ligne, [N]."""
    return (_normalize_rows(a) * _normalize_rows(b)).sum(dim=1)


def ntxent_term(anchor: torch.Tensor, positive: torch.Tensor, negatives: Sequence[torch.Tensor],
                tau: float, include_positive: bool = False) -> torch.Tensor:
    """
    Terme l(z', z'') pour une ancre, sa vue positive et un ensemble explicite de négatifs.

    l = -log( exp(d(z', z'')/tau) / sum_k exp(d(z', z_k)/tau) ), la somme portant
    sur les négatifs (et sur le positif si ``include_positive``).
    """
    if len(negatives) == 0 and not include_positive:
        raise LossError("ntxent_term: au moins un négatif est requis")
    positive_logit = cosine_similarity(anchor, positive) / tau
    logits = [cosine_similarity(anchor, k) / tau for k in negatives]
    if include_positive:
        logits.append(positive_logit)
    return torch.logsumexp(torch.stack(logits), dim=0) - positive_logit


def _ntxent_group(z_a: torch.Tensor, z_b: torch.Tensor, tau: float, include_positive: bool) -> torch.Tensor:
    n = z_a.shape[0]
    if n < 2:
        raise LossError(f"ntxent_loss: au moins 2 paires par domaine sont requises, trouvé {n}")
    z = _normalize_rows(torch.cat([z_a, z_b], dim=0))
    logits = z @ z.T / tau
    pair_id = torch.arange(2 * n, device=z.device) % n
    positive_col = (torch.arange(2 * n, device=z.device) + n) % (2 * n)
    allowed = pair_id.unsqueeze(0) != pair_id.unsqueeze(1)
    if include_positive:
        allowed[torch.arange(2 * n, device=z.device), positive_col] = True
    denominator = torch.logsumexp(logits.masked_fill(~allowed, float("-inf")), dim=1)
    positives = logits[torch.arange(2 * n, device=z.device), positive_col]
    return (denominator - positives).mean()


def ntxent_loss(batch: ProjectionBatch, tau: float = 0.5, include_positive: bool = False) -> torch.Tensor:
    """
    NT-Xent symétrique : moyenne des 2N termes orientés l(z'_i, z''_i) et l(z''_i, z'_i).

    Les négatifs d'une ancre sont les deux vues de toutes les autres paires du
    même domaine. Avec plusieurs domaines, les pertes par domaine sont moyennées.

    Raises:
        LossError: Moins de 2 paires dans un domaine
    """
    if not tau > 0:
        raise LossError(f"ntxent_loss: tau doit être > 0, trouvé {tau}")
    losses = [_ntxent_group(z_a, z_b, tau, include_positive) for _, z_a, z_b in batch.by_domain()]
    return torch.stack(losses).mean()


def simsiam_loss(batch: ProjectionBatch, predictor: Optional[Callable[[torch.Tensor], torch.Tensor]]) -> torch.Tensor:
    """
    -[d(Q(z'), sg(z'')) + d(Q(z''), sg(z'))], moyenné sur les paires.

    Raises:
        LossError: Si le prédicteur est absent
    """
    if predictor is None:
        raise LossError("simsiam_loss: un prédicteur Q est requis")
    q_a = predictor(batch.z_a)
    q_b = predictor(batch.z_b)
    similarity = rowwise_cosine(q_a, batch.z_b.detach()) + rowwise_cosine(q_b, batch.z_a.detach())
    return -similarity.mean()


def joint_loss(l_con_source: Optional[Scalar], l_con_target: Optional[Scalar], l_sup: Optional[Scalar],
               lambda_sup: float, contrastive_weight: float = 1.0) -> Scalar:
    """
    Perte jointe : w * ½(L_con_s + L_con_t) + λ * L_sup.

    Sans domaine cible, le terme contrastif est L_con_s seul ; sans terme
    contrastif (Baseline), la perte se réduit à λ * L_sup.
    """
    if l_con_source is not None and l_con_target is not None:
        contrastive = 0.5 * (l_con_source + l_con_target)
    elif l_con_source is not None:
        contrastive = l_con_source
    else:
        contrastive = l_con_target

    if l_sup is None:
        if contrastive is None:
            raise LossError("joint_loss: aucun terme fourni")
        return contrastive_weight * contrastive
    if contrastive is None:
        return lambda_sup * l_sup
    return contrastive_weight * contrastive + lambda_sup * l_sup
