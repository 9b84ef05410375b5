"""
Têtes de projection contrastive (C_pool, C_ch) et prédicteur SimSiam Q.
"""
import torch
from torch import nn

from ..core.models import ArchitectureSpec


def projection_mlp(in_features: int, units: int, groups: int) -> nn.Sequential:
    """dense(units) + GroupNorm + ReLU, puis dense(units)."""
    return nn.Sequential(
        nn.Linear(in_features, units),
        nn.GroupNorm(groups, units),
        nn.ReLU(),
        nn.Linear(units, units),
    )


class ProjectionHead(nn.Module):
    """
    Agrégation des activations du goulot puis MLP partagé entre les deux vues.

    - ``pool`` : moyenne globale sur (h, w), vecteur de c valeurs
    - ``ch``   : convolution 1x1 c -> 1 qui conserve la disposition spatiale
    """

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.kind = arch.head_kind
        height, width = arch.bottleneck_shape
        if self.kind == "ch":
            self.aggregation = nn.Conv2d(arch.bottleneck_channels, 1, kernel_size=1)
            in_features = height * width
        else:
            self.aggregation = None
            in_features = arch.bottleneck_channels
        self.mlp = projection_mlp(in_features, arch.mlp_units, arch.groupnorm_groups)

    def aggregate(self, h: torch.Tensor) -> torch.Tensor:
        if self.aggregation is None:
            return h.mean(dim=(2, 3))
        return self.aggregation(h).flatten(start_dim=1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.aggregate(h))


class Predictor(nn.Module):
    """Prédicteur Q : dense(units) + ReLU + dense(units), sans goulot."""

    def __init__(self, units: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(units, units),
            nn.ReLU(),
            nn.Linear(units, units),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.layers(z)
