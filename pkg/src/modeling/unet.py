"""
Réseau de segmentation UNet 2D (backbone F) et son encodeur E.
"""
import logging
from typing import List, Tuple

import torch
from torch import nn

from ..core.models import ArchitectureSpec


logger = logging.getLogger(__name__)


class ConvBlock(nn.Module):
    """Deux fois (conv 3x3 + GroupNorm + ReLU)."""

    def __init__(self, in_channels: int, out_channels: int, groups: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.GroupNorm(groups, out_channels),
            nn.ReLU(),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.GroupNorm(groups, out_channels),
            nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class DownBlock(nn.Module):
    """Sous-échantillonnage x2 puis ConvBlock."""

    def __init__(self, in_channels: int, out_channels: int, groups: int):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.conv = ConvBlock(in_channels, out_channels, groups)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(self.pool(x))


class UpBlock(nn.Module):
    """Sur-échantillonnage x2 (convolution transposée), concaténation du skip, ConvBlock."""

    def __init__(self, in_channels: int, out_channels: int, groups: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_channels, out_channels, kernel_size=2, stride=2)
        self.conv = ConvBlock(2 * out_channels, out_channels, groups)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.conv(torch.cat([skip, self.up(x)], dim=1))


class UNet(nn.Module):
    """
    UNet paramétré par un ArchitectureSpec.

    Le niveau l utilise base_channels * 2^l canaux. Le dropout est appliqué au
    goulot d'étranglement et après les deux blocs les plus profonds du décodeur.
    La sortie est une carte de probabilités par classe (sigmoïde).
    """

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.arch = arch
        channels = [arch.base_channels * 2 ** level for level in range(arch.depth + 1)]
        groups = arch.groupnorm_groups

        self.inc = ConvBlock(arch.in_channels, channels[0], groups)
        self.downs = nn.ModuleList(
            DownBlock(channels[level - 1], channels[level], groups)
            for level in range(1, arch.depth + 1)
        )
        self.ups = nn.ModuleList(
            UpBlock(channels[level], channels[level - 1], groups)
            for level in range(arch.depth, 0, -1)
        )
        self.dropout = nn.Dropout(arch.dropout_p)
        self.outc = nn.Conv2d(channels[0], arch.n_classes, kernel_size=1)

    def encode(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Retourne les activations du goulot h (avant dropout) et les sorties de skip."""
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        h = skips.pop()
        return h, skips

    def decode_logits(self, h: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        x = self.dropout(h)
        for level, up in enumerate(self.ups):
            x = up(x, skips[-1 - level])
            if level < 2:
                x = self.dropout(x)
        return self.outc(x)

    def forward_with_features(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Probabilités et activations du goulot issues du même passage."""
        h, skips = self.encode(x)
        return torch.sigmoid(self.decode_logits(h, skips)), h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        probabilities, _ = self.forward_with_features(x)
        return probabilities
