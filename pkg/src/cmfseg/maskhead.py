"""Mask decoder, binary cross-entropy loss and binarization."""

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import InvalidInputError


class MaskDecoder(nn.Module):
    """Three [3x3 conv, ReLU, 2x bilinear upsample] stages and a 1x1 scorer.

    Channels go D_o -> D_o/2 -> D_o/4 -> D_o/4 -> 1, so stride-8 features come
    back at input resolution.
    """

    def __init__(self, in_dim=32):
        super().__init__()
        c1, c2 = max(1, in_dim // 2), max(1, in_dim // 4)
        self.convs = nn.ModuleList([
            nn.Conv2d(in_dim, c1, 3, padding=1),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.Conv2d(c2, c2, 3, padding=1),
        ])
        self.score = nn.Conv2d(c2, 1, 1)
        self.in_dim = in_dim

    def forward(self, x):
        if x.shape[1] != self.in_dim:
            raise InvalidInputError(f"decoder expects {self.in_dim} channels, got {x.shape[1]}")
        for conv in self.convs:
            x = F.relu(conv(x))
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.score(x)[:, 0]


def bce_loss(logits, target):
    """Mean pixel-wise binary cross-entropy on logits (stable form)."""
    if logits.shape != target.shape:
        raise InvalidInputError(f"logits {tuple(logits.shape)} vs mask {tuple(target.shape)}")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def binarize(logits, threshold=0.5):
    """Pixel is foreground iff sigmoid(logit) >= threshold. Accepts tensors or arrays."""
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"threshold must be in (0, 1), got {threshold}")
    cut = float(np.log(threshold) - np.log1p(-threshold))
    if isinstance(logits, torch.Tensor):
        return logits >= cut
    return np.asarray(logits) >= cut
