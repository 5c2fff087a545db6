"""Small convolutional backbone producing a same-size feature pyramid, plus
the 8-channel spatial coordinate map."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import InvalidInputError

LEVELS = (2, 3, 4, 5)
STRIDE = 8


def spatial_coords(h, w, dtype=np.float64):
    """Per-cell [cx, cy, left, right, top, bottom, 1/w, 1/h] on a [-1, 1] grid.

    Returns an array of shape (h, w, 8).
    """
    if h < 1 or w < 1:
        raise InvalidInputError(f"grid size must be positive, got {h}x{w}")
    j = np.arange(w, dtype=np.float64)
    i = np.arange(h, dtype=np.float64)
    # integer numerators keep the grid exactly antisymmetric about 0
    left, right = (2 * j - w) / w, (2 * j + 2 - w) / w
    top, bottom = (2 * i - h) / h, (2 * i + 2 - h) / h
    cx, cy = (2 * j + 1 - w) / w, (2 * i + 1 - h) / h
    out = np.empty((h, w, 8), dtype=np.float64)
    out[..., 0] = cx[None, :]
    out[..., 1] = cy[:, None]
    out[..., 2] = left[None, :]
    out[..., 3] = right[None, :]
    out[..., 4] = top[:, None]
    out[..., 5] = bottom[:, None]
    out[..., 6] = 1.0 / w
    out[..., 7] = 1.0 / h
    return out.astype(dtype, copy=False)


def spatial_coords_tensor(h, w, batch=1, dtype=torch.float32, device=None):
    """Coordinates as a (batch, 8, h, w) tensor for channel-first models."""
    s = torch.from_numpy(spatial_coords(h, w)).to(dtype=dtype, device=device)
    return s.permute(2, 0, 1).unsqueeze(0).expand(batch, -1, -1, -1)


@dataclass
class FeaturePyramid:
    """Levels 2..5, each (B, D_v, h, w) and all of the same spatial size."""

    levels: dict
    image_size: tuple

    def __post_init__(self):
        sizes = {tuple(v.shape[-2:]) for v in self.levels.values()}
        if len(sizes) != 1:
            raise InvalidInputError(f"pyramid levels disagree in spatial size: {sizes}")

    @property
    def spatial_size(self):
        return tuple(next(iter(self.levels.values())).shape[-2:])

    def __getitem__(self, level):
        return self.levels[level]


def _stage(cin, cout, strides=(1, 1), dilation=1):
    s1, s2 = strides
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=s1, padding=dilation, dilation=dilation),
        nn.ReLU(),
        nn.Conv2d(cout, cout, 3, stride=s2, padding=dilation, dilation=dilation),
        nn.ReLU(),
    )


class Backbone(nn.Module):
    """Four 2-conv stages; total stride 8 reached at stage 3, stages 4-5 dilated.

    Stage 2 downsamples twice (stride 4) and is average-pooled to the common
    grid before its 1x1 projection.
    """

    def __init__(self, visual_dim=64, widths=(16, 32, 64, 64)):
        super().__init__()
        w2, w3, w4, w5 = widths
        self.stage2 = _stage(3, w2, strides=(2, 2))
        self.stage3 = _stage(w2, w3, strides=(2, 1))
        self.stage4 = _stage(w3, w4, dilation=2)
        self.stage5 = _stage(w4, w5, dilation=2)
        self.proj = nn.ModuleDict({
            str(l): nn.Conv2d(c, visual_dim, 1) for l, c in zip(LEVELS, widths)
        })
        self.visual_dim = visual_dim

    def forward(self, images):
        if images.dim() != 4 or images.shape[1] != 3:
            raise InvalidInputError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        H, W = images.shape[-2:]
        if H % STRIDE or W % STRIDE:
            raise InvalidInputError(f"image size {H}x{W} not divisible by stride {STRIDE}")
        c2 = self.stage2(images)
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        c5 = self.stage5(c4)
        feats = {2: F.avg_pool2d(c2, 2), 3: c3, 4: c4, 5: c5}
        levels = {l: self.proj[str(l)](feats[l]) for l in LEVELS}
        return FeaturePyramid(levels, (H, W))


def extract_features(image, backbone):
    """Run the backbone on one H x W x 3 array in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected H x W x 3 image, got {arr.shape}")
    p = next(backbone.parameters())
    x = torch.as_tensor(arr, dtype=p.dtype).permute(2, 0, 1).unsqueeze(0)
    return backbone(x)
