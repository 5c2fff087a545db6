"""End-to-end referring segmentation network."""

import math
import zlib
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .cmf import CMF, CMFConfig
from .exceptions import ConfigurationError
from .langenc import DEFAULT_MAX_LEN, LanguageEncoder
from .levelfuse import BiConvGRU
from .maskhead import MaskDecoder
from .visenc import STRIDE, Backbone, spatial_coords_tensor

TOP_DOWN = (5, 4, 3, 2)


@dataclass
class ModelConfig:
    vocab_size: int = 64
    visual_dim: int = 64
    word_dim: int = 64
    image_size: int = 64
    max_len: int = DEFAULT_MAX_LEN
    levels: int = 4
    cmf: CMFConfig = field(default_factory=CMFConfig)

    def __post_init__(self):
        if isinstance(self.cmf, dict):
            self.cmf = CMFConfig(**self.cmf)
        if not 1 <= self.levels <= 4:
            raise ConfigurationError(f"levels must be in 1..4, got {self.levels}")
        if self.image_size % STRIDE:
            raise ConfigurationError(f"image_size must be divisible by {STRIDE}")

    @property
    def level_ids(self):
        return TOP_DOWN[: self.levels]

    def to_dict(self):
        return asdict(self)


class ReferringSegmentationNet(nn.Module):
    """Backbone + word encoder -> per-level CMF -> Bi-ConvGRU -> decoder logits."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg.visual_dim)
        self.language = LanguageEncoder(cfg.vocab_size, cfg.word_dim)
        self.fusion = nn.ModuleDict({
            str(l): CMF(cfg.visual_dim, cfg.word_dim, cfg.cmf) for l in cfg.level_ids
        })
        self.levelfuse = BiConvGRU(cfg.cmf.out_dim)
        self.decoder = MaskDecoder(cfg.cmf.out_dim)

    def forward(self, images, ids, lengths):
        pyramid = self.backbone(images)
        words = self.language(ids, lengths)
        h, w = pyramid.spatial_size
        S = spatial_coords_tensor(h, w, images.shape[0], dtype=images.dtype, device=images.device)
        fused = [self.fusion[str(l)](pyramid[l], S, words, lengths) for l in self.cfg.level_ids]
        return self.decoder(self.levelfuse(fused))


def _fan_in(p):
    return p.shape[1] * math.prod(p.shape[2:]) if p.dim() > 1 else p.shape[0]


def init_parameters(model, seed=0):
    """Deterministic per-parameter initialization.

    Each tensor draws from its own generator seeded by (seed, parameter name),
    so adding or removing a submodule leaves every other tensor unchanged.
    Conv kernels use He-uniform bounds and conv biases start at zero;
    everything else uses uniform(+-1/sqrt(fan_in)). LSTM forget-gate biases
    start at 1, and the language embeddings of the fusion layers get a +1
    bias so the Hadamard gate starts near identity instead of shrinking the
    signal at every cascade step.
    """
    modules = dict(model.named_modules())
    for name, p in model.named_parameters():
        gen = torch.Generator().manual_seed(seed * 1_000_003 + zlib.crc32(name.encode()))
        owner = modules[name.rsplit(".", 1)[0]] if "." in name else model
        leaf = name.rsplit(".", 1)[-1]
        with torch.no_grad():
            if isinstance(owner, nn.Embedding):
                bound = 1.0
            elif isinstance(owner, nn.LSTM):
                bound = owner.hidden_size ** -0.5
            elif isinstance(owner, nn.Conv2d) and leaf == "weight":
                bound = math.sqrt(6.0 / _fan_in(p))
            elif isinstance(owner, nn.Conv2d):
                bound = math.sqrt(1.0 / _fan_in(owner.weight))
            else:
                bound = _fan_in(p) ** -0.5
            if leaf == "bias" and isinstance(owner, (BiConvGRU, nn.Conv2d)):
                p.zero_()
                continue
            p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64)
                    .mul_(2 * bound).sub_(bound).to(p.dtype))
            if isinstance(owner, nn.LSTM) and leaf.startswith("bias"):
                hs = owner.hidden_size
                p[hs:2 * hs] = 0.5  # bias_ih + bias_hh: forget gate starts at 1
            if name.endswith("emb_lang.bias"):
                p.add_(1.0)  # language gate starts near identity
    return model


def build_model(cfg, seed=0):
    return init_parameters(ReferringSegmentationNet(cfg), seed)
