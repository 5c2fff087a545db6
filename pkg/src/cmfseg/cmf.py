"""Cascaded multi-modal fusion: image-to-word attention, a cascade of
language-conditioned atrous fusion layers, a parallel atrous branch, and a
1x1 merge."""

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigurationError, InvalidInputError
from .langenc import last_word_state, length_mask

COORD_DIM = 8


@dataclass
class CMFConfig:
    dilations: list = field(default_factory=lambda: [1, 3, 5, 7, 9])
    out_dim: int = 32
    fusion_dim: int = None  # D_m; None means out_dim
    attention_dim: int = None  # projection size for W_v / W_h; None means fusion_dim
    use_attention: bool = True
    use_parallel_branch: bool = True
    use_cascade: bool = True
    parallel_input: str = "fused"  # "fused" (F_0) or "concat" ([V, S, L'])

    def __post_init__(self):
        self.dilations = [int(r) for r in self.dilations]
        if self.fusion_dim is None:
            self.fusion_dim = self.out_dim
        if self.attention_dim is None:
            self.attention_dim = self.fusion_dim
        self.validate()

    def validate(self):
        r = self.dilations
        if (self.use_cascade or self.use_parallel_branch) and not r:
            raise ConfigurationError("dilation schedule is empty")
        if any(x < 1 or x % 2 == 0 for x in r):
            raise ConfigurationError(f"dilations must be odd positive ints, got {r}")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ConfigurationError(f"dilations must be strictly increasing, got {r}")
        if min(self.out_dim, self.fusion_dim, self.attention_dim) < 1:
            raise ConfigurationError("feature dimensions must be >= 1")
        if self.parallel_input not in ("fused", "concat"):
            raise ConfigurationError(f"unknown parallel_input {self.parallel_input!r}")

    def to_dict(self):
        return asdict(self)


def image_to_word_attention(V, H, lengths, W_v, W_h):
    """Region-to-word attention weights.

    Parameters
    ----------
    V : (B, D_v, h, w) visual map
    H : (B, T, D_w) word states
    lengths : (B,) number of valid words
    W_v : (D_a, D_v) visual projection
    W_h : (D_a, D_w) word projection

    Returns
    -------
    (B, h*w, T) weights; each row is a softmax over the valid words and PAD
    columns are exactly zero.
    """
    if (lengths < 1).any():
        raise InvalidInputError("attention needs at least one valid word")
    v = V.flatten(2).transpose(1, 2) @ W_v.T  # (B, hw, D_a)
    k = H @ W_h.T  # (B, T, D_a)
    scores = v @ k.transpose(1, 2)
    valid = length_mask(lengths, H.shape[1])[:, None, :]
    scores = scores.masked_fill(~valid, float("-inf"))
    return torch.softmax(scores, dim=-1)


def adapt_language(A, H, size):
    """Attention-weighted sum of word states at every region -> (B, D_w, h, w)."""
    h, w = size
    if A.shape[1] != h * w or A.shape[2] != H.shape[1]:
        raise InvalidInputError(f"attention {tuple(A.shape)} inconsistent with words {tuple(H.shape)}")
    L = A @ H  # (B, hw, D_w)
    return L.transpose(1, 2).reshape(H.shape[0], H.shape[2], h, w)


class FuseStep(nn.Module):
    """One fusion layer: conv_r( relu( emb_vis([V, S, F_prev]) * emb_lang(L') ) ).

    ``rate=None`` builds the initial layer, which uses a 1x1 conv and takes
    no previous fusion result.
    """

    def __init__(self, visual_dim, word_dim, fusion_dim, rate=None):
        super().__init__()
        self.rate = rate
        in_dim = visual_dim + COORD_DIM + (0 if rate is None else fusion_dim)
        self.emb_vis = nn.Conv2d(in_dim, fusion_dim, 1)
        self.emb_lang = nn.Conv2d(word_dim, fusion_dim, 1)
        if rate is None:
            self.conv = nn.Conv2d(fusion_dim, fusion_dim, 1)
        else:
            if rate < 1:
                raise ConfigurationError(f"dilation rate must be >= 1, got {rate}")
            self.conv = nn.Conv2d(fusion_dim, fusion_dim, 3, padding=rate, dilation=rate)

    def forward(self, V, S, F_prev, L):
        parts = [V, S] if self.rate is None else [V, S, F_prev]
        if self.rate is not None and F_prev is None:
            raise InvalidInputError("cascaded fusion layer needs the previous fusion result")
        x = torch.cat(parts, dim=1)
        if x.shape[1] != self.emb_vis.in_channels:
            raise InvalidInputError(
                f"expected {self.emb_vis.in_channels} visual channels, got {x.shape[1]}")
        return self.conv(F.relu(self.emb_vis(x) * self.emb_lang(L)))


class CMF(nn.Module):
    """Cascaded multi-modal fusion for one pyramid level."""

    def __init__(self, visual_dim, word_dim, cfg=None):
        super().__init__()
        cfg = cfg or CMFConfig()
        cfg.validate()
        self.cfg = cfg
        dm = cfg.fusion_dim
        if cfg.use_attention:
            self.W_v = nn.Parameter(torch.empty(cfg.attention_dim, visual_dim))
            self.W_h = nn.Parameter(torch.empty(cfg.attention_dim, word_dim))
        self.fuse0 = FuseStep(visual_dim, word_dim, dm)
        if cfg.use_cascade:
            self.cascade = nn.ModuleList(
                FuseStep(visual_dim, word_dim, dm, rate=r) for r in cfg.dilations)
        merge_in = 0
        if cfg.use_parallel_branch:
            pin = dm if cfg.parallel_input == "fused" else visual_dim + COORD_DIM + word_dim
            self.parallel = nn.ModuleList(
                nn.Conv2d(pin, dm, 3, padding=r, dilation=r) for r in cfg.dilations)
            merge_in += dm * len(cfg.dilations)
        if cfg.use_cascade:
            merge_in += dm
        if merge_in == 0:
            merge_in = dm
        self.merge = nn.Conv2d(merge_in, cfg.out_dim, 1)
        if cfg.use_attention:
            for p in (self.W_v, self.W_h):
                bound = p.shape[1] ** -0.5
                nn.init.uniform_(p, -bound, bound)

    def language(self, V, H, lengths):
        """Per-region language map L' and, when attention is on, the weights."""
        h, w = V.shape[-2:]
        if self.cfg.use_attention:
            A = image_to_word_attention(V, H, lengths, self.W_v, self.W_h)
            return adapt_language(A, H, (h, w)), A
        last = last_word_state(H, lengths)
        return last[:, :, None, None].expand(-1, -1, h, w), None

    def forward(self, V, S, H, lengths):
        L, _ = self.language(V, H, lengths)
        f0 = self.fuse0(V, S, None, L)
        outs = []
        if self.cfg.use_parallel_branch:
            src = f0 if self.cfg.parallel_input == "fused" else torch.cat([V, S, L], dim=1)
            outs.extend(F.relu(conv(src)) for conv in self.parallel)
        if self.cfg.use_cascade:
            f = f0
            for step in self.cascade:
                f = step(V, S, f, L)
            outs.append(f)
        if not outs:
            outs = [f0]
        return F.relu(self.merge(torch.cat(outs, dim=1)))
