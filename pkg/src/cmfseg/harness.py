"""Training, evaluation, prediction and ablation drivers."""

import csv
import dataclasses
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cmf import CMFConfig
from .data import load_split, read_image, write_mask, write_probability
from .exceptions import CheckpointError, ConfigurationError, DataError, InvalidInputError, NumericError
from .langenc import DEFAULT_MAX_LEN, Vocabulary, batch_tokens, build_vocabulary, normalize, tokenize
from .maskhead import bce_loss, binarize
from .metrics import MetricsReport, sample_iou
from .model import ModelConfig, build_model

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 2.5e-4
    weight_decay: float = 5e-4
    power: float = 0.9
    max_steps: int = 3000
    batch_size: int = 8
    seed: int = 0
    visual_dim: int = 64
    word_dim: int = 64
    image_size: int = 64
    max_len: int = DEFAULT_MAX_LEN
    levels: int = 4
    cmf: CMFConfig = field(default_factory=CMFConfig)
    backbone_frozen: bool = False
    manifest: str = None
    train_split: str = "train"
    train_limit: int = None
    checkpoint_every: int = 0
    out_dir: str = None

    def __post_init__(self):
        if isinstance(self.cmf, dict):
            self.cmf = CMFConfig(**self.cmf)
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigurationError("learning rate must be > 0 and weight decay >= 0")
        if not 0 < self.power <= 2:
            raise ConfigurationError(f"poly power must be in (0, 2], got {self.power}")
        if self.max_steps < 1 or self.batch_size < 1:
            raise ConfigurationError("max_steps and batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        d = self.to_dict()
        cmf = dict(d.pop("cmf"))
        cmf.update(changes.pop("cmf", {}))
        d.update(changes)
        return TrainConfig(**d, cmf=CMFConfig(**cmf))

    def model_config(self, vocab_size):
        return ModelConfig(vocab_size=vocab_size, visual_dim=self.visual_dim,
                           word_dim=self.word_dim, image_size=self.image_size,
                           max_len=self.max_len, levels=self.levels, cmf=self.cmf)


PRESETS = {
    "desk": dict(visual_dim=64, word_dim=64, image_size=64, max_steps=3000,
                 cmf=dict(out_dim=32, fusion_dim=32)),
    "paper": dict(visual_dim=1000, word_dim=1000, image_size=320,
                  cmf=dict(out_dim=500, fusion_dim=500)),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}")
    d = dict(PRESETS[name])
    cmf = dict(d.pop("cmf"))
    cmf.update(overrides.pop("cmf", {}))
    d.update(overrides)
    return TrainConfig(**d, cmf=CMFConfig(**cmf))


def poly_lr(step, cfg):
    """base * (1 - step / max_steps) ** power."""
    if not 0 <= step <= cfg.max_steps:
        raise InvalidInputError(f"step {step} outside [0, {cfg.max_steps}]")
    return cfg.lr * (1.0 - step / cfg.max_steps) ** cfg.power


# --- data plumbing -----------------------------------------------------------

def encode_texts(texts, vocab, max_len, warn=False):
    seqs = []
    for t in texts:
        n = len(normalize(t).split())
        if warn and n > max_len:
            warnings.warn(f"expression has {n} words; only the first {max_len} are used")
        seqs.append(tokenize(t, vocab, max_len))
    return batch_tokens(seqs)


def to_image_tensor(images):
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)


@dataclass
class TrainResult:
    model: torch.nn.Module
    vocab: Vocabulary
    optimizer: torch.optim.Optimizer
    losses: list  # (step, lr, loss)
    config: TrainConfig

    def checkpoint(self):
        return make_checkpoint(self.model, self.vocab, self.optimizer, self.config,
                               len(self.losses))


def fit_arrays(cfg, images, masks, expressions, vocab=None, log_path=None, on_checkpoint=None):
    """Train a fresh model on in-memory arrays (images N x H x W x 3 in [0, 1])."""
    torch.manual_seed(cfg.seed)
    vocab = vocab or build_vocabulary(expressions)
    model = build_model(cfg.model_config(len(vocab)), cfg.seed)
    if cfg.backbone_frozen:
        model.backbone.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    # torch's Adam weight_decay adds wd * p to the gradient: classic Adam + L2
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    x = to_image_tensor(images)
    y = torch.from_numpy(np.asarray(masks, dtype=np.float32))
    ids, lengths = encode_texts(expressions, vocab, cfg.max_len)
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    order, pos = rng.permutation(n), 0

    losses = []
    log_fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(log_fh) if log_fh else None
    if writer:
        writer.writerow(["step", "lr", "loss"])
    model.train()
    # denormals stall CPU kernels late in training; flushing is process-global
    torch.set_flush_denormal(True)
    try:
        for step in range(cfg.max_steps):
            if pos + cfg.batch_size > n:
                order, pos = rng.permutation(n), 0
            idx = torch.from_numpy(order[pos:pos + cfg.batch_size])
            pos += cfg.batch_size
            lr = poly_lr(step, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = bce_loss(model(x[idx], ids[idx], lengths[idx]), y[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}", step=step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append((step, lr, loss.item()))
            if writer:
                writer.writerow([step, repr(lr), repr(loss.item())])
            if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                on_checkpoint(make_checkpoint(model, vocab, opt, cfg, step + 1))
    finally:
        torch.set_flush_denormal(False)
        if log_fh:
            log_fh.close()
    model.eval()
    return TrainResult(model, vocab, opt, losses, cfg)


def train(cfg, log_path=None):
    """Train from ``cfg.manifest``; writes loss log and checkpoints under ``cfg.out_dir``."""
    if not cfg.manifest:
        raise DataError("no dataset manifest configured")
    images, masks, exprs = load_split(cfg.manifest, cfg.train_split, cfg.image_size)
    if cfg.train_limit:
        images, masks, exprs = images[:cfg.train_limit], masks[:cfg.train_limit], exprs[:cfg.train_limit]
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out / "loss_log.csv"
    save = (lambda ck: save_checkpoint(ck, out / f"checkpoint_{ck['step']:06d}.pt")) if out else None
    result = fit_arrays(cfg, images, masks, exprs, log_path=log_path, on_checkpoint=save)
    if out:
        result.vocab.save(out / "vocab.txt")
        save_checkpoint(result.checkpoint(), out / "checkpoint.pt")
    return result


# --- checkpoints -------------------------------------------------------------

def make_checkpoint(model, vocab, optimizer, cfg, step):
    return {
        "format_version": FORMAT_VERSION,
        "step": step,
        "config": cfg.to_dict(),
        "vocab": list(vocab.tokens),
        "model": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }


def save_checkpoint(ckpt, path):
    torch.save(ckpt, path)
    return Path(path)


def load_checkpoint(path):
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if ckpt.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {ckpt.get('format_version')} != supported {FORMAT_VERSION}")
    return ckpt


def restore(ckpt):
    """Rebuild (model, vocab, cfg) from a checkpoint dict."""
    if isinstance(ckpt, (str, Path)):
        ckpt = load_checkpoint(ckpt)
    if ckpt.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {ckpt.get('format_version')}")
    cfg = TrainConfig.from_dict(ckpt["config"])
    vocab = Vocabulary(ckpt["vocab"])
    model = build_model(cfg.model_config(len(vocab)), cfg.seed)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, vocab, cfg


# --- inference -----------------------------------------------------------------

@torch.no_grad()
def predict_logits(model, vocab, cfg, images, expressions, batch_size=32, warn=False):
    ids, lengths = encode_texts(expressions, vocab, cfg.max_len, warn=warn)
    x = to_image_tensor(images).to(next(model.parameters()).dtype)
    out = [model(x[i:i + batch_size], ids[i:i + batch_size], lengths[i:i + batch_size])
           for i in range(0, x.shape[0], batch_size)]
    return torch.cat(out).numpy()


def score_predictions(pred_masks, gt_masks):
    return MetricsReport.from_scores([sample_iou(p, g) for p, g in zip(pred_masks, gt_masks)])


def evaluate(ckpt, split="val", manifest=None, dump_dir=None):
    """Binarize predictions at 0.5 and score them against the split's masks."""
    model, vocab, cfg = restore(ckpt)
    manifest = manifest or cfg.manifest
    images, masks, exprs = load_split(manifest, split, cfg.image_size)
    preds = binarize(predict_logits(model, vocab, cfg, images, exprs))
    if dump_dir:
        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for k, p in enumerate(preds):
            write_mask(dump / f"{split}_{k:05d}.png", p)
    return score_predictions(preds, masks)


def predict(ckpt, image_path, expression, out_path, prob_path=None):
    """Segment ``expression`` in one image; writes a {0,255} mask PNG."""
    model, vocab, cfg = restore(ckpt)
    if not normalize(expression):
        raise InvalidInputError("empty expression")
    image = read_image(image_path, cfg.image_size)
    t0 = time.perf_counter()
    logits = predict_logits(model, vocab, cfg, image[None], [expression], warn=True)[0]
    latency = time.perf_counter() - t0
    mask = binarize(logits)
    write_mask(out_path, mask)
    prob = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
    if prob_path:
        write_probability(prob_path, prob)
    print(f"predict latency: {latency * 1000:.1f} ms")
    return mask, prob


# --- ablations -----------------------------------------------------------------

def _variant(base, levels=1, **cmf):
    return base.replace(levels=levels, cmf=cmf)


def ablation_variants(base, axis):
    """Ordered {row name: TrainConfig} for one ablation axis."""
    if axis == "fusion-variant":
        return {
            "Baseline": _variant(base, use_attention=False, use_parallel_branch=False, use_cascade=False),
            "Baseline + ATTN": _variant(base, use_attention=True, use_parallel_branch=False, use_cascade=False),
            "Baseline + ATTN + ASPP": _variant(base, use_attention=True, use_parallel_branch=True, use_cascade=False),
            "CMF Module": _variant(base, use_attention=True, use_parallel_branch=True, use_cascade=True),
        }
    if axis == "dilation-schedule":
        rows = {"Conv 1x1": _variant(base, use_attention=True, use_parallel_branch=False, use_cascade=False)}
        rates = [1, 3, 5, 7, 9, 11, 13]
        for k in range(1, len(rates) + 1):
            r = rates[:k]
            rows[f"R = {','.join(map(str, r))}"] = _variant(
                base, dilations=r, use_attention=True, use_parallel_branch=True, use_cascade=True)
        return rows
    if axis == "level-count":
        names = ["V5", "V5,V4", "V5,V4,V3", "V5,V4,V3,V2"]
        return {f"m={{{n}}}": _variant(base, levels=m + 1, use_attention=True,
                                        use_parallel_branch=True, use_cascade=True)
                for m, n in enumerate(names)}
    raise ConfigurationError(f"unknown ablation axis {axis!r}")


def average_reports(reports):
    reports = list(reports)
    prec = {x: float(np.mean([r.precision[x] for r in reports])) for x in reports[0].precision}
    return MetricsReport(float(np.mean([r.overall_iou for r in reports])),
                         float(np.mean([r.mean_iou for r in reports])),
                         prec, reports[0].count)


def ablate(base, axis, seeds=(0,), split="val", data=None):
    """Train and evaluate every variant of ``axis`` for each seed; returns
    {row name: seed-averaged MetricsReport} in table order.

    ``data`` may supply preloaded {"train": (images, masks, exprs), split: (...)}
    to avoid re-reading PNGs per variant.
    """
    if data is None:
        data = {s: load_split(base.manifest, s, base.image_size) for s in (base.train_split, split)}
    tr_images, tr_masks, tr_exprs = data[base.train_split]
    if base.train_limit:
        tr_images, tr_masks, tr_exprs = (tr_images[:base.train_limit], tr_masks[:base.train_limit],
                                         tr_exprs[:base.train_limit])
    ev_images, ev_masks, ev_exprs = data[split]
    vocab = build_vocabulary(tr_exprs)
    table = {}
    for name, cfg in ablation_variants(base, axis).items():
        reports = []
        for seed in seeds:
            run = cfg.replace(seed=seed)
            res = fit_arrays(run, tr_images, tr_masks, tr_exprs, vocab=vocab)
            preds = binarize(predict_logits(res.model, vocab, run, ev_images, ev_exprs))
            reports.append(score_predictions(preds, ev_masks))
            log.info("%s seed=%d IoU=%.4f", name, seed, reports[-1].overall_iou)
        table[name] = average_reports(reports)
    return table
