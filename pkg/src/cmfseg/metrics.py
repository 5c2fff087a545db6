"""Overall IoU and precision-at-threshold evaluation."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class SampleScore:
    intersection: int
    union: int

    @property
    def iou(self):
        # both masks empty counts as a perfect prediction
        return 1.0 if self.union == 0 else self.intersection / self.union


def sample_iou(pred, gt):
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return SampleScore(int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt)))


def _nonempty(scores):
    scores = list(scores)
    if not scores:
        raise InvalidInputError("no samples to score")
    return scores


def overall_iou(scores):
    """Total intersection over total union across all samples."""
    scores = _nonempty(scores)
    inter = sum(s.intersection for s in scores)
    union = sum(s.union for s in scores)
    return 1.0 if union == 0 else inter / union


def mean_iou(scores):
    scores = _nonempty(scores)
    return float(np.mean([s.iou for s in scores]))


def precision_at(scores, thresholds=THRESHOLDS):
    """Fraction of samples whose IoU is >= each threshold."""
    scores = _nonempty(scores)
    ious = [s.iou for s in scores]
    out = {}
    for x in thresholds:
        if not 0.0 < x < 1.0:
            raise InvalidInputError(f"threshold must be in (0, 1), got {x}")
        out[x] = sum(iou >= x for iou in ious) / len(ious)
    return out


@dataclass
class MetricsReport:
    overall_iou: float
    mean_iou: float
    precision: dict = field(default_factory=dict)
    count: int = 0

    @classmethod
    def from_scores(cls, scores, thresholds=THRESHOLDS):
        scores = _nonempty(scores)
        return cls(overall_iou(scores), mean_iou(scores),
                   precision_at(scores, thresholds), len(scores))

    def to_dict(self):
        d = asdict(self)
        d["precision"] = {f"P@{x:g}": v for x, v in self.precision.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        prec = {float(k.split("@")[1]): v for k, v in d["precision"].items()}
        return cls(d["overall_iou"], d["mean_iou"], prec, d["count"])

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self, percent=True):
        """Values in table column order: P@0.5 .. P@0.9, IoU."""
        scale = 100.0 if percent else 1.0
        return [self.precision[x] * scale for x in sorted(self.precision)] + [self.overall_iou * scale]


def format_table(rows, percent=True):
    """Render {name: MetricsReport} as a fixed-width P@X / IoU table."""
    rows = dict(rows)
    if not rows:
        return ""
    thresholds = sorted(next(iter(rows.values())).precision)
    headers = [f"P@{x:g}" for x in thresholds] + ["IoU"]
    width = max(len("Method"), *(len(n) for n in rows))
    lines = [" | ".join([f"{'Method':<{width}}"] + [f"{h:>7}" for h in headers])]
    lines.append("-" * len(lines[0]))
    for name, rep in rows.items():
        lines.append(" | ".join([f"{name:<{width}}"] + [f"{v:7.2f}" for v in rep.row(percent)]))
    return "\n".join(lines)
