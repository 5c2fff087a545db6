"""Cascaded multi-modal fusion for referring image segmentation."""

from .cmf import CMF, CMFConfig, adapt_language, image_to_word_attention
from .estimator import ReferringSegmenter
from .harness import TrainConfig, ablate, evaluate, poly_lr, predict, preset, train
from .langenc import Vocabulary, build_vocabulary, tokenize
from .metrics import MetricsReport, overall_iou, precision_at, sample_iou
from .model import ModelConfig, ReferringSegmentationNet, build_model

__version__ = "0.1.0"
