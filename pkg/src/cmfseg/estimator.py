"""scikit-learn compatible wrapper around the referring segmentation network."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cmf import CMFConfig
from .harness import TrainConfig, fit_arrays, predict_logits
from .maskhead import binarize
from .metrics import MetricsReport, sample_iou
from .validation import check_masks, check_X


class ReferringSegmenter(BaseEstimator):
    """Segment the object an expression refers to.

    ``X`` is a sequence of ``(image, expression)`` pairs with images of shape
    (H, W, 3), either uint8 or float in [0, 1]; ``y`` is an (N, H, W) array
    of binary masks. ``score`` returns the overall IoU.

    Parameters mirror :class:`~cmfseg.harness.TrainConfig`; the fusion
    ablation switches are exposed individually so that ``set_params`` and
    grid searches can toggle them.
    """

    def __init__(self, *, lr=2.5e-4, weight_decay=5e-4, power=0.9, max_steps=3000,
                 batch_size=8, visual_dim=64, word_dim=64, out_dim=32, fusion_dim=None,
                 dilations=(1, 3, 5, 7, 9), levels=4, use_attention=True,
                 use_parallel_branch=True, use_cascade=True, max_len=20,
                 backbone_frozen=False, threshold=0.5, random_state=0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.power = power
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.visual_dim = visual_dim
        self.word_dim = word_dim
        self.out_dim = out_dim
        self.fusion_dim = fusion_dim
        self.dilations = dilations
        self.levels = levels
        self.use_attention = use_attention
        self.use_parallel_branch = use_parallel_branch
        self.use_cascade = use_cascade
        self.max_len = max_len
        self.backbone_frozen = backbone_frozen
        self.threshold = threshold
        self.random_state = random_state

    def _config(self, image_size):
        cmf = CMFConfig(dilations=list(self.dilations), out_dim=self.out_dim,
                        fusion_dim=self.fusion_dim, use_attention=self.use_attention,
                        use_parallel_branch=self.use_parallel_branch,
                        use_cascade=self.use_cascade)
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, power=self.power,
                           max_steps=self.max_steps, batch_size=self.batch_size,
                           seed=self.random_state, visual_dim=self.visual_dim,
                           word_dim=self.word_dim, image_size=image_size,
                           max_len=self.max_len, levels=self.levels, cmf=cmf,
                           backbone_frozen=self.backbone_frozen)

    def fit(self, X, y):
        images, texts = check_X(X)
        masks = check_masks(y, images)
        if images.shape[1] != images.shape[2]:
            raise ValueError("images must be square")
        self.config_ = self._config(images.shape[1])
        result = fit_arrays(self.config_, images, masks, texts)
        self.model_, self.vocab_ = result.model, result.vocab
        self.loss_curve_ = [loss for _, _, loss in result.losses]
        self.n_iter_ = len(self.loss_curve_)
        return self

    def decision_function(self, X):
        """Per-pixel logits, shape (N, H, W)."""
        check_is_fitted(self, "model_")
        images, texts = check_X(X)
        return predict_logits(self.model_, self.vocab_, self.config_, images, texts)

    def predict_proba(self, X):
        return 1.0 / (1.0 + np.exp(-self.decision_function(X).astype(np.float64)))

    def predict(self, X):
        return binarize(self.decision_function(X), self.threshold)

    def evaluate(self, X, y):
        preds = self.predict(X)
        return MetricsReport.from_scores(
            [sample_iou(p, g) for p, g in zip(preds, check_masks(y))])

    def score(self, X, y):
        return self.evaluate(X, y).overall_iou
