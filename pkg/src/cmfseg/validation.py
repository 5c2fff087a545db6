"""Input checks shared by the estimator and the drivers."""

import numpy as np

from .exceptions import InvalidInputError
from .visenc import STRIDE


def check_images(images, image_size=None):
    """Return float32 (N, H, W, 3) in [0, 1]; uint8 input is rescaled."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise InvalidInputError(f"expected (N, H, W, 3) images, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise InvalidInputError("images contain non-finite values")
    if arr.min() < 0 or arr.max() > 1:
        raise InvalidInputError("image values must lie in [0, 1]")
    h, w = arr.shape[1:3]
    if h % STRIDE or w % STRIDE:
        raise InvalidInputError(f"image size {h}x{w} not divisible by {STRIDE}")
    if image_size is not None and (h, w) != (image_size, image_size):
        raise InvalidInputError(f"expected {image_size}x{image_size} images, got {h}x{w}")
    return arr


def check_masks(masks, images=None):
    arr = np.asarray(masks)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidInputError(f"expected (N, H, W) masks, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise InvalidInputError("masks must be binary")
    if images is not None and arr.shape != images.shape[:3]:
        raise InvalidInputError(f"masks {arr.shape} do not match images {images.shape[:3]}")
    return arr.astype(bool)


def check_X(X):
    """Split X = sequence of (image, expression) pairs into arrays and texts."""
    pairs = list(X)
    if not pairs:
        raise InvalidInputError("X is empty")
    try:
        images, texts = zip(*pairs)
    except (TypeError, ValueError):
        raise InvalidInputError("X must be a sequence of (image, expression) pairs") from None
    if not all(isinstance(t, str) and t.strip() for t in texts):
        raise InvalidInputError("every expression must be a non-empty string")
    return check_images(np.stack([np.asarray(i) for i in images])), list(texts)
