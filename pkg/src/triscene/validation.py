"""Input checks shared by the estimator wrapper and the training entry points."""

import numpy as np

from .exceptions import InvalidInputError


def check_images(images, *, min_count=1):
    """Validate a stack of square RGB images and return it as float32 ``[n, H, H, 3]``.

    uint8 input is rescaled to [0, 1]; float input must already lie there.
    """
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise InvalidInputError(f"expected images shaped [n, H, W, 3], got {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise InvalidInputError(f"images must be square, got {arr.shape[1]}x{arr.shape[2]}")
    if arr.shape[0] < min_count:
        raise InvalidInputError(f"need at least {min_count} images, got {arr.shape[0]}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise InvalidInputError("images contain non-finite values")
    if arr.min() < 0 or arr.max() > 1:
        raise InvalidInputError("float images must lie in [0, 1]")
    return arr


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
