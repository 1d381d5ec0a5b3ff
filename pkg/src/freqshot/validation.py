"""Input checking shared by the estimator facade."""

from __future__ import annotations

import numpy as np


def check_image_batch(
    x,
    channels: int | None = None,
    image_hw: tuple[int, int] | None = None,
    name: str = "X",
) -> np.ndarray:
    """Coerce to a finite float64 [B, C, H, W] batch, or raise ValueError."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"{name} must be [batch, channels, height, width], got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    if channels is not None and x.shape[1] != channels:
        raise ValueError(f"{name} has {x.shape[1]} channels, expected {channels}")
    if image_hw is not None and x.shape[2:] != tuple(image_hw):
        raise ValueError(f"{name} images are {x.shape[2:]}, expected {tuple(image_hw)}")
    return x


def check_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D integer label vector, or raise ValueError."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {y.shape}")
    if y.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(y.dtype, np.integer):
        cast = y.astype(np.int64)
        if not np.array_equal(cast, y):
            raise ValueError(f"{name} must hold integers")
        y = cast
    if n is not None and len(y) != n:
        raise ValueError(f"{name} has {len(y)} entries for {n} samples")
    return y.astype(np.int64)
