"""Stateless scikit-learn transformers over the image-variant functions.

All of them operate on [B, C, H, W] batches with even spatial dims.
``fit`` only validates; nothing is learned.  The randomized transforms
re-derive their stream from ``seed`` on every call, so ``transform`` is
a pure function of its input and the transformer's parameters.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .augment import (
    FILTER_POOL,
    high_only_variant,
    low_only_variant,
    noise_variant,
    randn_high_variant,
    random_conv,
    zero_high_variant,
)
from .rng import Rng
from .validation import check_image_batch


class _ImageTransform(BaseEstimator, TransformerMixin):
    def fit(self, X, y=None):
        check_image_batch(X)
        return self

    def transform(self, X):
        return self._apply(check_image_batch(X))


class ZeroHighFrequencies(_ImageTransform):
    """Replace detail subbands with zeros; keeps the smooth structure."""

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return zero_high_variant(x)


class RandomizeHighFrequencies(_ImageTransform):
    """Replace detail subbands with unit Gaussian draws."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return randn_high_variant(x, Rng(self.seed, "transform", "randn_high"))


class KeepLowFrequencies(_ImageTransform):
    """Reconstruction from the approximation subband alone."""

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return low_only_variant(x)


class KeepHighFrequencies(_ImageTransform):
    """Reconstruction from the detail subbands alone."""

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return high_only_variant(x)


class AddGaussianNoise(_ImageTransform):
    """Pixel-space additive noise with fixed sigma."""

    def __init__(self, sigma: float = 0.1, seed: int = 0):
        self.sigma = sigma
        self.seed = seed

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return noise_variant(x, self.sigma, Rng(self.seed, "transform", "noise"))


class RandomConvolution(_ImageTransform):
    """One freshly drawn random filter applied to the whole batch."""

    def __init__(self, seed: int = 0, pool: tuple[int, ...] = FILTER_POOL):
        self.seed = seed
        self.pool = pool

    def _apply(self, x: np.ndarray) -> np.ndarray:
        out, _ = random_conv(x, Rng(self.seed, "transform", "random_conv"), tuple(self.pool))
        return out
