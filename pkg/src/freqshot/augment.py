"""Frequency-domain task augmentation and the random-convolution corruption.

Two training variants share every image's low band and replace the three
high bands: ``zeros`` silences them, ``randn`` swaps in unit Gaussian
coefficients.  Both keep labels unchanged, which is the point: the pair
teaches the model that class identity must survive high-frequency
replacement.  Evaluation adds the matching probes (additive pixel noise,
high-only and low-only reconstructions).

Random convolution draws a fresh kernel size from a fixed pool and a
fresh Xavier-normal C->C kernel per call, filters the batch at stride 1
with size-preserving padding, and throws the kernel away.  It runs on
plain arrays before any graph is built, so nothing ever backpropagates
into the kernel.

All functions here take and return float64 numpy arrays shaped
[B, C, H, W]; tensors enter the autodiff graph only later, in the
trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .wavelet import SubbandSet, dwt2, idwt2, replace_high, zero_low

FILTER_POOL = (1, 3, 5, 7, 11, 15)


def _check_images(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"{name}: expected [B, C, H, W], got shape {x.shape}")
    H, W = x.shape[2], x.shape[3]
    if H % 2 or W % 2:
        raise ValueError(f"{name}: spatial dims must be even, got {H}x{W}")
    return x


def zero_high_variant(x: np.ndarray) -> np.ndarray:
    """Replace all three high subbands with zeros; low band untouched."""
    x = _check_images(x, "zero_high_variant")
    return replace_high(x, 0.0, 0.0, 0.0)


def randn_high_variant(x: np.ndarray, rng: Rng) -> np.ndarray:
    """Replace all three high subbands with unit Gaussian coefficients."""
    x = _check_images(x, "randn_high_variant")
    bands = dwt2(x)
    shape = bands.ll.shape
    return idwt2(
        SubbandSet(
            ll=bands.ll,
            lh=rng.normal(size=shape),
            hl=rng.normal(size=shape),
            hh=rng.normal(size=shape),
            source_shape=bands.source_shape,
        )
    )


def low_only_variant(x: np.ndarray) -> np.ndarray:
    """Low-pass reconstruction; alias of the zeros variant, kept for the
    evaluation protocol's naming."""
    return zero_high_variant(x)


def high_only_variant(x: np.ndarray) -> np.ndarray:
    """Reconstruction from the three high subbands with the low band zeroed."""
    x = _check_images(x, "high_only_variant")
    return zero_low(x)


def noise_variant(x: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Additive i.i.d. Gaussian pixel noise; no clipping is applied."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"noise_variant: expected [B, C, H, W], got shape {x.shape}")
    sigma = float(sigma)
    if sigma < 0:
        raise ValueError(f"noise_variant: sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return x.copy()
    return x + rng.normal(scale=sigma, size=x.shape)


def xavier_normal(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: Rng) -> np.ndarray:
    """Zero-mean normal with std sqrt(2 / (fan_in + fan_out))."""
    std = float(np.sqrt(2.0 / (fan_in + fan_out)))
    return rng.normal(scale=std, size=shape)


def random_conv(
    x: np.ndarray, rng: Rng, pool: tuple[int, ...] = FILTER_POOL
) -> tuple[np.ndarray, int]:
    """Filter the batch with one freshly drawn random kernel.

    Draws k uniformly from ``pool``, then a C->C kernel with
    Xavier-normal entries (fan = C * k * k on both sides), and applies it
    at stride 1 with (k - 1) / 2 padding so shape is preserved.  Returns
    the filtered batch and the k that was drawn; the kernel itself is
    discarded.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"random_conv: expected [B, C, H, W], got shape {x.shape}")
    if not pool or any(int(k) < 1 or int(k) % 2 == 0 for k in pool):
        raise ValueError(f"random_conv: pool must hold odd sizes >= 1, got {pool}")
    C = x.shape[1]
    k = int(rng.pick(tuple(int(v) for v in pool)))
    fan = C * k * k
    kernel = xavier_normal((C, C, k, k), fan, fan, rng)
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # [B, H, W, C]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), k


@dataclass
class AugmentedEpisode:
    """One task triple: the original episode plus its two frequency variants.

    ``x``/``x_zeros``/``x_randn`` are [B, C, H, W] with support rows first;
    labels are shared across all three streams by construction.
    """

    x: np.ndarray
    x_zeros: np.ndarray
    x_randn: np.ndarray
    support_y: np.ndarray
    query_y: np.ndarray
    n_way: int

    @property
    def n_support(self) -> int:
        return int(self.support_y.shape[0])

    def __post_init__(self):
        if not (self.x.shape == self.x_zeros.shape == self.x_randn.shape):
            raise ValueError("augmented episode: stream shapes differ")
        if self.x.shape[0] != self.support_y.shape[0] + self.query_y.shape[0]:
            raise ValueError("augmented episode: labels do not cover the batch")


def build_augmented_episode(
    x: np.ndarray, support_y: np.ndarray, query_y: np.ndarray, n_way: int, rng: Rng
) -> AugmentedEpisode:
    """Assemble the task triple from one episode's stacked images."""
    x = _check_images(x, "build_augmented_episode")
    return AugmentedEpisode(
        x=x,
        x_zeros=zero_high_variant(x),
        x_randn=randn_high_variant(x, rng.child("randn")),
        support_y=np.asarray(support_y, dtype=np.int64),
        query_y=np.asarray(query_y, dtype=np.int64),
        n_way=int(n_way),
    )
