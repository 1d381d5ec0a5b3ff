"""Single-level 2D Haar transform.

Separable orthonormal Haar: the 1D pair maps (a, b) to
low = (a + b) / sqrt(2), high = (a - b) / sqrt(2), applied along both
image axes.  With p, q the top-left/top-right and r, s the
bottom-left/bottom-right samples of each 2x2 block, the four subband
coefficients are

    ll = (p + q + r + s) / 2      lh = (p + q - r - s) / 2
    hl = (p - q + r - s) / 2      hh = (p - q - r + s) / 2

which is the two-pass separable form folded into one exact halving per
coefficient.  ``lh`` responds to change down the rows (vertical detail),
``hl`` to change across the columns, ``hh`` to diagonal structure.  For
the 2x2 input [[1, 2], [3, 4]]: ll = 5, lh = -2, hl = -1, hh = 0.

Odd spatial dimensions are rejected outright; nothing here pads.
The transform is orthonormal, so energy is preserved and ``idwt2``
inverts ``dwt2`` to float64 round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SubbandSet:
    """The four subbands of one decomposition level.

    Arrays share a common shape whose last two axes are (H/2, W/2);
    leading axes (batch, channel) are allowed and carried through.
    ``source_shape`` records the (H, W) of the transformed planes.
    """

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    source_shape: tuple[int, int]

    def __post_init__(self):
        shp = self.ll.shape
        for name in ("lh", "hl", "hh"):
            if getattr(self, name).shape != shp:
                raise ValueError(f"subband {name} shape {getattr(self, name).shape} != {shp}")
        H, W = self.source_shape
        if shp[-2:] != (H // 2, W // 2):
            raise ValueError(f"subband shape {shp[-2:]} inconsistent with source {self.source_shape}")


def _check_even(x: np.ndarray) -> tuple[int, int]:
    if x.ndim < 2:
        raise ValueError(f"dwt2: need at least 2 axes, got shape {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    if H < 2 or W < 2 or H % 2 or W % 2:
        raise ValueError(f"dwt2: spatial dims must be even and >= 2, got {H}x{W}")
    return H, W


def dwt2(x: np.ndarray) -> SubbandSet:
    """Decompose planes along the last two axes into (ll, lh, hl, hh)."""
    x = np.asarray(x, dtype=np.float64)
    H, W = _check_even(x)
    p = x[..., 0::2, 0::2]
    q = x[..., 0::2, 1::2]
    r = x[..., 1::2, 0::2]
    s = x[..., 1::2, 1::2]
    return SubbandSet(
        ll=(p + q + r + s) * 0.5,
        lh=(p + q - r - s) * 0.5,
        hl=(p - q + r - s) * 0.5,
        hh=(p - q - r + s) * 0.5,
        source_shape=(H, W),
    )


def idwt2(bands: SubbandSet) -> np.ndarray:
    """Exact inverse of :func:`dwt2`."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    H, W = bands.source_shape
    out_shape = ll.shape[:-2] + (H, W)
    x = np.empty(out_shape, dtype=np.float64)
    x[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    x[..., 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    x[..., 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    x[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return x


def replace_high(
    x: np.ndarray,
    lh: np.ndarray | float,
    hl: np.ndarray | float,
    hh: np.ndarray | float,
) -> np.ndarray:
    """Reconstruct x with its three high subbands replaced, LL untouched."""
    bands = dwt2(x)
    shape = bands.ll.shape
    return idwt2(
        SubbandSet(
            ll=bands.ll,
            lh=np.broadcast_to(np.asarray(lh, dtype=np.float64), shape).copy(),
            hl=np.broadcast_to(np.asarray(hl, dtype=np.float64), shape).copy(),
            hh=np.broadcast_to(np.asarray(hh, dtype=np.float64), shape).copy(),
            source_shape=bands.source_shape,
        )
    )


def zero_low(x: np.ndarray) -> np.ndarray:
    """Reconstruct x from its high subbands only (LL zeroed)."""
    bands = dwt2(x)
    return idwt2(
        SubbandSet(
            ll=np.zeros_like(bands.ll),
            lh=bands.lh,
            hl=bands.hl,
            hh=bands.hh,
            source_shape=bands.source_shape,
        )
    )


def subband_energy(bands: SubbandSet) -> float:
    """Total squared coefficient mass across the four subbands."""
    return float(
        np.sum(bands.ll**2) + np.sum(bands.lh**2) + np.sum(bands.hl**2) + np.sum(bands.hh**2)
    )
