"""Labeled image pools, episode sampling, and the synthetic domain pair.

An :class:`ImagePool` is a flat array of [C, H, W] float64 images in
[0, 1] with integer class labels.  ``sample_episode`` draws an N-way
K-shot task: N distinct classes, then K support + Q query images per
class without replacement, relabeled 0..N-1 in draw order.

The synthetic generator factors every image into two independent parts:

* class identity lives purely in the low band: a per-class layout of
  bump cells is rendered at half resolution and upsampled 2x with
  nearest neighbor, so it is block-constant and survives high-band
  surgery untouched;
* domain identity lives purely in the high bands: a period-2 sign
  pattern (row stripes, column stripes, or checkerboard) whose single-
  level transform lands entirely in lh, hl, or hh respectively.  A
  domain may modulate its texture amplitude by the class layout, which
  makes the high bands class-informative; an unmodulated domain carries
  no class signal above the low band.

Pixel values are clipped to [0, 1] at the end; shipped parameter ranges
are chosen so the clip never actually fires, keeping the band split
exact.  With texture amplitude 0 an image equals its own low-band
projection to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng

PATTERNS = ("hstripes", "vstripes", "checker")


@dataclass
class ImagePool:
    """Images [M, C, H, W] in [0, 1] plus integer labels [M]."""

    images: np.ndarray
    labels: np.ndarray
    name: str = "pool"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"pool {self.name}: images must be [M, C, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"pool {self.name}: labels shape {self.labels.shape} mismatched")
        if self.images.shape[0] == 0:
            raise ValueError(f"pool {self.name}: empty")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError(f"pool {self.name}: pixel values outside [0, 1]")
        uniq = np.unique(self.labels)
        if not np.array_equal(uniq, np.arange(len(uniq))):
            raise ValueError(f"pool {self.name}: labels must be dense 0..K-1")
        self._by_class = [np.flatnonzero(self.labels == c) for c in range(len(uniq))]

    @property
    def n_classes(self) -> int:
        return len(self._by_class)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_indices(self, c: int) -> np.ndarray:
        return self._by_class[c]


@dataclass
class Episode:
    """One N-way task with episode-local labels 0..N-1, support first."""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    n_way: int
    class_ids: np.ndarray  # global pool classes backing local labels

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.support_x, self.query_x], axis=0)


def sample_episode(pool: ImagePool, way: int, shot: int, query: int, rng: Rng) -> Episode:
    """Draw one N-way K-shot episode without replacement."""
    way, shot, query = int(way), int(shot), int(query)
    if way < 2:
        raise ValueError(f"sample_episode: way must be >= 2, got {way}")
    if shot < 1 or query < 1:
        raise ValueError(f"sample_episode: shot and query must be >= 1")
    if way > pool.n_classes:
        raise ValueError(f"sample_episode: way {way} exceeds {pool.n_classes} classes")
    need = shot + query
    chosen = rng.choice(pool.n_classes, size=way, replace=False)
    sx, qx = [], []
    for c in chosen:
        idx = pool.class_indices(int(c))
        if len(idx) < need:
            raise ValueError(
                f"sample_episode: class {int(c)} has {len(idx)} images, needs {need}"
            )
        picked = idx[rng.choice(len(idx), size=need, replace=False)]
        sx.append(pool.images[picked[:shot]])
        qx.append(pool.images[picked[shot:]])
    return Episode(
        support_x=np.concatenate(sx, axis=0),
        support_y=np.repeat(np.arange(way), shot),
        query_x=np.concatenate(qx, axis=0),
        query_y=np.repeat(np.arange(way), query),
        n_way=way,
        class_ids=np.asarray(chosen, dtype=np.int64),
    )


# synthetic domains

@dataclass(frozen=True)
class DomainSpec:
    """High-frequency texture parameters of one domain."""

    patterns: tuple[str, ...] = ("hstripes", "vstripes")
    amplitude: float = 0.1
    modulated: bool = True
    mod_floor: float = 0.3
    period: int = 2
    mod_source: str = "class"

    def __post_init__(self):
        for p in self.patterns:
            if p not in PATTERNS:
                raise ValueError(f"domain: unknown pattern {p!r}; expected one of {PATTERNS}")
        if not self.patterns:
            raise ValueError("domain: needs at least one pattern")
        if self.amplitude < 0:
            raise ValueError(f"domain: amplitude must be >= 0, got {self.amplitude}")
        if self.period < 2 or self.period % 2:
            raise ValueError(f"domain: period must be even and >= 2, got {self.period}")
        if not 0.0 <= self.mod_floor <= 1.0:
            raise ValueError(f"domain: mod_floor must be in [0, 1], got {self.mod_floor}")
        if self.mod_source not in ("class", "random"):
            raise ValueError(
                f"domain: mod_source must be 'class' or 'random', got {self.mod_source!r}"
            )

    def to_dict(self) -> dict:
        return {
            "patterns": list(self.patterns),
            "amplitude": self.amplitude,
            "modulated": self.modulated,
            "mod_floor": self.mod_floor,
            "period": self.period,
            "mod_source": self.mod_source,
        }


@dataclass(frozen=True)
class SyntheticSpec:
    """Full description of the synthetic class/domain family."""

    classes: int = 16
    novel_classes: int = 8
    samples_per_class: int = 60
    n_blobs: int = 3
    blob_amplitude: float = 0.22
    base_range: tuple[float, float] = (0.3, 0.5)
    low_jitter: float = 0.02
    domain_a: DomainSpec = field(default_factory=DomainSpec)
    domain_b: DomainSpec = field(
        default_factory=lambda: DomainSpec(patterns=("checker",), modulated=False)
    )

    def __post_init__(self):
        if self.classes < 2 or self.novel_classes < 0:
            raise ValueError("synthetic: need >= 2 classes and >= 0 novel classes")
        if self.samples_per_class < 1:
            raise ValueError("synthetic: samples_per_class must be >= 1")
        lo, hi = self.base_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"synthetic: bad base_range {self.base_range}")
        if self.n_blobs < 1 or self.blob_amplitude < 0 or self.low_jitter < 0:
            raise ValueError("synthetic: bad blob parameters")


def make_class_layouts(
    n_classes: int, grid_hw: tuple[int, int], n_blobs: int, rng: Rng
) -> list[np.ndarray]:
    """Distinct bump-cell masks [h, w] at half resolution, one per class."""
    h, w = grid_hw
    cells = h * w
    if n_blobs > cells:
        raise ValueError(f"layouts: {n_blobs} blobs do not fit a {h}x{w} grid")
    seen: set[tuple[int, ...]] = set()
    layouts: list[np.ndarray] = []
    attempts = 0
    while len(layouts) < n_classes:
        attempts += 1
        if attempts > 1000 * n_classes:
            raise ValueError(f"layouts: cannot draw {n_classes} distinct layouts from {cells} cells")
        picked = tuple(sorted(int(i) for i in rng.choice(cells, size=n_blobs, replace=False)))
        if picked in seen:
            continue
        seen.add(picked)
        mask = np.zeros(cells)
        mask[list(picked)] = 1.0
        layouts.append(mask.reshape(h, w))
    return layouts


def _pattern_field(name: str, H: int, W: int, period: int) -> np.ndarray:
    """A +-1 sign field; at period 2 each pattern is pure lh, hl, or hh."""
    half = period // 2
    rows = (np.arange(H) // half) % 2
    cols = (np.arange(W) // half) % 2
    if name == "hstripes":
        f = 1.0 - 2.0 * rows[:, None] + np.zeros((1, W))
    elif name == "vstripes":
        f = np.zeros((H, 1)) + 1.0 - 2.0 * cols[None, :]
    elif name == "checker":
        f = (1.0 - 2.0 * rows[:, None]) * (1.0 - 2.0 * cols[None, :])
    else:
        raise ValueError(f"unknown pattern {name!r}")
    return f


def render_sample(
    layout: np.ndarray,
    image_hw: tuple[int, int],
    channels: int,
    spec: SyntheticSpec,
    domain: DomainSpec,
    rng: Rng,
) -> np.ndarray:
    """One [C, H, W] image: block-constant class signal plus domain texture."""
    H, W = image_hw
    h2, w2 = H // 2, W // 2
    if layout.shape != (h2, w2):
        raise ValueError(f"render: layout {layout.shape} does not match half-res {(h2, w2)}")
    base = rng.uniform(*spec.base_range)
    lowmap = base + spec.blob_amplitude * layout
    if spec.low_jitter > 0:
        lowmap = lowmap + rng.normal(scale=spec.low_jitter, size=(h2, w2))
    up = np.kron(lowmap, np.ones((2, 2)))

    pattern = _pattern_field(domain.patterns[int(rng.integers(0, len(domain.patterns)))], H, W, domain.period)
    phase = 1.0 if rng.uniform() < 0.5 else -1.0
    amp = domain.amplitude * rng.uniform(0.8, 1.2)
    if domain.modulated:
        if domain.mod_source == "class":
            field = layout
        else:  # texture gain decorrelated from class identity
            cells = h2 * w2
            n_on = int(layout.sum())
            mask = np.zeros(cells)
            mask[rng.choice(cells, size=n_on, replace=False)] = 1.0
            field = mask.reshape(h2, w2)
        gain = domain.mod_floor + (1.0 - domain.mod_floor) * np.kron(field, np.ones((2, 2)))
    else:
        gain = 1.0
    img = up + phase * amp * pattern * gain
    img = np.clip(img, 0.0, 1.0)
    return np.broadcast_to(img, (channels, H, W)).copy()


def make_synthetic_pool(
    layouts: list[np.ndarray],
    image_hw: tuple[int, int],
    channels: int,
    spec: SyntheticSpec,
    domain: DomainSpec,
    rng: Rng,
    name: str,
) -> ImagePool:
    """samples_per_class draws of every layout under one domain."""
    images, labels = [], []
    for c, layout in enumerate(layouts):
        crng = rng.child("class", c)
        for i in range(spec.samples_per_class):
            images.append(render_sample(layout, image_hw, channels, spec, domain, crng.child(i)))
            labels.append(c)
    return ImagePool(np.stack(images), np.asarray(labels), name=name)


def build_synthetic_pools(
    spec: SyntheticSpec, image_hw: tuple[int, int], channels: int, seed: int
) -> dict[str, ImagePool]:
    """The four standard pools.

    train/val: domain A over the base classes (independent draws);
    test: domain B over the same base classes (the cross-domain target);
    novel: domain A over held-out classes (for frequency probes).
    """
    H, W = image_hw
    if H % 2 or W % 2:
        raise ValueError(f"synthetic pools: image dims must be even, got {H}x{W}")
    rng = Rng(seed, "synthetic")
    layouts = make_class_layouts(
        spec.classes + spec.novel_classes, (H // 2, W // 2), spec.n_blobs, rng.child("layouts")
    )
    base, novel = layouts[: spec.classes], layouts[spec.classes :]
    pools = {
        "train": make_synthetic_pool(base, image_hw, channels, spec, spec.domain_a,
                                     rng.child("train"), "train"),
        "val": make_synthetic_pool(base, image_hw, channels, spec, spec.domain_a,
                                   rng.child("val"), "val"),
        "test": make_synthetic_pool(base, image_hw, channels, spec, spec.domain_b,
                                    rng.child("test"), "test"),
    }
    if novel:
        pools["novel"] = make_synthetic_pool(novel, image_hw, channels, spec, spec.domain_a,
                                             rng.child("novel"), "novel")
    return pools


# directory ingestion

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_image_dir(root, image_hw: tuple[int, int], channels: int) -> ImagePool:
    """Build a pool from a directory of class subdirectories.

    Each immediate subdirectory of ``root`` is one class (sorted name
    order fixes the label mapping); every contained image file is
    resized to ``image_hw`` and scaled to [0, 1].  ``channels`` must be
    1 (grayscale) or 3 (RGB).
    """
    from PIL import Image

    if channels not in (1, 3):
        raise ValueError(f"load_image_dir: channels must be 1 or 3, got {channels}")
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"load_image_dir: {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"load_image_dir: {root} has no class subdirectories")
    H, W = image_hw
    images, labels = [], []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"load_image_dir: class directory {cdir} has no images")
        for fp in files:
            with Image.open(fp) as im:
                im = im.convert("L" if channels == 1 else "RGB")
                im = im.resize((W, H), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float64) / 255.0
            if channels == 1:
                arr = arr[None, :, :]
            else:
                arr = arr.transpose(2, 0, 1)
            images.append(arr)
            labels.append(label)
    return ImagePool(np.stack(images), np.asarray(labels), name=str(root))
