"""Pool/sampler laws, the synthetic generator's band factorization,
and directory ingestion."""

import numpy as np
import pytest
from scipy import stats

from freqshot.augment import zero_high_variant
from freqshot.episodes import (
    DomainSpec,
    ImagePool,
    SyntheticSpec,
    build_synthetic_pools,
    load_image_dir,
    make_class_layouts,
    render_sample,
    sample_episode,
)
from freqshot.rng import Rng
from freqshot.wavelet import dwt2


def small_pool(seed=0, classes=6, per_class=30):
    g = np.random.Generator(np.random.Philox(key=seed))
    images = g.uniform(size=(classes * per_class, 1, 8, 8))
    labels = np.repeat(np.arange(classes), per_class)
    return ImagePool(images, labels)


class TestPool:
    def test_validates_shapes_and_range(self):
        with pytest.raises(ValueError):
            ImagePool(np.zeros((4, 8, 8)), np.zeros(4))
        with pytest.raises(ValueError):
            ImagePool(np.full((2, 1, 4, 4), 1.5), np.array([0, 1]))
        with pytest.raises(ValueError):
            ImagePool(np.zeros((2, 1, 4, 4)), np.array([0, 2]))  # gap in labels

    def test_class_indices(self):
        pool = small_pool()
        for c in range(pool.n_classes):
            assert np.all(pool.labels[pool.class_indices(c)] == c)


class TestSampler:
    def test_shapes_and_local_labels(self):
        ep = sample_episode(small_pool(), 5, 5, 16, Rng(0, "ep"))
        assert ep.support_x.shape == (25, 1, 8, 8)
        assert ep.query_x.shape == (80, 1, 8, 8)
        assert np.array_equal(np.unique(ep.support_y), np.arange(5))
        assert np.array_equal(ep.support_y, np.repeat(np.arange(5), 5))
        assert np.array_equal(ep.query_y, np.repeat(np.arange(5), 16))
        assert ep.stacked().shape == (105, 1, 8, 8)

    def test_no_replacement_within_episode(self):
        pool = small_pool(per_class=12)
        ep = sample_episode(pool, 4, 5, 7, Rng(1, "ep"))  # uses every image of each class
        allx = ep.stacked()
        flat = allx.reshape(allx.shape[0], -1)
        assert len(np.unique(flat, axis=0)) == allx.shape[0]

    def test_deterministic_under_stream(self):
        a = sample_episode(small_pool(), 3, 2, 4, Rng(2, "ep", 9))
        b = sample_episode(small_pool(), 3, 2, 4, Rng(2, "ep", 9))
        assert np.array_equal(a.support_x, b.support_x)
        assert np.array_equal(a.class_ids, b.class_ids)

    def test_class_draw_uniformity_chi_squared(self):
        pool = small_pool(classes=6)
        counts = np.zeros(6)
        for i in range(3000):  # 2 classes per episode -> 6000 draws
            ep = sample_episode(pool, 2, 1, 1, Rng(3, "law", i))
            counts[ep.class_ids] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.01, f"class frequencies {counts} reject uniformity (p={p:.4f})"

    def test_rejects_impossible_requests(self):
        pool = small_pool(classes=4, per_class=5)
        with pytest.raises(ValueError):
            sample_episode(pool, 5, 1, 1, Rng(4, "ep"))
        with pytest.raises(ValueError):
            sample_episode(pool, 2, 3, 3, Rng(5, "ep"))
        with pytest.raises(ValueError):
            sample_episode(pool, 1, 1, 1, Rng(6, "ep"))


class TestLayouts:
    def test_distinct_and_sized(self):
        layouts = make_class_layouts(20, (4, 4), 3, Rng(7, "lay"))
        assert len(layouts) == 20
        seen = {tuple(l.ravel().tolist()) for l in layouts}
        assert len(seen) == 20
        for l in layouts:
            assert l.sum() == 3.0

    def test_too_many_blobs_rejected(self):
        with pytest.raises(ValueError):
            make_class_layouts(2, (2, 2), 5, Rng(8, "lay"))


SPEC = SyntheticSpec(classes=6, novel_classes=3, samples_per_class=12)


class TestRenderSample:
    def test_zero_texture_equals_own_low_projection(self):
        spec = SyntheticSpec(
            classes=4, novel_classes=0, samples_per_class=4,
            domain_a=DomainSpec(amplitude=0.0),
        )
        layout = make_class_layouts(1, (4, 4), 3, Rng(9, "z"))[0]
        img = render_sample(layout, (8, 8), 1, spec, spec.domain_a, Rng(10, "z"))
        low = zero_high_variant(img[None])[0]
        rms = float(np.sqrt(np.mean((img - low) ** 2)))
        assert rms < 1e-3

    def test_band_purity_by_pattern(self):
        layout = make_class_layouts(1, (4, 4), 3, Rng(11, "b"))[0]
        spec = SyntheticSpec(classes=4, novel_classes=0, samples_per_class=4, low_jitter=0.0)
        for pattern, band in (("hstripes", "lh"), ("vstripes", "hl"), ("checker", "hh")):
            dom = DomainSpec(patterns=(pattern,), amplitude=0.1, modulated=False)
            img = render_sample(layout, (8, 8), 1, spec, dom, Rng(12, pattern))
            bands = dwt2(img[0])
            active = np.abs(getattr(bands, band)).max()
            others = [np.abs(getattr(bands, b)).max()
                      for b in ("lh", "hl", "hh") if b != band]
            assert active > 0.05
            assert max(others) < 1e-12

    def test_modulated_texture_stays_in_high_bands(self):
        layout = make_class_layouts(1, (4, 4), 3, Rng(13, "m"))[0]
        spec = SyntheticSpec(classes=4, novel_classes=0, samples_per_class=4, low_jitter=0.0)
        dom = DomainSpec(patterns=("hstripes",), amplitude=0.1, modulated=True)
        with_tex = render_sample(layout, (8, 8), 1, spec, dom, Rng(14, "m"))
        no_tex = render_sample(
            layout, (8, 8), 1, spec, DomainSpec(patterns=("hstripes",), amplitude=0.0),
            Rng(14, "m"),
        )
        # the low bands agree: modulation rides entirely above the low band
        assert np.allclose(dwt2(with_tex[0]).ll, dwt2(no_tex[0]).ll, atol=1e-12)

    def test_pixel_range_and_clip_inert(self):
        layout = make_class_layouts(1, (4, 4), 3, Rng(15, "r"))[0]
        vals = []
        for i in range(50):
            img = render_sample(layout, (8, 8), 1, SPEC, SPEC.domain_a, Rng(16, "r", i))
            vals.append((img.min(), img.max()))
        lo = min(v[0] for v in vals)
        hi = max(v[1] for v in vals)
        assert 0.0 < lo and hi < 1.0  # clip never actually fires


class TestSyntheticPools:
    def test_pool_structure(self):
        pools = build_synthetic_pools(SPEC, (8, 8), 1, seed=5)
        assert set(pools) == {"train", "val", "test", "novel"}
        assert pools["train"].n_classes == 6
        assert pools["novel"].n_classes == 3
        assert pools["train"].images.shape == (72, 1, 8, 8)

    def test_deterministic(self):
        p1 = build_synthetic_pools(SPEC, (8, 8), 1, seed=5)
        p2 = build_synthetic_pools(SPEC, (8, 8), 1, seed=5)
        assert np.array_equal(p1["test"].images, p2["test"].images)
        p3 = build_synthetic_pools(SPEC, (8, 8), 1, seed=6)
        assert not np.array_equal(p1["test"].images, p3["test"].images)

    def test_train_and_val_differ_but_share_classes(self):
        pools = build_synthetic_pools(SPEC, (8, 8), 1, seed=5)
        assert not np.array_equal(pools["train"].images, pools["val"].images)
        assert pools["train"].n_classes == pools["val"].n_classes

    def test_class_signal_shared_across_domains(self):
        # same class looks the same after high-band removal in both domains
        pools = build_synthetic_pools(SPEC, (8, 8), 1, seed=7)
        tr, te = pools["train"], pools["test"]
        for c in range(3):
            a = zero_high_variant(tr.images[tr.class_indices(c)[:8]]).mean(axis=0)
            b = zero_high_variant(te.images[te.class_indices(c)[:8]]).mean(axis=0)
            assert np.max(np.abs(a - b)) < 0.1  # same layout, independent jitter

    def test_domains_separable_by_high_band_energy(self):
        # a linear probe on per-band energies tells domain A from domain B
        from sklearn.linear_model import LogisticRegression

        pools = build_synthetic_pools(SPEC, (8, 8), 1, seed=8)

        def feats(pool):
            b = dwt2(pool.images)
            return np.stack(
                [
                    (b.lh**2).sum(axis=(1, 2, 3)),
                    (b.hl**2).sum(axis=(1, 2, 3)),
                    (b.hh**2).sum(axis=(1, 2, 3)),
                ],
                axis=1,
            )

        xa, xb = feats(pools["train"]), feats(pools["test"])
        X = np.vstack([xa, xb])
        y = np.r_[np.zeros(len(xa)), np.ones(len(xb))]
        acc = LogisticRegression(max_iter=1000).fit(X, y).score(X, y)
        assert acc > 0.99

    def test_modulation_makes_high_bands_class_informative(self):
        # nearest-centroid on high-only energy maps beats chance on domain A
        pools = build_synthetic_pools(
            SyntheticSpec(classes=4, novel_classes=0, samples_per_class=30), (8, 8), 1, seed=9
        )
        pool = pools["train"]
        b = dwt2(pool.images)
        energy = (b.lh**2 + b.hl**2 + b.hh**2).reshape(len(pool.images), -1)
        centroids = np.stack([energy[pool.class_indices(c)[:15]].mean(axis=0) for c in range(4)])
        test_idx = np.concatenate([pool.class_indices(c)[15:] for c in range(4)])
        d = ((energy[test_idx, None, :] - centroids[None]) ** 2).sum(axis=2)
        acc = float(np.mean(np.argmin(d, axis=1) == pool.labels[test_idx]))
        assert acc > 0.6  # chance is 0.25

    def test_random_mod_source_decorrelates_texture_from_class(self):
        # same nearest-centroid probe as above drops to ~chance when the
        # texture gain field is drawn per sample instead of per class
        spec = SyntheticSpec(
            classes=4, novel_classes=0, samples_per_class=30,
            domain_a=DomainSpec(mod_source="random"),
        )
        pools = build_synthetic_pools(spec, (8, 8), 1, seed=9)
        pool = pools["train"]
        b = dwt2(pool.images)
        energy = (b.lh**2 + b.hl**2 + b.hh**2).reshape(len(pool.images), -1)
        centroids = np.stack([energy[pool.class_indices(c)[:15]].mean(axis=0) for c in range(4)])
        test_idx = np.concatenate([pool.class_indices(c)[15:] for c in range(4)])
        d = ((energy[test_idx, None, :] - centroids[None]) ** 2).sum(axis=2)
        acc = float(np.mean(np.argmin(d, axis=1) == pool.labels[test_idx]))
        assert acc < 0.45

    def test_random_mod_source_keeps_low_band_class_signal(self):
        spec = SyntheticSpec(domain_a=DomainSpec(mod_source="random"))
        rng = Rng(3, "render")
        layout = make_class_layouts(1, (4, 4), 3, rng.child("l"))[0]
        img = render_sample(layout, (8, 8), 1, spec, spec.domain_a, rng.child("s"))
        ll = dwt2(img[0]).ll / 2.0  # block means
        centered = ll - np.median(ll)
        on = centered[layout == 1.0].mean()
        off = centered[layout == 0.0].mean()
        assert on - off > 0.5 * spec.blob_amplitude

    def test_mod_source_validation(self):
        with pytest.raises(ValueError, match="mod_source"):
            DomainSpec(mod_source="lunar")


class TestLoadImageDir:
    def test_round_trip(self, tmp_path):
        from PIL import Image

        g = np.random.Generator(np.random.Philox(key=77))
        for cname in ("beta", "alpha"):
            d = tmp_path / cname
            d.mkdir()
            for i in range(3):
                arr = (g.uniform(size=(10, 12)) * 255).astype(np.uint8)
                Image.fromarray(arr, mode="L").save(d / f"img_{i}.png")
        pool = load_image_dir(tmp_path, (8, 8), 1)
        assert pool.images.shape == (6, 1, 8, 8)
        assert pool.n_classes == 2
        # sorted class names fix the label order: alpha -> 0, beta -> 1
        assert np.array_equal(pool.labels, [0, 0, 0, 1, 1, 1])
        assert 0.0 <= pool.images.min() and pool.images.max() <= 1.0

    def test_rgb_channels(self, tmp_path):
        from PIL import Image

        d = tmp_path / "only"
        d.mkdir()
        (d / "sub").mkdir()  # ignored: not an image file
        arr = np.zeros((6, 6, 3), dtype=np.uint8)
        arr[:, :, 0] = 255
        Image.fromarray(arr, mode="RGB").save(d / "red.png")
        arr2 = np.zeros((6, 6, 3), dtype=np.uint8)
        Image.fromarray(arr2, mode="RGB").save(d / "black.png")
        pool = load_image_dir(tmp_path, (8, 8), 3)
        assert pool.images.shape == (2, 3, 8, 8)
        assert pool.images[1, 0].max() > 0.9  # red.png sorts after black.png

    def test_rejects_empty_and_bad_channels(self, tmp_path):
        with pytest.raises(ValueError):
            load_image_dir(tmp_path / "missing", (8, 8), 1)
        (tmp_path / "cls").mkdir()
        with pytest.raises(ValueError):
            load_image_dir(tmp_path, (8, 8), 1)  # class dir with no images
        with pytest.raises(ValueError):
            load_image_dir(tmp_path, (8, 8), 2)
