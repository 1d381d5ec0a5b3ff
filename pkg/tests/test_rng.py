import numpy as np

from freqshot.rng import Rng, derive_key


class TestStreams:
    def test_same_path_same_values(self):
        a = Rng(7, "train", "episode", 3).normal(size=16)
        b = Rng(7, "train", "episode", 3).normal(size=16)
        assert np.array_equal(a, b)

    def test_different_labels_differ(self):
        a = Rng(7, "train").normal(size=16)
        b = Rng(7, "val").normal(size=16)
        assert not np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = Rng(7, "x").normal(size=16)
        b = Rng(8, "x").normal(size=16)
        assert not np.array_equal(a, b)

    def test_child_is_path_keyed_not_state_keyed(self):
        parent = Rng(42, "root")
        before = parent.child("sub").normal(size=8)
        parent.normal(size=100)  # consume parent state
        after = parent.child("sub").normal(size=8)
        assert np.array_equal(before, after)

    def test_child_equals_direct_construction(self):
        via_child = Rng(5, "a").child("b", 2).uniform(size=4)
        direct = Rng(5, "a", "b", 2).uniform(size=4)
        assert np.array_equal(via_child, direct)

    def test_key64_stable_and_distinct(self):
        k1 = Rng(1, "train", "episode", 0).key64()
        k2 = Rng(1, "train", "episode", 0).key64()
        k3 = Rng(1, "train", "episode", 1).key64()
        assert k1 == k2
        assert k1 != k3
        assert 0 <= k1 < 2**64

    def test_derive_key_distinguishes_label_boundaries(self):
        assert derive_key(1, "ab", "c") != derive_key(1, "a", "bc")

    def test_pick_uniform(self):
        rng = Rng(3, "pick")
        pool = [1, 3, 5, 7, 11, 15]
        draws = [rng.pick(pool) for _ in range(6000)]
        counts = {v: draws.count(v) for v in pool}
        for v in pool:
            assert abs(counts[v] / 6000 - 1 / 6) < 0.03

    def test_choice_without_replacement(self):
        rng = Rng(9, "choice")
        for _ in range(50):
            picked = rng.choice(10, size=5, replace=False)
            assert len(set(picked.tolist())) == 5
