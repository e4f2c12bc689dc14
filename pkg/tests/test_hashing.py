"""Tests for the balanced double-hashing scheme."""

import numpy as np
import pytest

from cerp.hashing import EntityIndex, HashSpec, hash_entities, hash_entity, usage_histogram


def ceil_div(a, b):
    return -(-a // b)


class TestHashEntity:
    def test_zero_maps_to_origin(self):
        spec = HashSpec(num_entities=100, bucket_size=16)
        assert hash_entity(spec, 0) == EntityIndex(0, 0)

    def test_large_joint_catalogue(self):
        # 29,858 users + 40,981 items, bucket size 5,000
        spec = HashSpec(num_entities=70_839, bucket_size=5_000)
        assert spec.stride == 15
        idx = hash_entity(spec, 70_838)
        assert idx == EntityIndex(k_p=838, k_q=4_722)

    def test_mid_range_example(self):
        spec = HashSpec(num_entities=2_625, bucket_size=256)
        assert spec.stride == 11
        assert hash_entity(spec, 300) == EntityIndex(k_p=44, k_q=27)

    def test_out_of_range_rejected(self):
        spec = HashSpec(num_entities=10, bucket_size=5)
        with pytest.raises(ValueError):
            hash_entity(spec, 10)
        with pytest.raises(ValueError):
            hash_entity(spec, -1)

    def test_vectorized_matches_scalar(self):
        spec = HashSpec(num_entities=1_000, bucket_size=40)
        ks = np.arange(1_000)
        kp, kq = hash_entities(spec, ks)
        for k in [0, 1, 39, 40, 999]:
            idx = hash_entity(spec, k)
            assert kp[k] == idx.k_p
            assert kq[k] == idx.k_q


class TestSpecValidation:
    def test_rejects_collision_prone_bucket_size(self):
        # b = 5 gives ceil(100/5) = 20 > 5: pairs would repeat
        with pytest.raises(ValueError):
            HashSpec(num_entities=100, bucket_size=5)

    def test_accepts_minimal_bucket_size(self):
        spec = HashSpec(num_entities=100, bucket_size=10)
        assert spec.stride == 10

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            HashSpec(num_entities=0, bucket_size=4)
        with pytest.raises(ValueError):
            HashSpec(num_entities=4, bucket_size=0)


class TestUsageHistogram:
    def test_even_division(self):
        counts_p, _ = usage_histogram(HashSpec(num_entities=10, bucket_size=5))
        np.testing.assert_array_equal(counts_p, [2, 2, 2, 2, 2])

    def test_uneven_division(self):
        counts_p, _ = usage_histogram(HashSpec(num_entities=11, bucket_size=5))
        assert counts_p.max() == 3 == ceil_div(11, 5)

    def test_large_catalogue_bound(self):
        counts_p, counts_q = usage_histogram(HashSpec(num_entities=70_839, bucket_size=5_000))
        assert counts_p.max() == 15
        assert counts_q.max() == 15


class TestInjectivityAndBalance:
    @pytest.mark.parametrize("num_entities", [10, 11, 37, 100, 257, 1_000, 4_096, 10_000])
    def test_grid(self, num_entities):
        # every admissible bucket size on a coarse grid, plus the boundary one
        b_min = next(b for b in range(1, num_entities + 1) if b >= ceil_div(num_entities, b))
        grid = sorted(set([b_min, b_min + 1, 2 * b_min, num_entities]) | set(
            np.linspace(b_min, num_entities, 8, dtype=int).tolist()
        ))
        ks = np.arange(num_entities, dtype=np.int64)
        for b in grid:
            spec = HashSpec(num_entities=num_entities, bucket_size=int(b))
            kp, kq = hash_entities(spec, ks)
            assert kq.max() < spec.bucket_size
            codes = kq * spec.bucket_size + kp
            assert np.unique(codes).size == num_entities, f"collision at b={b}"
            bound = ceil_div(num_entities, b)
            counts_p, counts_q = usage_histogram(spec)
            assert counts_p.max() == bound
            assert counts_q.max() == bound
