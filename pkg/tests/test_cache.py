"""Dynamic cache contracts: insertion, TTL discipline, all-hit lookup, eviction."""

from __future__ import annotations

import numpy as np
import pytest

from embcache.cache import DynamicCache
from embcache.errors import (
    CacheCapacityError,
    CacheMissError,
    CacheOrderingError,
    ConfigurationError,
)
from embcache.traces import EmbeddingKey


def k(row: int, table: int = 0) -> EmbeddingKey:
    return EmbeddingKey(table, row)


def vec(*vals) -> np.ndarray:
    return np.asarray(vals, dtype=np.float32)


def fresh(capacity=8, dim=2) -> DynamicCache:
    return DynamicCache(capacity, dim)


class TestApplyPrefetch:
    def test_insert_and_lookup(self):
        cache = fresh()
        cache.apply_prefetch([k(3)], vec(1.0, 2.0).reshape(1, 2), {k(3): 2})
        assert k(3) in cache
        assert cache.ttl_of(k(3)) == 2
        assert not cache.is_dirty(k(3))
        np.testing.assert_array_equal(cache.lookup_batch([k(3)]), [[1.0, 2.0]])

    def test_full_cache_rejected(self):
        cache = fresh(capacity=1)
        cache.apply_prefetch([k(1)], np.zeros((1, 2), np.float32), {k(1): 5})
        with pytest.raises(CacheCapacityError):
            cache.apply_prefetch([k(2)], np.zeros((1, 2), np.float32), {k(2): 5})

    def test_duplicate_insert_rejected(self):
        cache = fresh()
        cache.apply_prefetch([k(1)], np.zeros((1, 2), np.float32), {k(1): 5})
        with pytest.raises(CacheOrderingError):
            cache.apply_prefetch([k(1)], np.zeros((1, 2), np.float32), {k(1): 6})

    def test_missing_ttl_rejected(self):
        cache = fresh()
        with pytest.raises(CacheOrderingError):
            cache.apply_prefetch([k(1)], np.zeros((1, 2), np.float32), {})


class TestTtlUpdates:
    def test_replaces_ttl(self):
        cache = fresh()
        cache.apply_prefetch([k(3)], np.zeros((1, 2), np.float32), {k(3): 2})
        cache.apply_ttl_updates([(k(3), 3)])
        assert cache.ttl_of(k(3)) == 3

    def test_equal_ttl_is_noop(self):
        cache = fresh()
        cache.apply_prefetch([k(3)], np.zeros((1, 2), np.float32), {k(3): 2})
        cache.apply_ttl_updates([(k(3), 2)])
        assert cache.ttl_of(k(3)) == 2

    def test_absent_key_rejected(self):
        cache = fresh()
        with pytest.raises(CacheOrderingError):
            cache.apply_ttl_updates([(k(9), 4)])


class TestLookup:
    def test_values_in_key_order(self):
        cache = fresh()
        cache.apply_prefetch(
            [k(1), k(2)], np.asarray([[1, 1], [2, 2]], np.float32), {k(1): 5, k(2): 5}
        )
        out = cache.lookup_batch([k(2), k(1)])
        np.testing.assert_array_equal(out, [[2, 2], [1, 1]])

    def test_miss_identifies_key_and_iteration(self):
        cache = fresh()
        with pytest.raises(CacheMissError) as err:
            cache.lookup_batch([k(7)], iteration=42)
        assert err.value.key == k(7)
        assert err.value.iteration == 42

    def test_empty_lookup(self):
        assert fresh().lookup_batch([]).shape == (0, 2)

    def test_lookup_returns_copy(self):
        cache = fresh()
        cache.apply_prefetch([k(1)], vec(1.0, 1.0).reshape(1, 2), {k(1): 5})
        out = cache.lookup_batch([k(1)])
        out[0, 0] = 99.0
        np.testing.assert_array_equal(cache.lookup_batch([k(1)]), [[1.0, 1.0]])


class TestLocalUpdate:
    def test_update_then_lookup(self):
        cache = fresh()
        cache.apply_prefetch([k(1)], vec(1.0, 1.0).reshape(1, 2), {k(1): 5})
        cache.write_local_update(k(1), vec(3.0, 4.0))
        np.testing.assert_array_equal(cache.lookup_batch([k(1)]), [[3.0, 4.0]])
        assert cache.is_dirty(k(1))

    def test_last_update_wins(self):
        cache = fresh()
        cache.apply_prefetch([k(1)], vec(0.0, 0.0).reshape(1, 2), {k(1): 5})
        cache.write_local_update(k(1), vec(1.0, 1.0))
        cache.write_local_update(k(1), vec(2.0, 2.0))
        np.testing.assert_array_equal(cache.lookup_batch([k(1)]), [[2.0, 2.0]])

    def test_absent_key_rejected(self):
        with pytest.raises(CacheOrderingError):
            fresh().write_local_update(k(1), vec(0.0, 0.0))


class TestEviction:
    def test_expired_entry_returned(self):
        cache = fresh()
        cache.apply_prefetch([k(9)], vec(5.0, 5.0).reshape(1, 2), {k(9): 1})
        out = cache.evict_expired(1)
        assert [(key, d) for key, _, d in out] == [(k(9), False)]
        np.testing.assert_array_equal(out[0][1], [5.0, 5.0])
        assert k(9) not in cache

    def test_unexpired_entry_stays(self):
        cache = fresh()
        cache.apply_prefetch([k(3)], np.zeros((1, 2), np.float32), {k(3): 3})
        assert cache.evict_expired(2) == []
        assert k(3) in cache

    def test_empty_cache(self):
        assert fresh().evict_expired(10) == []

    def test_sorted_by_key_with_dirty_flags(self):
        cache = fresh(capacity=16)
        keys = [k(5), k(1, table=1), k(2)]
        cache.apply_prefetch(keys, np.zeros((3, 2), np.float32), {key: 0 for key in keys})
        cache.write_local_update(k(2), vec(9.0, 9.0))
        out = cache.evict_expired(0)
        assert [key for key, _, _ in out] == [k(2), k(5), k(1, table=1)]
        assert [d for _, _, d in out] == [True, False, False]

    def test_watermark_cannot_regress(self):
        cache = fresh()
        cache.evict_expired(5)
        with pytest.raises(CacheOrderingError):
            cache.evict_expired(4)

    def test_no_expired_ttl_after_eviction(self):
        cache = fresh(capacity=32)
        keys = [k(i) for i in range(10)]
        cache.apply_prefetch(
            keys, np.zeros((10, 2), np.float32), {key: i % 4 for i, key in enumerate(keys)}
        )
        cache.evict_expired(2)
        assert all(cache.ttl_of(key) > 2 for key in cache.key_set())

    def test_drain_returns_everything(self):
        cache = fresh()
        keys = [k(1), k(2)]
        cache.apply_prefetch(keys, np.ones((2, 2), np.float32), {key: 99 for key in keys})
        out = cache.drain()
        assert [key for key, _, _ in out] == [k(1), k(2)]
        assert len(cache) == 0


class TestReplicaChecks:
    def drive(self, cache: DynamicCache):
        cache.apply_prefetch(
            [k(1), k(2)], np.asarray([[1, 0], [0, 1]], np.float32), {k(1): 3, k(2): 5}
        )
        cache.write_local_update(k(2), vec(7.0, 7.0))

    def test_identical_histories_match(self):
        a, b = fresh(), fresh()
        self.drive(a)
        self.drive(b)
        assert a.content_checksum() == b.content_checksum()
        assert a.canonical_digest() == b.canonical_digest()

    def test_value_divergence_detected(self):
        a, b = fresh(), fresh()
        self.drive(a)
        self.drive(b)
        b.write_local_update(k(1), vec(1.0, 1e-7))
        assert a.content_checksum() != b.content_checksum()
        assert a.canonical_digest() != b.canonical_digest()

    def test_ttl_divergence_detected(self):
        a, b = fresh(), fresh()
        self.drive(a)
        self.drive(b)
        b.apply_ttl_updates([(k(1), 4)])
        assert a.content_checksum() != b.content_checksum()


class TestOccupancyAccounting:
    def test_capacity_bound_and_growth(self):
        cache = DynamicCache(1000, 2)
        keys = [k(i) for i in range(600)]
        cache.apply_prefetch(
            keys, np.zeros((600, 2), np.float32), {key: 10 for key in keys}
        )
        assert len(cache) == 600
        assert cache.peak_occupancy == 600
        assert cache.insertions == 600
        cache.evict_expired(10)
        assert cache.evictions == 600 and len(cache) == 0

    def test_slot_reuse_after_eviction(self):
        cache = DynamicCache(4, 2)
        for round_no in range(5):
            keys = [k(round_no * 10 + i) for i in range(4)]
            cache.apply_prefetch(
                keys, np.zeros((4, 2), np.float32), {key: round_no for key in keys}
            )
            cache.evict_expired(round_no)
        assert len(cache) == 0

    def test_bad_construction(self):
        with pytest.raises(ConfigurationError):
            DynamicCache(0, 2)
        with pytest.raises(ConfigurationError):
            DynamicCache(4, 0)
