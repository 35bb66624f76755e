"""Trainer-resident dynamic cache.

Holds embedding vectors with per-entry TTLs under an entry-count capacity.
Values live in a growable float32 matrix and keys map to row slots, so batch
lookups and updates are single gather/scatter operations. Two roles touch the
cache each iteration -- training (lookup, update) and maintenance (prefetch,
TTL updates, eviction) -- and plan semantics guarantee they never share keys
within an iteration; the caller sequences them via the iteration-completion
signal.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CacheCapacityError,
    CacheMissError,
    CacheOrderingError,
    ConfigurationError,
)
from .hashing import splitmix64_array
from .traces import EmbeddingKey

_INITIAL_SLOTS = 256


class DynamicCache:
    """Map key -> (value vector, ttl, dirty) bounded by an entry capacity."""

    __slots__ = (
        "capacity",
        "emb_dim",
        "completed_iteration",
        "insertions",
        "evictions",
        "peak_occupancy",
        "_slots",
        "_keys",
        "_values",
        "_ttl",
        "_dirty",
        "_used",
        "_free",
    )

    def __init__(self, capacity: int, emb_dim: int):
        if capacity < 1:
            raise ConfigurationError("cache capacity must be >= 1")
        if emb_dim < 1:
            raise ConfigurationError("emb_dim must be >= 1")
        self.capacity = capacity
        self.emb_dim = emb_dim
        self.completed_iteration: int | None = None
        self.insertions = 0
        self.evictions = 0
        self.peak_occupancy = 0
        size = min(capacity, _INITIAL_SLOTS)
        self._slots: dict[EmbeddingKey, int] = {}
        self._keys: list[EmbeddingKey | None] = [None] * size
        self._values = np.zeros((size, emb_dim), dtype=np.float32)
        self._ttl = np.zeros(size, dtype=np.int64)
        self._dirty = np.zeros(size, dtype=bool)
        self._used = np.zeros(size, dtype=bool)
        self._free = list(range(size - 1, -1, -1))

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, key: EmbeddingKey) -> bool:
        return key in self._slots

    def key_set(self) -> set[EmbeddingKey]:
        return set(self._slots)

    def ttl_of(self, key: EmbeddingKey) -> int:
        return int(self._ttl[self._slots[key]])

    def is_dirty(self, key: EmbeddingKey) -> bool:
        return bool(self._dirty[self._slots[key]])

    def _grow(self) -> None:
        old = len(self._keys)
        new = min(self.capacity, max(_INITIAL_SLOTS, old * 2))
        if new <= old:
            return
        self._keys.extend([None] * (new - old))
        self._values = np.vstack(
            [self._values, np.zeros((new - old, self.emb_dim), dtype=np.float32)]
        )
        self._ttl = np.concatenate([self._ttl, np.zeros(new - old, dtype=np.int64)])
        self._dirty = np.concatenate([self._dirty, np.zeros(new - old, dtype=bool)])
        self._used = np.concatenate([self._used, np.zeros(new - old, dtype=bool)])
        self._free.extend(range(new - 1, old - 1, -1))

    def apply_prefetch(
        self,
        keys: Sequence[EmbeddingKey],
        values: np.ndarray,
        ttls: Mapping[EmbeddingKey, int],
    ) -> None:
        """Insert fetched entries, clean, with the TTL the requesting plan assigned.

        Keys must be absent and the result must fit the capacity; violations
        are fatal because the planner is supposed to make them impossible.
        """
        n = len(keys)
        if n == 0:
            return
        if len(self._slots) + n > self.capacity:
            raise CacheCapacityError(
                f"inserting {n} entries into {len(self._slots)}/{self.capacity}"
            )
        slot_list = []
        for key in keys:
            if key in self._slots:
                raise CacheOrderingError(f"duplicate insert for {key!r}")
            if not self._free:
                self._grow()
            slot = self._free.pop()
            self._slots[key] = slot
            self._keys[slot] = key
            slot_list.append(slot)
        idx = np.asarray(slot_list, dtype=np.int64)
        self._values[idx] = values
        try:
            self._ttl[idx] = [ttls[k] for k in keys]
        except KeyError as exc:
            raise CacheOrderingError(f"prefetched key {exc.args[0]!r} has no TTL") from None
        self._dirty[idx] = False
        self._used[idx] = True
        self.insertions += n
        self.peak_occupancy = max(self.peak_occupancy, len(self._slots))

    def apply_ttl_updates(self, updates: Iterable[tuple[EmbeddingKey, int]]) -> None:
        """Replace TTLs for resident keys; an absent key is an ordering violation."""
        slot_list = []
        ttl_list = []
        for key, ttl in updates:
            slot = self._slots.get(key)
            if slot is None:
                raise CacheOrderingError(f"TTL update for absent key {key!r}")
            slot_list.append(slot)
            ttl_list.append(ttl)
        if slot_list:
            self._ttl[np.asarray(slot_list, dtype=np.int64)] = ttl_list

    def resolve_slots(
        self, keys: Sequence[EmbeddingKey], iteration: int | None = None
    ) -> np.ndarray:
        """Slot indices for the given keys; any miss is a consistency violation."""
        slots = self._slots
        try:
            return np.fromiter(
                (slots[k] for k in keys), dtype=np.int64, count=len(keys)
            )
        except KeyError:
            for k in keys:
                if k not in slots:
                    raise CacheMissError(k, iteration) from None
            raise

    def values_at(self, slot_idx: np.ndarray) -> np.ndarray:
        """Value rows for already-resolved slots (a copy)."""
        return self._values[slot_idx]

    def lookup_batch(
        self, keys: Sequence[EmbeddingKey], iteration: int | None = None
    ) -> np.ndarray:
        """Values for the given unique keys, in key order; misses are fatal."""
        if not keys:
            return np.zeros((0, self.emb_dim), dtype=np.float32)
        return self.values_at(self.resolve_slots(keys, iteration))

    def update_rows(
        self, slot_idx: np.ndarray, new_values: np.ndarray, dirty_mask: np.ndarray
    ) -> None:
        """Overwrite value rows and mark the masked subset dirty."""
        self._values[slot_idx] = new_values
        if dirty_mask.any():
            self._dirty[slot_idx[dirty_mask]] = True

    def write_local_update(self, key: EmbeddingKey, new_value: np.ndarray) -> None:
        """Replace one resident value and mark it dirty."""
        slot = self._slots.get(key)
        if slot is None:
            raise CacheOrderingError(f"update for absent key {key!r}")
        self._values[slot] = new_value
        self._dirty[slot] = True

    def _release(
        self, idx: np.ndarray
    ) -> tuple[list[EmbeddingKey], np.ndarray, np.ndarray]:
        keys = [self._keys[s] for s in idx]
        order = sorted(range(len(keys)), key=lambda i: keys[i])
        sorted_idx = idx[np.asarray(order, dtype=np.int64)]
        out_keys = [keys[i] for i in order]
        out_values = self._values[sorted_idx]
        out_dirty = self._dirty[sorted_idx].copy()
        for key in keys:
            del self._slots[key]
        for slot in idx:
            self._keys[slot] = None
        self._used[idx] = False
        self._dirty[idx] = False
        # Freed slots are reused lowest-first for deterministic layout.
        self._free.extend(sorted((int(s) for s in idx), reverse=True))
        self.evictions += len(keys)
        return out_keys, out_values, out_dirty

    def evict_expired_arrays(
        self, completed: int
    ) -> tuple[list[EmbeddingKey], np.ndarray, np.ndarray]:
        """Array form of evict_expired: (sorted keys, value matrix, dirty mask)."""
        if self.completed_iteration is not None and completed < self.completed_iteration:
            raise CacheOrderingError(
                f"completed iteration went backwards: {completed} < {self.completed_iteration}"
            )
        idx = np.flatnonzero(self._used & (self._ttl <= completed))
        self.completed_iteration = completed
        if idx.size == 0:
            return [], np.zeros((0, self.emb_dim), dtype=np.float32), np.zeros(0, dtype=bool)
        return self._release(idx)

    def evict_expired(self, completed: int) -> list[tuple[EmbeddingKey, np.ndarray, bool]]:
        """Remove and return all entries with ttl <= completed, sorted by key.

        An entry with ttl == t serves batch t and becomes evictable once batch t
        completes. Sets the cache's completed-iteration watermark.
        """
        keys, values, dirty = self.evict_expired_arrays(completed)
        return [(k, values[i], bool(dirty[i])) for i, k in enumerate(keys)]

    def drain_arrays(self) -> tuple[list[EmbeddingKey], np.ndarray, np.ndarray]:
        """Array form of drain: every resident entry, sorted by key."""
        idx = np.flatnonzero(self._used)
        if idx.size == 0:
            return [], np.zeros((0, self.emb_dim), dtype=np.float32), np.zeros(0, dtype=bool)
        return self._release(idx)

    def drain(self) -> list[tuple[EmbeddingKey, np.ndarray, bool]]:
        """Remove and return every resident entry, sorted by key (end-of-run flush)."""
        keys, values, dirty = self.drain_arrays()
        return [(k, values[i], bool(dirty[i])) for i, k in enumerate(keys)]

    def content_checksum(self) -> int:
        """Order-independent 64-bit checksum of (key, ttl, dirty, value) content.

        Cheap enough to compare replicas every iteration; collisions are
        vanishingly unlikely but canonical_digest is the authoritative check.
        """
        idx = np.flatnonzero(self._used)
        if idx.size == 0:
            return 0
        packed = np.fromiter(
            (
                (self._keys[s].table_id << 44) ^ self._keys[s].row_id
                for s in idx
            ),
            dtype=np.uint64,
            count=idx.size,
        )
        word = splitmix64_array(packed)
        word = splitmix64_array(word ^ self._ttl[idx].astype(np.uint64))
        word = splitmix64_array(word ^ (self._dirty[idx].astype(np.uint64) << np.uint64(63)))
        vals = self._values[idx].view(np.uint32).astype(np.uint64)
        for j in range(vals.shape[1]):
            word = splitmix64_array(word ^ vals[:, j])
        return int(np.bitwise_xor.reduce(word))

    def canonical_digest(self) -> str:
        """Canonical content digest over key-sorted entries."""
        h = hashlib.blake2b(digest_size=16)
        for key in sorted(self._slots):
            slot = self._slots[key]
            h.update(
                np.array(
                    [key.table_id, key.row_id, int(self._ttl[slot]), int(self._dirty[slot])],
                    dtype="<i8",
                ).tobytes()
            )
            h.update(self._values[slot].astype("<f4").tobytes())
        return h.hexdigest()
