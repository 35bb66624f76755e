"""Sharded embedding parameter store.

Rows initialize lazily from a pure hash of (seed, table, row, component), so a
value is identical whether it is materialized eagerly, on first fetch, or never
touched before a digest. Written rows live per shard in growable float32
matrices. Digests walk the full schema in canonical (table, row, component)
order over little-endian float32 bytes.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, StoreError, StoreKeyError, TraceFormatError
from .hashing import fnv1a64_u64_arrays, splitmix64_array, unit_from_u64_array
from .traces import EmbeddingKey, Schema

_INIT_LOW = -0.05
_INIT_SPAN = 0.1

DUMP_MAGIC = b"EMSTD1"


def initial_values(schema: Schema, seed: int, tables: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Deterministic initial vectors for the given key columns, shape (n, emb_dim).

    Component j of key (t, r) is uniform in [-0.05, 0.05), derived from
    splitmix64(seed XOR fnv1a64 over the little-endian u64s (t, r, j)).
    """
    n = len(tables)
    dim = schema.emb_dim
    t = np.repeat(np.asarray(tables, dtype=np.uint64), dim)
    r = np.repeat(np.asarray(rows, dtype=np.uint64), dim)
    j = np.tile(np.arange(dim, dtype=np.uint64), n)
    mixed = splitmix64_array(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ fnv1a64_u64_arrays(t, r, j))
    unit = unit_from_u64_array(mixed)
    return (_INIT_LOW + _INIT_SPAN * unit).astype(np.float32).reshape(n, dim)


class _Shard:
    __slots__ = ("rows", "matrix", "count")

    def __init__(self, emb_dim: int):
        self.rows: dict[EmbeddingKey, int] = {}
        self.matrix = np.zeros((64, emb_dim), dtype=np.float32)
        self.count = 0

    def ensure_room(self, extra: int) -> None:
        needed = self.count + extra
        if needed <= self.matrix.shape[0]:
            return
        size = self.matrix.shape[0]
        while size < needed:
            size *= 2
        grown = np.zeros((size, self.matrix.shape[1]), dtype=np.float32)
        grown[: self.count] = self.matrix[: self.count]
        self.matrix = grown


class ShardedStore:
    """All embedding tables behind a fetch/write-back interface, hash-sharded."""

    def __init__(self, schema: Schema, num_shards: int, seed: int):
        if num_shards < 1:
            raise ConfigurationError("num_shards must be >= 1")
        self.schema = schema
        self.num_shards = num_shards
        self.seed = seed
        self._shards = [_Shard(schema.emb_dim) for _ in range(num_shards)]
        self._lock = threading.Lock()
        self.fetch_calls = 0
        self.write_calls = 0
        self.entries_written = 0

    def shard_of(self, key: EmbeddingKey) -> int:
        """Stable shard index: fnv1a64 over (table_id, row_id) mod num_shards."""
        return int(
            fnv1a64_u64_arrays(
                np.asarray([key.table_id], dtype=np.uint64),
                np.asarray([key.row_id], dtype=np.uint64),
            )[0]
            % self.num_shards
        )

    def _key_columns(self, keys: Sequence[EmbeddingKey]) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(keys, dtype=np.int64).reshape(len(keys), 2)
        tables, rows = arr[:, 0], arr[:, 1]
        if (tables < 0).any() or (tables >= self.schema.num_tables).any():
            raise StoreKeyError("table id outside schema")
        limits = np.asarray(self.schema.rows_per_table, dtype=np.int64)[tables]
        if (rows < 0).any() or (rows >= limits).any():
            raise StoreKeyError("row id outside table")
        return tables, rows

    def _shard_ids(self, tables: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return (
            fnv1a64_u64_arrays(tables.astype(np.uint64), rows.astype(np.uint64))
            % np.uint64(self.num_shards)
        ).astype(np.int64)

    def fetch(self, keys: Sequence[EmbeddingKey]) -> np.ndarray:
        """Current values for unique sorted keys, in key order; read-only."""
        if not keys:
            return np.zeros((0, self.schema.emb_dim), dtype=np.float32)
        with self._lock:
            self.fetch_calls += 1
            tables, rows = self._key_columns(keys)
            shard_ids = self._shard_ids(tables, rows)
            out = np.empty((len(keys), self.schema.emb_dim), dtype=np.float32)
            # Positions with no written row fall back to the functional init.
            row_idx = np.empty(len(keys), dtype=np.int64)
            for i, key in enumerate(keys):
                row = self._shards[shard_ids[i]].rows.get(key)
                row_idx[i] = -1 if row is None else row
            for s, shard in enumerate(self._shards):
                here = np.flatnonzero((shard_ids == s) & (row_idx >= 0))
                if here.size:
                    out[here] = shard.matrix[row_idx[here]]
            missing = np.flatnonzero(row_idx < 0)
            if missing.size:
                out[missing] = initial_values(
                    self.schema, self.seed, tables[missing], rows[missing]
                )
            return out

    def write_back(self, keys: Sequence[EmbeddingKey], values: np.ndarray) -> None:
        """Overwrite values for unique keys, atomically per call."""
        if not len(keys):
            return
        if len(set(keys)) != len(keys):
            raise StoreError("write_back keys must be unique")
        with self._lock:
            self.write_calls += 1
            tables, rows = self._key_columns(keys)
            shard_ids = self._shard_ids(tables, rows)
            row_idx = np.empty(len(keys), dtype=np.int64)
            for i, key in enumerate(keys):
                shard = self._shards[shard_ids[i]]
                row = shard.rows.get(key)
                if row is None:
                    shard.ensure_room(1)
                    row = shard.count
                    shard.rows[key] = row
                    shard.count += 1
                row_idx[i] = row
            for s, shard in enumerate(self._shards):
                here = np.flatnonzero(shard_ids == s)
                if here.size:
                    shard.matrix[row_idx[here]] = values[here]
            self.entries_written += len(keys)

    def written_items(self) -> Iterator[tuple[EmbeddingKey, np.ndarray]]:
        """All explicitly written entries, sorted by key."""
        merged: dict[EmbeddingKey, np.ndarray] = {}
        for shard in self._shards:
            for key, row in shard.rows.items():
                merged[key] = shard.matrix[row]
        for key in sorted(merged):
            yield key, merged[key]

    def _table_matrix(self, table_id: int, written: dict[EmbeddingKey, np.ndarray]) -> np.ndarray:
        rows = self.schema.rows_per_table[table_id]
        mat = initial_values(
            self.schema,
            self.seed,
            np.full(rows, table_id, dtype=np.uint64),
            np.arange(rows, dtype=np.uint64),
        )
        for key, vec in written.items():
            if key.table_id == table_id:
                mat[key.row_id] = vec
        return mat

    def snapshot_digest(self) -> str:
        """Digest over every value of the schema in (table, row, component) order."""
        written = {k: v for k, v in self.written_items()}
        h = hashlib.blake2b(digest_size=16)
        for table_id in range(self.schema.num_tables):
            h.update(self._table_matrix(table_id, written).astype("<f4").tobytes())
        return h.hexdigest()

    def diff(self, other: "ShardedStore", limit: int = 100) -> list[tuple[EmbeddingKey, np.ndarray, np.ndarray]]:
        """First ``limit`` keys whose values differ between two stores."""
        if self.schema != other.schema:
            raise StoreError("cannot diff stores with different schemas")
        mine = {k: v for k, v in self.written_items()}
        theirs = {k: v for k, v in other.written_items()}
        out = []
        for table_id in range(self.schema.num_tables):
            a = self._table_matrix(table_id, mine)
            b = other._table_matrix(table_id, theirs)
            for row in np.flatnonzero((a != b).any(axis=1)):
                out.append((EmbeddingKey(table_id, int(row)), a[row].copy(), b[row].copy()))
                if len(out) >= limit:
                    return out
        return out


def write_store_dump(store: ShardedStore, path: str) -> int:
    """Write all written entries plus schema and seed; returns the entry count."""
    schema = store.schema
    items = list(store.written_items())
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<III", schema.num_tables, schema.num_dense, schema.emb_dim))
        fh.write(struct.pack(f"<{schema.num_tables}Q", *schema.rows_per_table))
        fh.write(struct.pack("<QQ", store.seed & 0xFFFFFFFFFFFFFFFF, len(items)))
        rec = struct.Struct(f"<IQ{schema.emb_dim}f")
        for key, vec in items:
            fh.write(rec.pack(key.table_id, key.row_id, *(float(v) for v in vec)))
    return len(items)


def read_store_dump(path: str) -> ShardedStore:
    """Rebuild a single-shard store from a dump (for offline diffing)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(DUMP_MAGIC))
        if magic != DUMP_MAGIC:
            raise TraceFormatError(f"bad store dump magic {magic!r}")
        num_tables, num_dense, emb_dim = struct.unpack("<III", fh.read(12))
        rows = struct.unpack(f"<{num_tables}Q", fh.read(8 * num_tables))
        seed, count = struct.unpack("<QQ", fh.read(16))
        schema = Schema(num_tables, rows, num_dense, emb_dim)
        store = ShardedStore(schema, 1, seed)
        rec = struct.Struct(f"<IQ{emb_dim}f")
        keys = []
        vals = []
        for i in range(count):
            buf = fh.read(rec.size)
            if len(buf) != rec.size:
                raise TraceFormatError(f"truncated store dump record {i}")
            fields = rec.unpack(buf)
            keys.append(EmbeddingKey(fields[0], fields[1]))
            vals.append(fields[2:])
        if keys:
            store.write_back(keys, np.asarray(vals, dtype=np.float32))
    return store
