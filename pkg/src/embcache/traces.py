"""Trace data model and ingestion.

Defines the schema/example/batch types used everywhere else, parses Criteo-style
TSV input, generates deterministic Zipf-skewed synthetic workloads, groups
examples into numbered batches, and reads/writes the canonical binary trace
format (documented in the README).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    ConfigurationError,
    RecordParseError,
    SchemaError,
    TraceFormatError,
)
from .hashing import (
    fnv1a64_u64s,
    fnv1a64_u64_arrays,
    splitmix64_array,
    unit_from_u64_array,
)

TRACE_MAGIC = b"EMTRC1"
TRACE_VERSION = 1


class EmbeddingKey(NamedTuple):
    """One row of one embedding table; the unit of caching, prefetch, and write-back."""

    table_id: int
    row_id: int


@dataclass(frozen=True)
class Schema:
    """Shape of the embedding tables and dense inputs for one dataset."""

    num_tables: int
    rows_per_table: tuple[int, ...]
    num_dense: int
    emb_dim: int

    def __post_init__(self):
        object.__setattr__(self, "rows_per_table", tuple(int(r) for r in self.rows_per_table))
        if self.num_tables < 1:
            raise ConfigurationError("num_tables must be >= 1")
        if len(self.rows_per_table) != self.num_tables:
            raise ConfigurationError(
                f"rows_per_table has {len(self.rows_per_table)} entries, expected {self.num_tables}"
            )
        if any(r < 1 for r in self.rows_per_table):
            raise ConfigurationError("every table needs at least one row")
        if self.num_dense < 0:
            raise ConfigurationError("num_dense must be >= 0")
        if self.emb_dim < 1:
            raise ConfigurationError("emb_dim must be >= 1")

    @property
    def total_rows(self) -> int:
        return sum(self.rows_per_table)

    def contains_key(self, key: EmbeddingKey) -> bool:
        return 0 <= key.table_id < self.num_tables and 0 <= key.row_id < self.rows_per_table[key.table_id]


@dataclass(slots=True)
class Example:
    """A single training example: click label, dense features, one key per table."""

    label: int
    dense: tuple[float, ...]
    sparse: tuple[EmbeddingKey, ...]


@dataclass(slots=True)
class Batch:
    """A numbered group of consecutive examples."""

    iteration: int
    examples: list[Example]
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    def unique_keys(self) -> list[EmbeddingKey]:
        """Unique keys in first-occurrence order (examples in order, tables in order)."""
        cached = self._memo.get("unique")
        if cached is None:
            seen: set[EmbeddingKey] = set()
            cached = []
            for ex in self.examples:
                for key in ex.sparse:
                    if key not in seen:
                        seen.add(key)
                        cached.append(key)
            self._memo["unique"] = cached
        return cached


@dataclass(frozen=True)
class ZipfSpec:
    """Parameters for the synthetic skewed workload generator."""

    schema: Schema
    exponent: float
    num_examples: int
    seed: int

    def __post_init__(self):
        if not self.exponent > 0:
            raise ConfigurationError("zipf exponent must be > 0")
        if self.num_examples < 0:
            raise ConfigurationError("num_examples must be >= 0")


def hash_categorical(token: str, table_rows: int) -> int:
    """Map a hex categorical token to a stable row index in [0, table_rows).

    The token's low 64 bits are hashed with FNV-1a 64 over their little-endian
    byte encoding, then reduced mod the table size.
    """
    if table_rows < 1:
        raise ConfigurationError("table_rows must be >= 1")
    try:
        raw = int(token, 16)
    except ValueError:
        raise RecordParseError(f"not a hexadecimal token: {token!r}") from None
    return fnv1a64_u64s(raw) % table_rows


def parse_criteo_tsv(path: str, schema: Schema) -> Iterator[Example]:
    """Stream Examples from a Criteo-format TSV file.

    Rows are TAB-separated: label, ``num_dense`` integer columns, ``num_tables``
    hex columns; empty cells allowed. Empty dense cells become 0.0, non-empty
    values d become log(1+d); empty categorical cells map to row 0, hex tokens
    go through :func:`hash_categorical`. Dense values are rounded to single
    precision so traces round-trip the binary format bit-exactly.
    """
    expected = 1 + schema.num_dense + schema.num_tables
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != expected:
                raise SchemaError(
                    f"line {lineno}: expected {expected} columns, got {len(cols)}"
                )
            try:
                label = int(cols[0])
                if label not in (0, 1):
                    raise RecordParseError(f"label must be 0 or 1, got {cols[0]!r}")
                dense = []
                for cell in cols[1 : 1 + schema.num_dense]:
                    if cell == "":
                        dense.append(0.0)
                    else:
                        dense.append(float(np.float32(math.log1p(int(cell)))))
                sparse = []
                for table_id, cell in enumerate(cols[1 + schema.num_dense :]):
                    row = 0 if cell == "" else hash_categorical(cell, schema.rows_per_table[table_id])
                    sparse.append(EmbeddingKey(table_id, row))
            except RecordParseError as exc:
                raise RecordParseError(str(exc), line=lineno) from None
            except ValueError as exc:
                raise RecordParseError(str(exc), line=lineno) from None
            yield Example(label, tuple(dense), tuple(sparse))


def generate_synthetic_trace(spec: ZipfSpec) -> Iterator[Example]:
    """Deterministic skewed workload: per-table Zipf popularity over permuted rows.

    Row popularity in table t follows rank**-exponent over a per-table random
    permutation (so hot rows differ per table). Labels alternate from the seed's
    parity; dense features are a pure hash of (seed, example index, column).
    """
    schema = spec.schema
    n = spec.num_examples
    rng = np.random.default_rng(spec.seed)
    row_columns: list[np.ndarray] = []
    for rows in schema.rows_per_table:
        ranks = np.arange(1, rows + 1, dtype=np.float64)
        probs = ranks ** -spec.exponent
        probs /= probs.sum()
        perm = rng.permutation(rows)
        draws = rng.choice(rows, size=n, p=probs)
        row_columns.append(perm[draws])

    if schema.num_dense:
        idx = np.repeat(np.arange(n, dtype=np.uint64), schema.num_dense)
        col = np.tile(np.arange(schema.num_dense, dtype=np.uint64), n)
        mixed = splitmix64_array(
            np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF) ^ fnv1a64_u64_arrays(idx, col)
        )
        dense_mat = unit_from_u64_array(mixed).astype(np.float32).reshape(n, schema.num_dense)
    else:
        dense_mat = None

    seed_parity = spec.seed & 1
    tables = range(schema.num_tables)
    for i in range(n):
        dense = tuple(float(v) for v in dense_mat[i]) if dense_mat is not None else ()
        sparse = tuple(EmbeddingKey(t, int(row_columns[t][i])) for t in tables)
        yield Example((i + seed_parity) & 1, dense, sparse)


def batchify(stream: Iterable[Example], batch_size: int) -> Iterator[Batch]:
    """Group consecutive examples into batches numbered 0, 1, 2, ...

    The final partial batch is emitted as-is.
    """
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    iteration = 0
    pending: list[Example] = []
    for ex in stream:
        pending.append(ex)
        if len(pending) == batch_size:
            yield Batch(iteration, pending)
            iteration += 1
            pending = []
    if pending:
        yield Batch(iteration, pending)


def _record_struct(schema: Schema) -> struct.Struct:
    return struct.Struct(f"<B{schema.num_dense}f{schema.num_tables}Q")


def _write_header(fh: BinaryIO, schema: Schema, count: int) -> None:
    fh.write(TRACE_MAGIC)
    fh.write(struct.pack("<BB", TRACE_VERSION, 0))
    fh.write(struct.pack("<III", schema.num_tables, schema.num_dense, schema.emb_dim))
    fh.write(struct.pack(f"<{schema.num_tables}Q", *schema.rows_per_table))
    fh.write(struct.pack("<Q", count))


def write_trace(path: str, schema: Schema, examples: Iterable[Example]) -> int:
    """Write the canonical binary trace file; returns the number of examples written."""
    rec = _record_struct(schema)
    count = 0
    with open(path, "wb") as fh:
        _write_header(fh, schema, 0)
        count_pos = fh.tell() - 8
        for ex in examples:
            if len(ex.sparse) != schema.num_tables:
                raise SchemaError(
                    f"example {count}: {len(ex.sparse)} keys, schema has {schema.num_tables} tables"
                )
            fh.write(rec.pack(ex.label, *ex.dense, *(k.row_id for k in ex.sparse)))
            count += 1
        fh.seek(count_pos)
        fh.write(struct.pack("<Q", count))
    return count


def _read_header(fh: BinaryIO) -> tuple[Schema, int]:
    magic = fh.read(len(TRACE_MAGIC))
    if magic != TRACE_MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    version, _pad = struct.unpack("<BB", fh.read(2))
    if version != TRACE_VERSION:
        raise TraceFormatError(f"unsupported trace version {version}")
    num_tables, num_dense, emb_dim = struct.unpack("<III", fh.read(12))
    rows = struct.unpack(f"<{num_tables}Q", fh.read(8 * num_tables))
    (count,) = struct.unpack("<Q", fh.read(8))
    return Schema(num_tables, rows, num_dense, emb_dim), count


def read_trace_schema(path: str) -> Schema:
    """Read only the schema header of a canonical trace file."""
    with open(path, "rb") as fh:
        schema, _ = _read_header(fh)
    return schema


def iter_trace(path: str) -> Iterator[Example]:
    """Stream Examples from a canonical trace file."""
    with open(path, "rb") as fh:
        schema, count = _read_header(fh)
        rec = _record_struct(schema)
        tables = range(schema.num_tables)
        for i in range(count):
            buf = fh.read(rec.size)
            if len(buf) != rec.size:
                raise TraceFormatError(f"truncated record {i}")
            fields = rec.unpack(buf)
            label = fields[0]
            dense = tuple(float(v) for v in fields[1 : 1 + schema.num_dense])
            rows = fields[1 + schema.num_dense :]
            yield Example(label, dense, tuple(EmbeddingKey(t, rows[t]) for t in tables))
