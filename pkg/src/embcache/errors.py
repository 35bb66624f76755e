"""Exception types shared across the package."""

from __future__ import annotations


class EmbcacheError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(EmbcacheError):
    """Invalid configuration value or incompatible settings."""


class TraceError(EmbcacheError):
    """Base class for trace ingestion and format errors."""


class RecordParseError(TraceError):
    """A single input record could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(TraceError):
    """Input file layout does not match the declared schema."""


class TraceFormatError(TraceError):
    """Corrupt or unsupported canonical trace file."""


class AnalyticsError(EmbcacheError):
    """Invalid analytics request, e.g. an empty stream or empty segment."""


class CacheError(EmbcacheError):
    """Base class for dynamic-cache contract violations."""


class CacheMissError(CacheError):
    """A batch lookup touched a key that is not resident (all-hit violation)."""

    def __init__(self, key, iteration=None):
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"cache miss for {key!r}{where}")
        self.key = key
        self.iteration = iteration


class CacheCapacityError(CacheError):
    """An insert would exceed the configured entry capacity."""


class CacheOrderingError(CacheError):
    """Maintenance applied out of order: duplicate insert, or TTL/update for an absent key."""


class StoreError(EmbcacheError):
    """Base class for embedding-store errors."""


class StoreKeyError(StoreError):
    """Key outside the schema's table or row ranges."""


class WireFormatError(StoreError):
    """Malformed or unsupported store protocol frame."""


class EngineError(EmbcacheError):
    """Pipeline invariant violation: mirror divergence, replica drift, or gate breach."""


class IncomparableRunsError(EmbcacheError):
    """Two run reports cannot be checked for equivalence."""
