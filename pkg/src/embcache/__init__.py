"""Deterministic embedding-cache training pipeline.

A lookahead planner turns a batch stream into per-iteration prefetch and TTL
plans; replicated TTL caches and a sharded embedding store execute them inside
a pipelined engine whose final state is bit-exactly equal to plain synchronous
training. Trace generation and skew analytics round out the toolkit.
"""

from .analytics import (
    BatchCoverageSummary,
    access_cdf,
    coverage_vs_batch_size,
    popularity_drift,
)
from .cache import DynamicCache
from .engine import (
    EngineConfig,
    EquivalenceResult,
    run_pipeline,
    run_synchronous_baseline,
    verify_equivalence,
)
from .errors import EmbcacheError
from .lookahead import (
    CachePlan,
    LookaheadState,
    adapt_on_pressure,
    auto_lookahead,
    emit_next_plan,
    format_plan,
    new_state,
    plan_trace,
)
from .report import IterationRecord, RunReport
from .store import ShardedStore
from .trainer import (
    StubModelConfig,
    apply_updates,
    combine_gradients,
    local_gradients,
    split_sync_sets,
)
from .traces import (
    Batch,
    EmbeddingKey,
    Example,
    Schema,
    ZipfSpec,
    batchify,
    generate_synthetic_trace,
    hash_categorical,
    iter_trace,
    parse_criteo_tsv,
    read_trace_schema,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "BatchCoverageSummary",
    "Batch",
    "CachePlan",
    "DynamicCache",
    "EmbcacheError",
    "EmbeddingKey",
    "EngineConfig",
    "EquivalenceResult",
    "Example",
    "IterationRecord",
    "LookaheadState",
    "RunReport",
    "Schema",
    "ShardedStore",
    "StubModelConfig",
    "ZipfSpec",
    "access_cdf",
    "adapt_on_pressure",
    "apply_updates",
    "auto_lookahead",
    "batchify",
    "combine_gradients",
    "coverage_vs_batch_size",
    "emit_next_plan",
    "format_plan",
    "generate_synthetic_trace",
    "hash_categorical",
    "iter_trace",
    "local_gradients",
    "new_state",
    "parse_criteo_tsv",
    "plan_trace",
    "popularity_drift",
    "read_trace_schema",
    "run_pipeline",
    "run_synchronous_baseline",
    "split_sync_sets",
    "verify_equivalence",
    "write_trace",
]
