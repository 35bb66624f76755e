"""Pipeline orchestration and the synchronous baseline oracle.

The pipelined engine drives the planner, dispatches prefetches under the
consistency gate (no prefetch for iteration x until every dirty eviction with
ttl <= x - L_x is durable in the store), maintains T replicated caches, splits
cache synchronization into critical and background halves, and batches eviction
write-backs with round-robin flushing. Wall time is replaced by a simulated
clock so overlap claims become exact arithmetic. The baseline runs plain
fetch-train-write-back on the same arithmetic path; matching final store
digests, bit for bit, is the correctness criterion.
"""

from __future__ import annotations

import hashlib
import json
import math
import queue
import threading
from bisect import bisect_right
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cache import DynamicCache
from .errors import ConfigurationError, EngineError, IncomparableRunsError
from .lookahead import CachePlan, LookaheadState, adapt_on_pressure, auto_lookahead, emit_next_plan, new_state
from .report import IterationRecord, RunReport
from .store import ShardedStore
from .trainer import StubModelConfig, combine_core, gradient_core, sgd_step
from .traces import Batch, EmbeddingKey, Schema

_MODES = ("serial", "threaded")

FAULT_NO_GATE = "no_gate"
FAULT_DROP_PREFETCH = "drop_prefetch"


@dataclass
class EngineConfig:
    """Knobs for one run; mirrors the JSON config file field for field."""

    cache_capacity: int
    batch_size: int
    lookahead: int = 0  # 0 = derive from capacity via the prefix-union rule
    num_trainers: int = 1
    num_shards: int = 1
    rpc_batch_proportion: float = 0.25
    fetch_latency: float = 0.25
    compute_latency: float = 1.0
    sync_bandwidth: float = 1000.0  # cache entries per simulated time unit
    lr: float = 0.01
    c_value: float = 0.01
    c_label: float = 0.001
    seed: int = 0
    iterations: int = 0  # 0 = whole trace
    split_sync: bool = True
    mode: str = "serial"
    replication_check_interval: int = 64
    check_mirror: bool = False
    record_events: bool = False

    def __post_init__(self):
        if self.cache_capacity < 1:
            raise ConfigurationError("cache_capacity must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lookahead < 0:
            raise ConfigurationError("lookahead must be >= 0 (0 = auto)")
        if self.num_trainers < 1:
            raise ConfigurationError("num_trainers must be >= 1")
        if not 0 < self.rpc_batch_proportion <= 1:
            raise ConfigurationError("rpc_batch_proportion must be in (0, 1]")
        if self.fetch_latency < 0 or self.compute_latency < 0:
            raise ConfigurationError("latencies must be >= 0")
        if self.sync_bandwidth <= 0:
            raise ConfigurationError("sync_bandwidth must be > 0")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.mode not in _MODES:
            raise ConfigurationError(f"mode must be one of {_MODES}")
        if self.replication_check_interval < 1:
            raise ConfigurationError("replication_check_interval must be >= 1")

    def stub(self) -> StubModelConfig:
        return StubModelConfig(lr=self.lr, c_value=self.c_value, c_label=self.c_label)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def load_config(path: str) -> EngineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return EngineConfig.from_dict(json.load(fh))


def _schema_dict(schema: Schema) -> dict:
    return {
        "num_tables": schema.num_tables,
        "rows_per_table": list(schema.rows_per_table),
        "num_dense": schema.num_dense,
        "emb_dim": schema.emb_dim,
    }


def _pack_keys(keys: Sequence[EmbeddingKey]) -> np.ndarray:
    if not keys:
        return np.zeros(0, dtype=np.int64)
    arr = np.asarray(keys, dtype=np.int64).reshape(len(keys), 2)
    return (arr[:, 0] << 44) | arr[:, 1]


@dataclass(slots=True)
class _RankPrep:
    occ_idx: np.ndarray  # occurrence -> rank-unique index, occurrence order
    labels: np.ndarray  # float32 per occurrence
    to_batch: np.ndarray  # rank-unique -> batch-unique index


@dataclass(slots=True)
class _BatchPrep:
    unique_keys: list[EmbeddingKey]  # first-occurrence order
    packed: np.ndarray  # int64, first-occurrence order
    packed_sorted: np.ndarray
    sorted_keys: list[EmbeddingKey]
    perm: np.ndarray  # first-occ -> sorted: sorted_keys[j] == unique_keys[perm[j]]
    from_sorted: np.ndarray  # position of unique_keys[i] within sorted order
    ranks: list[_RankPrep]


def _prep_batch(batch: Batch, num_trainers: int) -> _BatchPrep:
    key = ("prep", num_trainers)
    prep = batch._memo.get(key)
    if prep is not None:
        return prep

    unique = {k: i for i, k in enumerate(batch.unique_keys())}
    packed = _pack_keys(list(unique))
    perm = np.argsort(packed, kind="stable")
    packed_sorted = packed[perm]
    unique_list = list(unique)
    sorted_keys = [unique_list[i] for i in perm]
    from_sorted = np.empty(len(perm), dtype=np.int64)
    from_sorted[perm] = np.arange(len(perm), dtype=np.int64)

    n = len(batch.examples)
    ranks = []
    for r in range(num_trainers):
        lo = r * n // num_trainers
        hi = (r + 1) * n // num_trainers
        rank_unique: dict[EmbeddingKey, int] = {}
        occ_idx: list[int] = []
        labels: list[int] = []
        for ex in batch.examples[lo:hi]:
            for k in ex.sparse:
                pos = rank_unique.get(k)
                if pos is None:
                    pos = len(rank_unique)
                    rank_unique[k] = pos
                occ_idx.append(pos)
                labels.append(ex.label)
        ranks.append(
            _RankPrep(
                occ_idx=np.asarray(occ_idx, dtype=np.int64),
                labels=np.asarray(labels, dtype=np.float32),
                to_batch=np.asarray([unique[k] for k in rank_unique], dtype=np.int64),
            )
        )
    prep = _BatchPrep(unique_list, packed, packed_sorted, sorted_keys, perm, from_sorted, ranks)
    batch._memo[key] = prep
    return prep


def _materialize(trace: Iterable[Batch], iterations: int) -> list[Batch]:
    batches = list(trace)
    if iterations > 0:
        batches = batches[:iterations]
    if not batches:
        raise ConfigurationError("trace has no batches")
    base = batches[0].iteration
    for i, b in enumerate(batches):
        if b.iteration != base + i:
            raise EngineError(f"batch iterations not consecutive at position {i}")
    return batches


class _PlanFeed:
    """Ordered plan source; in threaded mode the planner runs in its own thread."""

    def __init__(self, state: LookaheadState, batches: list[Batch], threaded: bool, snapshots: dict | None):
        self.state = state
        self._snapshots = snapshots
        self._base = batches[0].iteration

        def plans():
            source = iter(batches)
            while (plan := emit_next_plan(state, source)) is not None:
                if snapshots is not None:
                    snapshots[plan.iteration - self._base] = set(state.in_cache)
                yield plan
                adapt_on_pressure(state)

        if threaded:
            self._queue: queue.Queue = queue.Queue(maxsize=8)

            def pump():
                for plan in plans():
                    self._queue.put(plan)
                self._queue.put(None)

            self._thread = threading.Thread(target=pump, name="planner", daemon=True)
            self._thread.start()
            self._gen = None
        else:
            self._gen = plans()
            self._thread = None

    def next_plan(self) -> CachePlan | None:
        if self._gen is not None:
            return next(self._gen, None)
        return self._queue.get()

    def join(self):
        if self._thread is not None:
            self._thread.join(timeout=60)


class _PipelineRun:
    def __init__(
        self,
        cfg: EngineConfig,
        schema: Schema,
        batches: list[Batch],
        trace_fingerprint: str | None,
        fault: str | None,
    ):
        if fault not in (None, FAULT_NO_GATE, FAULT_DROP_PREFETCH):
            raise ConfigurationError(f"unknown fault {fault!r}")
        self.cfg = cfg
        self.schema = schema
        self.batches = batches
        self.fingerprint = trace_fingerprint
        self.fault = fault
        self.base = batches[0].iteration
        self.n = len(batches)
        self.T = cfg.num_trainers
        self.stub = cfg.stub()

        if cfg.lookahead:
            self.initial_lookahead = cfg.lookahead
        else:
            self.initial_lookahead = auto_lookahead(iter(batches), cfg.cache_capacity)
        self.flush_interval = max(1, math.ceil(cfg.rpc_batch_proportion * self.initial_lookahead))

        self.store = ShardedStore(schema, cfg.num_shards, cfg.seed)
        self.caches = [DynamicCache(cfg.cache_capacity, schema.emb_dim) for _ in range(self.T)]
        self.mirror_snapshots: dict[int, set] | None = {} if cfg.check_mirror else None
        self.planner_state = new_state(self.initial_lookahead, cfg.cache_capacity)
        self.feed = _PlanFeed(self.planner_state, batches, cfg.mode == "threaded", self.mirror_snapshots)

        self.pending: deque[CachePlan] = deque()
        self.exhausted = False
        self.staged: dict[int, tuple[CachePlan, np.ndarray, float]] = {}

        # Eviction write-back buffering. All trainers buffer identically; the
        # flushing trainer rotates per flush.
        self.buffers: list[list[tuple[list[EmbeddingKey], np.ndarray]]] = [[] for _ in range(self.T)]
        self.min_unflushed_ttl: int | None = None
        self.flushed_through = self.base - 1
        self.event_starts: list[int] = []
        self.event_completes: list[float] = []
        self.flush_log: list[dict] = []
        self.flush_counter = 0
        self.forced_flushes = 0

        self.crit_end = 0.0
        self.bg_end = 0.0
        self.records: list[IterationRecord] = []
        self.events: list[dict] | None = [] if cfg.record_events else None
        self.clean_evictions = 0
        self.dirty_evictions = 0
        self.total_prefetched = 0
        self.peak_occupancy = 0
        self.drop_done = False

        self.pool = ThreadPoolExecutor(max_workers=self.T, thread_name_prefix="trainer") if cfg.mode == "threaded" else None
        self.maint = ThreadPoolExecutor(max_workers=1, thread_name_prefix="maintenance") if cfg.mode == "threaded" else None

    # -- plan dispatch -------------------------------------------------------

    def _dispatch_pos(self, plan: CachePlan) -> int:
        pos = plan.iteration - self.base
        s = pos - plan.lookahead
        if s < 0:
            return -1
        if self.fault == FAULT_NO_GATE:
            # Dispatch as soon as batch s is trained, ignoring whether its
            # evictions are durable: the staleness this invites is the point.
            return s
        p = self.flush_interval
        boundary = ((s + 1 + p - 1) // p) * p - 1  # first flush boundary >= s
        return min(boundary, pos - 1)

    def _gate_time(self, theta: int) -> float:
        j = bisect_right(self.event_starts, theta) - 1
        return self.event_completes[j] if j >= 0 else 0.0

    def _dispatch(self, plan: CachePlan, cur: int) -> None:
        theta = plan.iteration - plan.lookahead
        if self.fault != FAULT_NO_GATE and self.min_unflushed_ttl is not None and self.min_unflushed_ttl <= theta:
            # Natural flush cadence did not cover the gate (lookahead shrank
            # below the flush interval): stall the dispatch on a forced flush.
            self._flush("forced", cur)
            self.forced_flushes += 1
        dispatch_time = self._gate_time(theta)
        arrival = dispatch_time + self.cfg.fetch_latency
        values = self.store.fetch(plan.prefetch)
        self.staged[plan.iteration - self.base] = (plan, values, arrival)

    def _dispatch_until(self, cur: int) -> None:
        while True:
            if not self.pending:
                if self.exhausted:
                    return
                plan = self.feed.next_plan()
                if plan is None:
                    self.exhausted = True
                    return
                self.pending.append(plan)
            plan = self.pending[0]
            if self._dispatch_pos(plan) <= cur:
                self.pending.popleft()
                self._dispatch(plan, cur)
            else:
                return

    # -- flushing ------------------------------------------------------------

    def _flush(self, kind: str, pos: int) -> None:
        through = self.base + pos
        flusher = self.flush_counter % self.T
        chunks = self.buffers[flusher]
        count = 0
        if len(chunks) == 1:
            # Chunks are key-sorted already; gate semantics keep keys unique
            # within one chunk.
            keys, values = chunks[0]
            self.store.write_back(keys, values)
            count = len(keys)
        elif chunks:
            all_keys = [k for keys, _ in chunks for k in keys]
            stacked = np.concatenate([values for _, values in chunks])
            merged = {key: i for i, key in enumerate(all_keys)}  # last write wins
            keys = sorted(merged)
            self.store.write_back(keys, stacked[[merged[k] for k in keys]])
            count = len(keys)
        complete = max(self.crit_end, self.bg_end) + self.cfg.fetch_latency
        self.event_starts.append(self.flushed_through + 1)
        self.event_completes.append(complete)
        self.flush_log.append(
            {"position": pos, "kind": kind, "entries": count, "trainer": flusher}
        )
        self.flushed_through = through
        self.min_unflushed_ttl = None
        self.buffers = [[] for _ in range(self.T)]
        self.flush_counter += 1

    # -- per-iteration work --------------------------------------------------

    def _check_replicas(self, pos: int) -> None:
        if self.T == 1:
            return
        ref = self.caches[0].content_checksum()
        for r in range(1, self.T):
            if self.caches[r].content_checksum() != ref:
                raise EngineError(f"replica {r} diverged at position {pos}")

    def _replicated_eviction(
        self, what: str, release
    ) -> tuple[list[EmbeddingKey], np.ndarray, np.ndarray]:
        keys, values, dirty = release(self.caches[0])
        for r in range(1, self.T):
            other_keys, other_values, other_dirty = release(self.caches[r])
            if (
                other_keys != keys
                or not np.array_equal(other_dirty, dirty)
                or not np.array_equal(other_values, values)
            ):
                raise EngineError(f"replica {r} diverged during {what}")
        return keys, values, dirty

    def _buffer_dirty(self, keys: list[EmbeddingKey], values: np.ndarray, dirty: np.ndarray, iteration: int) -> None:
        n_dirty = int(dirty.sum())
        self.clean_evictions += len(keys) - n_dirty
        self.dirty_evictions += n_dirty
        if n_dirty:
            dirty_keys = [k for k, d in zip(keys, dirty) if d]
            chunk = (dirty_keys, values[dirty])
            for r in range(self.T):
                self.buffers[r].append(chunk)
            if self.min_unflushed_ttl is None or iteration < self.min_unflushed_ttl:
                self.min_unflushed_ttl = iteration

    def _maintenance(self, pos: int) -> dict:
        """Evict expired entries on every replica, buffer dirty ones, flush on cadence."""
        iteration = self.base + pos
        keys, values, dirty = self._replicated_eviction(
            f"eviction at iteration {iteration}", lambda c: c.evict_expired_arrays(iteration)
        )
        self._buffer_dirty(keys, values, dirty, iteration)
        evicted_count = len(keys)
        evicted_keys = keys

        last = pos == self.n - 1
        if last:
            dkeys, dvalues, ddirty = self._replicated_eviction(
                "final drain", lambda c: c.drain_arrays()
            )
            self._buffer_dirty(dkeys, dvalues, ddirty, iteration)
            if self.buffers[0]:
                self._flush("final", pos)
            evicted_count += len(dkeys)
            evicted_keys = keys + dkeys
        elif (pos + 1) % self.flush_interval == 0 and self.buffers[0]:
            self._flush("boundary", pos)

        if (pos + 1) % self.cfg.replication_check_interval == 0 or last:
            self._check_replicas(pos)
        if self.mirror_snapshots is not None:
            expect = self.mirror_snapshots.get(pos)
            got = self.caches[0].key_set()
            if expect is not None and not last and expect != got:
                raise EngineError(
                    f"planner mirror diverged at position {pos}: "
                    f"{len(expect)} mirrored vs {len(got)} resident"
                )
        return {
            "evicted_count": evicted_count,
            "occupancy_end": len(self.caches[0]),
            "evicted_keys": evicted_keys,
        }

    def _rank_gradients(self, r: int, prep: _BatchPrep, cache_values: np.ndarray) -> np.ndarray:
        rank = prep.ranks[r]
        return gradient_core(rank.occ_idx, rank.labels, cache_values[rank.to_batch], self.stub)

    def _finalize_record(self, partial: dict, maint: dict) -> None:
        rec = IterationRecord(
            iteration=partial["iteration"],
            warmup=partial["warmup"],
            compute=partial["compute"],
            critical_sync=partial["critical_sync"],
            blocked_on_prefetch=partial["blocked_on_prefetch"],
            blocked_on_eviction=partial["blocked_on_eviction"],
            blocked_on_background=partial["blocked_on_background"],
            occupancy_peak=partial["occupancy_peak"],
            occupancy_end=maint["occupancy_end"],
            churn=partial["prefetch_count"] + maint["evicted_count"],
            prefetch_count=partial["prefetch_count"],
            evicted_count=maint["evicted_count"],
            critical_size=partial["critical_size"],
            background_size=partial["background_size"],
            lookahead=partial["lookahead"],
        )
        self.records.append(rec)
        if self.events is not None:
            self.events.append(
                {
                    "iteration": rec.iteration,
                    "prefetch": partial["prefetch_keys"],
                    "ttl_updates": partial["ttl_updates"],
                    "evicted": maint["evicted_keys"],
                }
            )

    def run(self) -> RunReport:
        cfg = self.cfg
        bw = cfg.sync_bandwidth
        emb_dim = self.schema.emb_dim
        self._dispatch_until(-1)
        maint_future = None
        maint_partial: dict | None = None

        for pos, batch in enumerate(self.batches):
            if maint_future is not None:
                maint = maint_future.result() if self.maint else maint_future
                self._finalize_record(maint_partial, maint)
            if pos > 0:
                self._dispatch_until(pos - 1)

            iteration = batch.iteration
            staged = self.staged.pop(pos, None)
            if staged is None:
                raise EngineError(f"no staged prefetch for position {pos}")
            plan, values, arrival = staged
            if plan.iteration != iteration:
                raise EngineError(f"plan {plan.iteration} misaligned with batch {iteration}")

            prefetch_keys = plan.prefetch
            ttl_updates = plan.ttl_updates
            if (
                self.fault == FAULT_DROP_PREFETCH
                and not self.drop_done
                and pos >= self.n // 2
                and prefetch_keys
            ):
                lost = prefetch_keys[0]
                keep = [i for i, k in enumerate(prefetch_keys) if k != lost]
                prefetch_keys = [prefetch_keys[i] for i in keep]
                values = values[keep]
                ttl_updates = [(k, t) for k, t in ttl_updates if k != lost]
                self.drop_done = True

            ttls = dict(ttl_updates)
            for cache in self.caches:
                cache.apply_prefetch(prefetch_keys, values, ttls)
                cache.apply_ttl_updates(ttl_updates)
            occupancy_peak = len(self.caches[0])
            self.peak_occupancy = max(self.peak_occupancy, occupancy_peak)
            self.total_prefetched += len(prefetch_keys)

            # critical-path head: wait for prefetch arrival if it is late
            stall = max(0.0, arrival - self.crit_end)
            blocked_prefetch = min(stall, max(0.0, cfg.fetch_latency - self.crit_end))
            blocked_eviction = stall - blocked_prefetch
            t0 = self.crit_end + stall
            compute_end = t0 + cfg.compute_latency

            prep = _prep_batch(batch, self.T)
            unique = prep.unique_keys
            slots = [c.resolve_slots(unique, iteration) for c in self.caches]
            cache_values = [c.values_at(s) for c, s in zip(self.caches, slots)]

            if self.pool is not None:
                futures = [
                    self.pool.submit(self._rank_gradients, r, prep, cache_values[r])
                    for r in range(self.T)
                ]
                rank_grads = [f.result() for f in futures]
            else:
                rank_grads = [
                    self._rank_gradients(r, prep, cache_values[r]) for r in range(self.T)
                ]
            combined = combine_core(
                [prep.ranks[r].to_batch for r in range(self.T)], rank_grads, len(unique), emb_dim
            )
            dirty_mask = np.any(combined != 0, axis=1)

            if pos + 1 < self.n:
                next_prep = _prep_batch(self.batches[pos + 1], self.T)
                crit_mask = np.isin(prep.packed, next_prep.packed_sorted, assume_unique=True)
            else:
                crit_mask = np.zeros(len(unique), dtype=bool)

            if cfg.split_sync:
                critical_size = int(crit_mask.sum())
                background_size = len(unique) - critical_size
                crit_idx = np.flatnonzero(crit_mask)
                bg_idx = np.flatnonzero(~crit_mask)
                for c, s, vals in zip(self.caches, slots, cache_values):
                    new = sgd_step(vals, combined, cfg.lr)
                    c.update_rows(s[crit_idx], new[crit_idx], dirty_mask[crit_idx])
                    c.update_rows(s[bg_idx], new[bg_idx], dirty_mask[bg_idx])
            else:
                critical_size = len(unique)
                background_size = 0
                for c, s, vals in zip(self.caches, slots, cache_values):
                    c.update_rows(s, sgd_step(vals, combined, cfg.lr), dirty_mask)

            sync_start = max(compute_end, self.bg_end)
            blocked_background = sync_start - compute_end
            crit_end = sync_start + critical_size / bw
            bg_end = crit_end + background_size / bw
            self.crit_end, self.bg_end = crit_end, bg_end

            maint_partial = {
                "iteration": iteration,
                "warmup": pos < self.initial_lookahead,
                "compute": cfg.compute_latency,
                "critical_sync": critical_size / bw,
                "blocked_on_prefetch": blocked_prefetch,
                "blocked_on_eviction": blocked_eviction,
                "blocked_on_background": blocked_background,
                "occupancy_peak": occupancy_peak,
                "prefetch_count": len(prefetch_keys),
                "critical_size": critical_size,
                "background_size": background_size,
                "lookahead": plan.lookahead,
                "prefetch_keys": list(prefetch_keys),
                "ttl_updates": list(ttl_updates),
            }
            if self.maint is not None:
                maint_future = self.maint.submit(self._maintenance, pos)
            else:
                maint_future = self._maintenance(pos)

        maint = maint_future.result() if self.maint else maint_future
        self._finalize_record(maint_partial, maint)
        if not self.exhausted and (self.pending or self.feed.next_plan() is not None):
            raise EngineError("planner emitted more plans than batches")
        self.feed.join()
        if self.pool:
            self.pool.shutdown()
        if self.maint:
            self.maint.shutdown()

        digest = self.store.snapshot_digest()
        totals = _totals_from_records(self.records)
        totals.update(
            {
                "total_time": max(self.crit_end, self.bg_end, max(self.event_completes, default=0.0)),
                "peak_occupancy": self.peak_occupancy,
                "prefetched_entries": self.total_prefetched,
                "clean_evictions": self.clean_evictions,
                "dirty_evictions": self.dirty_evictions,
                "flush_count": self.flush_counter,
                "forced_flushes": self.forced_flushes,
                "store_entries_written": self.store.entries_written,
                "store_write_calls": self.store.write_calls,
            }
        )
        return RunReport(
            kind="pipelined",
            config=self.cfg.to_dict(),
            schema=_schema_dict(self.schema),
            iterations_run=self.n,
            initial_lookahead=self.initial_lookahead,
            final_lookahead=self.planner_state.lookahead,
            flush_interval=self.flush_interval,
            totals=totals,
            metadata=_run_metadata(),
            final_store_digest=digest,
            trace_fingerprint=self.fingerprint,
            flushes=self.flush_log,
            records=self.records,
            events=self.events,
            final_store=self.store,
        )


def _totals_from_records(records: list[IterationRecord]) -> dict:
    return {
        "compute_time": sum(r.compute for r in records),
        "critical_sync_time": sum(r.critical_sync for r in records),
        "blocked_on_prefetch": sum(r.blocked_on_prefetch for r in records),
        "blocked_on_eviction": sum(r.blocked_on_eviction for r in records),
        "blocked_on_background": sum(r.blocked_on_background for r in records),
        "churn": sum(r.churn for r in records),
        "critical_entries": sum(r.critical_size for r in records),
        "background_entries": sum(r.background_size for r in records),
    }


def _run_metadata() -> dict:
    return {
        "clean_eviction_writeback": "skipped",
        "cache_sync_semantics": "gradient-sum-local-apply",
        "background_apply": "before-eviction-capture",
        "flush_rotation": "round-robin",
        "clock": "simulated",
    }


def run_pipeline(
    cfg: EngineConfig,
    schema: Schema,
    trace: Iterable[Batch],
    *,
    trace_fingerprint: str | None = None,
    fault: str | None = None,
) -> RunReport:
    """Run the pipelined engine over a batch stream; the report carries the final digest."""
    batches = _materialize(trace, cfg.iterations)
    return _PipelineRun(cfg, schema, batches, trace_fingerprint, fault).run()


def run_synchronous_baseline(
    cfg: EngineConfig,
    schema: Schema,
    trace: Iterable[Batch],
    *,
    trace_fingerprint: str | None = None,
) -> RunReport:
    """Plain fetch-train-write-back training: the bit-exact correctness oracle.

    Its final state is a pure function of (trace, schema, seed, stub config,
    num_trainers); lookahead, capacity, and flush knobs do not exist here.
    """
    batches = _materialize(trace, cfg.iterations)
    stub = cfg.stub()
    store = ShardedStore(schema, cfg.num_shards, cfg.seed)
    bw = cfg.sync_bandwidth
    records = []
    crit_end = 0.0
    for batch in batches:
        prep = _prep_batch(batch, cfg.num_trainers)
        sorted_values = store.fetch(prep.sorted_keys)
        values = sorted_values[prep.from_sorted]
        rank_grads = [
            gradient_core(rank.occ_idx, rank.labels, values[rank.to_batch], stub)
            for rank in prep.ranks
        ]
        combined = combine_core(
            [rank.to_batch for rank in prep.ranks], rank_grads, len(prep.unique_keys), schema.emb_dim
        )
        new_values = sgd_step(values, combined, cfg.lr)
        store.write_back(prep.sorted_keys, new_values[prep.perm])
        sync = len(prep.unique_keys) / bw
        crit_end += cfg.fetch_latency + cfg.compute_latency + sync + cfg.fetch_latency
        records.append(
            IterationRecord(
                iteration=batch.iteration,
                warmup=False,
                compute=cfg.compute_latency,
                critical_sync=sync,
                blocked_on_prefetch=cfg.fetch_latency,
                blocked_on_eviction=cfg.fetch_latency,
                blocked_on_background=0.0,
                occupancy_peak=0,
                occupancy_end=0,
                churn=0,
                prefetch_count=0,
                evicted_count=0,
                critical_size=len(prep.unique_keys),
                background_size=0,
                lookahead=0,
            )
        )
    totals = _totals_from_records(records)
    totals.update(
        {
            "total_time": crit_end,
            "peak_occupancy": 0,
            "prefetched_entries": 0,
            "clean_evictions": 0,
            "dirty_evictions": 0,
            "flush_count": 0,
            "forced_flushes": 0,
            "store_entries_written": store.entries_written,
            "store_write_calls": store.write_calls,
        }
    )
    return RunReport(
        kind="baseline",
        config=cfg.to_dict(),
        schema=_schema_dict(schema),
        iterations_run=len(batches),
        initial_lookahead=0,
        final_lookahead=0,
        flush_interval=0,
        totals=totals,
        metadata={"clock": "simulated"},
        final_store_digest=store.snapshot_digest(),
        trace_fingerprint=trace_fingerprint,
        records=records,
        events=None,
        final_store=store,
    )


@dataclass
class EquivalenceResult:
    """Outcome of comparing two run digests, with an optional value-level diff."""

    equal: bool
    digest_a: str
    digest_b: str
    diffs: list = field(default_factory=list)

    def describe(self) -> str:
        if self.equal:
            return f"equal: {self.digest_a}"
        lines = [f"digest mismatch: {self.digest_a} != {self.digest_b}"]
        for key, a, b in self.diffs:
            lines.append(f"  {key.table_id}:{key.row_id} {a.tolist()} != {b.tolist()}")
        return "\n".join(lines)


_COMPARABLE_FIELDS = ("seed", "lr", "c_value", "c_label", "num_trainers", "batch_size")


def verify_equivalence(a: RunReport, b: RunReport, diff_limit: int = 100) -> EquivalenceResult:
    """Compare final store digests of two completed runs on identical inputs."""
    if a.final_store_digest is None or b.final_store_digest is None:
        raise IncomparableRunsError("both runs must have completed")
    if a.schema != b.schema:
        raise IncomparableRunsError("runs used different schemas")
    for name in _COMPARABLE_FIELDS:
        if a.config.get(name) != b.config.get(name):
            raise IncomparableRunsError(
                f"config field {name!r} differs: {a.config.get(name)} vs {b.config.get(name)}"
            )
    if a.iterations_run != b.iterations_run:
        raise IncomparableRunsError("runs covered different iteration counts")
    if (
        a.trace_fingerprint is not None
        and b.trace_fingerprint is not None
        and a.trace_fingerprint != b.trace_fingerprint
    ):
        raise IncomparableRunsError("runs used different traces")
    equal = a.final_store_digest == b.final_store_digest
    diffs = []
    if not equal and a.final_store is not None and b.final_store is not None:
        diffs = a.final_store.diff(b.final_store, limit=diff_limit)
    return EquivalenceResult(equal, a.final_store_digest, b.final_store_digest, diffs)


def fingerprint_file(path: str, batch_size: int) -> str:
    """Trace fingerprint for CLI runs: file content hash plus the batching knob."""
    h = hashlib.blake2b(digest_size=16)
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            h.update(chunk)
    return f"{h.hexdigest()}:bs={batch_size}"
