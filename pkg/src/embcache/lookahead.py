"""Oracular cache planning.

A sliding window of upcoming batches is scanned to decide, per iteration, which
keys a trainer must prefetch and how long each key of the current batch stays
resident (its TTL, the iteration number of its last use within the window). The
planner mirrors the trainer cache contents so prefetches are emitted exactly
once per residency.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import ConfigurationError, RecordParseError
from .traces import Batch, EmbeddingKey


@dataclass(slots=True)
class CachePlan:
    """Per-iteration planner output: what to fetch and how long keys live.

    ``prefetch`` is sorted by (table_id, row_id); ``ttl_updates`` holds exactly
    one (key, ttl) pair per unique key of the batch, in first-occurrence order.
    ``lookahead`` records the window size in force when the plan was emitted.
    """

    iteration: int
    prefetch: list[EmbeddingKey]
    ttl_updates: list[tuple[EmbeddingKey, int]]
    lookahead: int

    def ttl_map(self) -> dict[EmbeddingKey, int]:
        return dict(self.ttl_updates)


@dataclass
class LookaheadState:
    """Mutable planner state: window queue, last-occurrence tracker, cache mirror."""

    lookahead: int
    cache_capacity: int
    batch_queue: deque[Batch] = field(default_factory=deque)
    latest_tracker: dict[EmbeddingKey, int] = field(default_factory=dict)
    in_cache: set[EmbeddingKey] = field(default_factory=set)
    projected_occupancy: int = 0
    # run metrics
    insertions: int = 0
    removals: int = 0
    peak_occupancy: int = 0
    peak_projected: int = 0


def new_state(lookahead: int, cache_capacity: int) -> LookaheadState:
    """Fresh planner state for a window of ``lookahead`` batches (current included)."""
    if lookahead < 1:
        raise ConfigurationError("lookahead must be >= 1")
    if cache_capacity < 1:
        raise ConfigurationError("cache_capacity must be >= 1")
    return LookaheadState(lookahead=lookahead, cache_capacity=cache_capacity)


def emit_next_plan(state: LookaheadState, source: Iterator[Batch]) -> CachePlan | None:
    """Refill the window, pop its front batch, and emit that batch's plan.

    Returns None once the source is exhausted and the window drained. For each
    unique key of the popped batch (first-occurrence order): a TTL update is
    recorded from the tracker; the key is prefetched and mirrored iff absent
    from the mirror; keys whose last windowed occurrence is this very batch are
    dropped from mirror and tracker (the trainer evicts them after the batch).
    """
    queue = state.batch_queue
    tracker = state.latest_tracker
    while len(queue) < state.lookahead:
        batch = next(source, None)
        if batch is None:
            break
        queue.append(batch)
        iteration = batch.iteration
        for key in batch.unique_keys():
            tracker[key] = iteration

    # Tracker holds window keys plus mirrored keys, so its size bounds the
    # occupancy any batch in the window can reach.
    state.projected_occupancy = len(tracker)
    state.peak_projected = max(state.peak_projected, state.projected_occupancy)
    if not queue:
        return None

    batch = queue.popleft()
    iteration = batch.iteration
    in_cache = state.in_cache
    resident_before = len(in_cache)
    prefetch: list[EmbeddingKey] = []
    ttl_updates: list[tuple[EmbeddingKey, int]] = []
    for key in batch.unique_keys():
        ttl = tracker[key]
        ttl_updates.append((key, ttl))
        if key not in in_cache:
            prefetch.append(key)
            in_cache.add(key)
            state.insertions += 1
        if ttl == iteration:
            in_cache.remove(key)
            del tracker[key]
            state.removals += 1
    prefetch.sort()
    state.peak_occupancy = max(state.peak_occupancy, resident_before + len(prefetch))
    return CachePlan(iteration, prefetch, ttl_updates, state.lookahead)


def adapt_on_pressure(state: LookaheadState) -> bool:
    """Halve the lookahead when projected occupancy exceeds capacity.

    Already-emitted TTLs stay valid; the window simply stops refilling past the
    new size. Returns True when a halving happened. The lookahead never drops
    below 1.
    """
    if state.projected_occupancy > state.cache_capacity and state.lookahead > 1:
        state.lookahead = max(1, state.lookahead // 2)
        return True
    return False


def plan_trace(
    source: Iterable[Batch], lookahead: int, cache_capacity: int
) -> Iterator[CachePlan]:
    """Plan an entire batch stream: exactly one CachePlan per batch, in order."""
    state = new_state(lookahead, cache_capacity)
    it = iter(source)
    while (plan := emit_next_plan(state, it)) is not None:
        yield plan
        adapt_on_pressure(state)


def auto_lookahead(source_prefix: Iterable[Batch], cache_capacity: int) -> int:
    """Largest batch count whose combined unique keys fit in the cache.

    Scans the prefix, accumulating the union of unique keys; returns the number
    of batches consumed before the union first exceeds ``cache_capacity`` (or
    the full prefix length if it never does).
    """
    if cache_capacity < 1:
        raise ConfigurationError("cache_capacity must be >= 1")
    seen: set[EmbeddingKey] = set()
    n = 0
    for batch in source_prefix:
        seen.update(batch.unique_keys())
        if len(seen) > cache_capacity:
            if n == 0:
                raise ConfigurationError(
                    f"first batch alone needs {len(seen)} cache entries, capacity is {cache_capacity}"
                )
            return n
        n += 1
    if n == 0:
        raise ConfigurationError("auto lookahead needs at least one batch")
    return n


def format_plan(plan: CachePlan) -> str:
    """Stable one-line record: ``iter=<n> prefetch=<t:r,...> ttl=<t:r@ttl,...>``."""
    pf = ",".join(f"{k.table_id}:{k.row_id}" for k in plan.prefetch)
    tt = ",".join(f"{k.table_id}:{k.row_id}@{t}" for k, t in plan.ttl_updates)
    return f"iter={plan.iteration} prefetch={pf} ttl={tt}"


def parse_plan(line: str) -> CachePlan:
    """Parse one plan record; the lookahead field is not serialized and reads as 0."""
    try:
        iter_part, pf_part, ttl_part = line.strip().split(" ")
        iteration = int(iter_part.removeprefix("iter="))
        pf_body = pf_part.removeprefix("prefetch=")
        ttl_body = ttl_part.removeprefix("ttl=")
        prefetch = []
        if pf_body:
            for tok in pf_body.split(","):
                t, r = tok.split(":")
                prefetch.append(EmbeddingKey(int(t), int(r)))
        ttl_updates = []
        if ttl_body:
            for tok in ttl_body.split(","):
                kpart, ttl = tok.split("@")
                t, r = kpart.split(":")
                ttl_updates.append((EmbeddingKey(int(t), int(r)), int(ttl)))
    except ValueError:
        raise RecordParseError(f"bad plan record: {line!r}") from None
    return CachePlan(iteration, prefetch, ttl_updates, 0)
