"""Run reports: per-iteration timeline records, totals, and serialization.

A report serializes to JSON (summary, totals, config echo, final digest) plus a
per-iteration CSV. Both encodings are byte-deterministic for identical runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .errors import TraceFormatError

if TYPE_CHECKING:
    from .store import ShardedStore

CSV_COLUMNS = (
    "iteration",
    "warmup",
    "compute",
    "critical_sync",
    "blocked_on_prefetch",
    "blocked_on_eviction",
    "blocked_on_background",
    "occupancy_peak",
    "occupancy_end",
    "churn",
    "prefetch_count",
    "evicted_count",
    "critical_size",
    "background_size",
    "lookahead",
)


@dataclass(slots=True)
class IterationRecord:
    """Critical-path time split and cache activity for one iteration."""

    iteration: int
    warmup: bool
    compute: float
    critical_sync: float
    blocked_on_prefetch: float
    blocked_on_eviction: float
    blocked_on_background: float
    occupancy_peak: int
    occupancy_end: int
    churn: int
    prefetch_count: int
    evicted_count: int
    critical_size: int
    background_size: int
    lookahead: int

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.iteration),
                str(int(self.warmup)),
                repr(self.compute),
                repr(self.critical_sync),
                repr(self.blocked_on_prefetch),
                repr(self.blocked_on_eviction),
                repr(self.blocked_on_background),
                str(self.occupancy_peak),
                str(self.occupancy_end),
                str(self.churn),
                str(self.prefetch_count),
                str(self.evicted_count),
                str(self.critical_size),
                str(self.background_size),
                str(self.lookahead),
            ]
        )


@dataclass
class RunReport:
    """Everything one run produced: timeline, counters, final-state digest."""

    kind: str
    config: dict
    schema: dict
    iterations_run: int
    initial_lookahead: int
    final_lookahead: int
    flush_interval: int
    totals: dict
    metadata: dict
    final_store_digest: str | None
    trace_fingerprint: str | None
    flushes: list[dict] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)
    events: list[dict] | None = None
    final_store: "ShardedStore | None" = None

    def summary_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "schema": self.schema,
            "iterations_run": self.iterations_run,
            "initial_lookahead": self.initial_lookahead,
            "final_lookahead": self.final_lookahead,
            "flush_interval": self.flush_interval,
            "totals": self.totals,
            "metadata": self.metadata,
            "final_store_digest": self.final_store_digest,
            "trace_fingerprint": self.trace_fingerprint,
            "flushes": self.flushes,
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.summary_dict(), indent=2, sort_keys=True) + "\n").encode()

    def to_csv_bytes(self) -> bytes:
        lines = [",".join(CSV_COLUMNS)]
        lines.extend(r.csv_row() for r in self.records)
        return ("\n".join(lines) + "\n").encode()


def load_report(path: str) -> RunReport:
    """Load the JSON summary of a report (records stay in the CSV sidecar)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return RunReport(
            kind=data["kind"],
            config=data["config"],
            schema=data["schema"],
            iterations_run=data["iterations_run"],
            initial_lookahead=data["initial_lookahead"],
            final_lookahead=data["final_lookahead"],
            flush_interval=data["flush_interval"],
            totals=data["totals"],
            metadata=data["metadata"],
            final_store_digest=data["final_store_digest"],
            trace_fingerprint=data["trace_fingerprint"],
            flushes=data.get("flushes", []),
        )
    except KeyError as exc:
        raise TraceFormatError(f"report missing field {exc.args[0]!r}") from None
