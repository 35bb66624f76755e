"""Access-pattern analytics over example streams.

These are the measurements that motivate the planner design: how skewed key
accesses are, how a day-zero hot set decays across later segments, and how
little of a batch a fixed hot set covers as batches grow.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import AnalyticsError, ConfigurationError
from .traces import EmbeddingKey, Example, batchify

CDF_FRACTIONS = (0.0001, 0.001, 0.01, 0.1, 1.0)

# Below this many distinct keys the CDF also carries one point per key.
PER_KEY_RESOLUTION_LIMIT = 4096


def access_counts(stream: Iterable[Example]) -> Counter[EmbeddingKey]:
    """Count accesses per key across the whole stream."""
    counts: Counter[EmbeddingKey] = Counter()
    for ex in stream:
        counts.update(ex.sparse)
    return counts


def _ranked_keys(counts: Counter[EmbeddingKey]) -> list[EmbeddingKey]:
    return sorted(counts, key=lambda k: (-counts[k], k))


def _top_set(counts: Counter[EmbeddingKey], top_fraction: float) -> set[EmbeddingKey]:
    if not 0 < top_fraction <= 1:
        raise ConfigurationError("top_fraction must be in (0, 1]")
    ranked = _ranked_keys(counts)
    m = max(1, math.ceil(top_fraction * len(ranked)))
    return set(ranked[:m])


def access_cdf(stream: Iterable[Example]) -> list[tuple[float, float]]:
    """Cumulative access fraction vs. cumulative key fraction, hottest keys first.

    Points are emitted at the canonical fractions in ``CDF_FRACTIONS`` (taking
    the top ceil(f*K) keys) plus one point per key for small traces. The result
    is sorted, deduplicated, monotone in both coordinates, and ends at (1, 1).
    """
    counts = access_counts(stream)
    if not counts:
        raise AnalyticsError("access_cdf needs a nonempty stream")
    ranked = _ranked_keys(counts)
    totals = np.cumsum([counts[k] for k in ranked], dtype=np.int64)
    total = int(totals[-1])
    num_keys = len(ranked)

    points: dict[float, float] = {}
    for f in CDF_FRACTIONS:
        m = max(1, math.ceil(f * num_keys))
        points[f] = totals[m - 1] / total
    if num_keys <= PER_KEY_RESOLUTION_LIMIT:
        for i in range(num_keys):
            frac = (i + 1) / num_keys
            points.setdefault(frac, totals[i] / total)
    return sorted(points.items())


def popularity_drift(
    stream: Iterable[Example],
    segment_boundaries: list[int],
    top_fraction: float,
) -> list[float]:
    """Coverage of segment-0's hot set in each later segment.

    ``segment_boundaries`` are example indices splitting the stream into
    segments [0, b0), [b0, b1), ..., [b_last, end). The hot set is the top
    ``top_fraction`` of distinct keys by frequency in segment 0; the result
    holds, per segment, the fraction of its accesses that hit that set.
    """
    if any(b <= 0 for b in segment_boundaries) or any(
        b2 <= b1 for b1, b2 in zip(segment_boundaries, segment_boundaries[1:])
    ):
        raise ConfigurationError("segment boundaries must be strictly increasing and positive")
    num_segments = len(segment_boundaries) + 1
    seg_counts: list[Counter[EmbeddingKey]] = [Counter() for _ in range(num_segments)]
    seg = 0
    for i, ex in enumerate(stream):
        while seg < len(segment_boundaries) and i >= segment_boundaries[seg]:
            seg += 1
        seg_counts[seg].update(ex.sparse)
    if any(not c for c in seg_counts):
        empty = [d for d, c in enumerate(seg_counts) if not c]
        raise AnalyticsError(f"empty segment(s): {empty}")

    top = _top_set(seg_counts[0], top_fraction)
    coverage = []
    for c in seg_counts:
        total = sum(c.values())
        hits = sum(n for k, n in c.items() if k in top)
        coverage.append(hits / total)
    return coverage


@dataclass(frozen=True)
class BatchCoverageSummary:
    """Distribution of per-batch hot-set coverage ratios."""

    batch_size: int
    top_fraction: float
    num_batches: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float


def coverage_vs_batch_size(
    stream: Iterable[Example],
    batch_size: int,
    top_fraction: float,
) -> BatchCoverageSummary:
    """Per-batch ratio of hot unique keys to all unique keys, summarized.

    The hot set is fixed from whole-stream frequencies; per batch the ratio is
    |unique keys in the batch that are hot| / |unique keys in the batch|.
    Quartiles use linear interpolation (numpy default).
    """
    counts: Counter[EmbeddingKey] = Counter()
    batch_uniques: list[set[EmbeddingKey]] = []
    for batch in batchify(stream, batch_size):
        uniq = set(batch.unique_keys())
        batch_uniques.append(uniq)
        for ex in batch.examples:
            counts.update(ex.sparse)
    if not batch_uniques:
        raise AnalyticsError("coverage_vs_batch_size needs a nonempty stream")

    top = _top_set(counts, top_fraction)
    ratios = np.array(
        [len(uniq & top) / len(uniq) for uniq in batch_uniques], dtype=np.float64
    )
    q1, median, q3 = np.quantile(ratios, [0.25, 0.5, 0.75])
    return BatchCoverageSummary(
        batch_size=batch_size,
        top_fraction=top_fraction,
        num_batches=len(ratios),
        minimum=float(ratios.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(ratios.max()),
        mean=float(ratios.mean()),
    )
