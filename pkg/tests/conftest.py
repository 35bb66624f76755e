"""Shared fixtures: small synthetic traces and the four-batch worked example."""

from __future__ import annotations

import os

import pytest

from embcache.traces import (
    Batch,
    EmbeddingKey,
    Example,
    Schema,
    ZipfSpec,
    batchify,
    generate_synthetic_trace,
)


def make_batch(iteration: int, row_ids: list[int], table_id: int = 0) -> Batch:
    """One single-table batch with one example per key."""
    return Batch(
        iteration,
        [Example(i & 1, (), (EmbeddingKey(table_id, r),)) for i, r in enumerate(row_ids)],
    )


@pytest.fixture
def worked_trace() -> list[Batch]:
    """The four-batch worked example: {3,9}, {3,4}, {3,6}, {1,6}, numbered 1..4."""
    return [
        make_batch(1, [3, 9]),
        make_batch(2, [3, 4]),
        make_batch(3, [3, 6]),
        make_batch(4, [1, 6]),
    ]


@pytest.fixture(scope="session")
def small_schema() -> Schema:
    return Schema(2, (600, 400), 2, 4)


@pytest.fixture(scope="session")
def small_batches(small_schema) -> list[Batch]:
    spec = ZipfSpec(small_schema, 1.05, 60 * 64, seed=7)
    return list(batchify(generate_synthetic_trace(spec), 64))


def criteo_path() -> str | None:
    """Optional local Criteo Kaggle train.txt for dataset-gated checks."""
    path = os.environ.get("CRITEO_KAGGLE_PATH")
    return path if path and os.path.exists(path) else None
