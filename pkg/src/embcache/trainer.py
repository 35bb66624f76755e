"""Deterministic stand-in for the dense model.

The gradient stub depends on the current embedding values, so any staleness --
a prefetch that skipped a pending write-back, a lost synchronization -- shows
up as digest divergence instead of silently cancelling out. All arithmetic is
single precision with a pinned accumulation order: per key, occurrence order
within a batch; across trainers, ascending rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cache import DynamicCache
from .errors import CacheMissError, ConfigurationError
from .traces import EmbeddingKey, Example

_HALF = np.float32(0.5)


@dataclass(frozen=True)
class StubModelConfig:
    """Coefficients of the stub gradient: g = c_value*v + c_label*(label-0.5)*1."""

    lr: float = 0.01
    c_value: float = 0.01
    c_label: float = 0.001

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")


def gradient_core(
    occ_unique_idx: np.ndarray,
    occ_labels: np.ndarray,
    unique_values: np.ndarray,
    cfg: StubModelConfig,
) -> np.ndarray:
    """Per-unique-key gradients from occurrence-level index/label arrays.

    Occurrence gradients are c_value*v + c_label*(label-0.5) broadcast over the
    embedding dimension; per-key sums accumulate in occurrence order in float32.
    """
    scaled = np.float32(cfg.c_value) * unique_values
    bias = (np.float32(cfg.c_label) * (occ_labels - _HALF))[:, None]
    occ_grads = scaled[occ_unique_idx] + bias
    out = np.zeros_like(unique_values)
    np.add.at(out, occ_unique_idx, occ_grads)
    return out


def local_gradients(
    sub_batch: Sequence[Example],
    values: Mapping[EmbeddingKey, np.ndarray],
    cfg: StubModelConfig,
) -> dict[EmbeddingKey, np.ndarray]:
    """Gradients for one trainer's sub-batch, keyed by its unique keys.

    ``values`` must cover every key of the sub-batch; a gap is an all-hit
    violation. Keys appear in first-occurrence order.
    """
    unique: dict[EmbeddingKey, int] = {}
    occ_idx: list[int] = []
    occ_labels: list[int] = []
    for ex in sub_batch:
        for key in ex.sparse:
            pos = unique.get(key)
            if pos is None:
                pos = len(unique)
                unique[key] = pos
            occ_idx.append(pos)
            occ_labels.append(ex.label)
    if not unique:
        return {}
    try:
        mat = np.stack([np.asarray(values[k], dtype=np.float32) for k in unique])
    except KeyError as exc:
        raise CacheMissError(exc.args[0]) from None
    grads = gradient_core(
        np.asarray(occ_idx, dtype=np.int64),
        np.asarray(occ_labels, dtype=np.float32),
        mat,
        cfg,
    )
    return {key: grads[i] for key, i in unique.items()}


def combine_core(
    rank_batch_idx: Sequence[np.ndarray],
    rank_grads: Sequence[np.ndarray],
    num_unique: int,
    emb_dim: int,
) -> np.ndarray:
    """Sum per-rank gradient blocks into batch-unique rows, ascending rank order."""
    out = np.zeros((num_unique, emb_dim), dtype=np.float32)
    nonempty = [i for i in range(len(rank_grads)) if len(rank_grads[i])]
    if nonempty:
        idx = np.concatenate([np.asarray(rank_batch_idx[i], dtype=np.int64) for i in nonempty])
        grads = np.concatenate([rank_grads[i] for i in nonempty])
        np.add.at(out, idx, grads)
    return out


def combine_gradients(
    per_trainer: Sequence[Mapping[EmbeddingKey, np.ndarray]],
) -> dict[EmbeddingKey, np.ndarray]:
    """Sum gradient maps across trainers in ascending rank order.

    The key set is the union; rank order is normative because float32 addition
    is order-sensitive in the low bits.
    """
    union: dict[EmbeddingKey, int] = {}
    for g in per_trainer:
        for key in g:
            if key not in union:
                union[key] = len(union)
    if not union:
        return {}
    emb_dim = None
    rank_idx = []
    rank_mats = []
    for g in per_trainer:
        keys = list(g)
        if keys:
            emb_dim = len(next(iter(g.values())))
        rank_idx.append(np.asarray([union[k] for k in keys], dtype=np.int64))
        rank_mats.append(
            np.stack([np.asarray(g[k], dtype=np.float32) for k in keys])
            if keys
            else np.zeros((0, 0), dtype=np.float32)
        )
    out = combine_core(rank_idx, rank_mats, len(union), emb_dim)
    return {key: out[i] for key, i in union.items()}


def sgd_step(values: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """One plain SGD step in single precision: v - lr*g.

    Both the pipelined engine and the synchronous baseline go through this
    function, so their arithmetic is identical bit for bit.
    """
    return values - np.float32(lr) * grads


def apply_updates(
    cache: DynamicCache,
    combined: Mapping[EmbeddingKey, np.ndarray],
    cfg: StubModelConfig,
) -> set[EmbeddingKey]:
    """Apply combined gradients to a cache; returns the updated key set.

    Entries with an all-zero gradient keep their value and stay clean.
    """
    keys = list(combined)
    if not keys:
        return set()
    slots = cache.resolve_slots(keys)
    grads = np.stack([np.asarray(combined[k], dtype=np.float32) for k in keys])
    new_values = sgd_step(cache.values_at(slots), grads, cfg.lr)
    cache.update_rows(slots, new_values, np.any(grads != 0, axis=1))
    return set(keys)


def split_sync_sets(
    updated: set[EmbeddingKey], next_batch_keys: set[EmbeddingKey]
) -> tuple[list[EmbeddingKey], list[EmbeddingKey]]:
    """Partition updated keys into (critical, background) by next-batch membership.

    Critical keys are needed by the next iteration and synchronize on the
    critical path; the rest can synchronize in the background. Both halves are
    sorted for determinism.
    """
    critical = sorted(updated & next_batch_keys)
    background = sorted(updated - next_batch_keys)
    return critical, background
