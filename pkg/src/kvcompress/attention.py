"""Reference attention kernels over a list of cached keys/values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DTYPE, CacheEntry


@dataclass
class AttentionResult:
    weights: np.ndarray
    output: np.ndarray


def stable_softmax(logits) -> np.ndarray:
    """Softmax with max subtraction. Rejects empty or non-finite input."""
    x = np.asarray(logits, dtype=DTYPE)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax needs a non-empty 1-D sequence of logits")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax logits must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def _stack(vectors, name: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=DTYPE)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty sequence of vectors")
    return arr


def _logits(q, keys) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=DTYPE)
    k = _stack(keys, "keys")
    if q.ndim != 1 or q.shape[0] != k.shape[1]:
        raise ValueError(f"query dimension {q.shape} does not match key dimension {k.shape[1]}")
    return k @ q / math.sqrt(q.shape[0]), k


def _weighted_sum(weights: np.ndarray, values, n: int, d: int) -> np.ndarray:
    v = _stack(values, "values")
    if v.shape != (n, d):
        raise ValueError(f"values have shape {v.shape}, expected {(n, d)}")
    return weights @ v


def full_attention(q, keys, values) -> AttentionResult:
    """Exact scaled dot-product attention of ``q`` over ``keys``/``values``."""
    logits, k = _logits(q, keys)
    weights = stable_softmax(logits)
    return AttentionResult(weights, _weighted_sum(weights, values, *k.shape))


def compensated_attention_arrays(q, keys, values, fusion_counts, alpha: float) -> AttentionResult:
    """Array form of :func:`compensated_attention`.

    Each logit gets a bonus of ``alpha * ln(w)`` so a slot holding ``w``
    merged tokens competes for roughly ``w**alpha`` tokens' worth of mass.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    w = np.asarray(fusion_counts, dtype=DTYPE)
    if np.any(w < 1):
        raise ValueError("fusion counts must be >= 1")
    logits, k = _logits(q, keys)
    if w.shape != logits.shape:
        raise ValueError("one fusion count per key is required")
    weights = stable_softmax(logits + alpha * np.log(w))
    return AttentionResult(weights, _weighted_sum(weights, values, *k.shape))


def compensated_attention(q, entries: Sequence[CacheEntry], alpha: float) -> AttentionResult:
    if len(entries) == 0:
        raise ValueError("cannot attend over an empty cache")
    return compensated_attention_arrays(
        q,
        [e.key for e in entries],
        [e.value for e in entries],
        [e.fusion_count for e in entries],
        alpha,
    )
