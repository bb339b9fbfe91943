"""Tripartite KV cache: context (top-scored) | residual (merged) | proximity (newest).

Overflow cascades proximity -> context -> residual. A token pushed out of a
full residual segment is folded into the slot whose key has the largest dot
product with its own, as a running mean with a fusion count.
"""

from __future__ import annotations

from collections import deque
from dataclasses import replace
from typing import Sequence

import numpy as np

from .attention import AttentionResult, compensated_attention
from .core import Budgets, CacheEntry, RunConfig, as_vector
from .scoring import ScoreTracker


def select_merge_slot(residual: Sequence[CacheEntry], k) -> int:
    """Index of the slot maximising ``slot.key . k``; ties go to the lowest index."""
    if len(residual) == 0:
        raise ValueError("no residual slot to merge into")
    dots = np.array([float(e.key @ k) for e in residual])
    return int(np.argmax(dots))


def merge_into_slot(slot: CacheEntry, k, v) -> CacheEntry:
    w = slot.fusion_count
    if w < 1:
        raise ValueError(f"fusion count must be >= 1, got {w}")
    return replace(
        slot,
        key=(w * slot.key + k) / (w + 1),
        value=(w * slot.value + v) / (w + 1),
        fusion_count=w + 1,
    )


class ZeroMergeCache:
    """Single-head compressed cache driven one token at a time by :meth:`step`.

    With ``residual == 0`` tokens leaving the context segment are discarded,
    which makes this a score-based eviction cache.
    """

    def __init__(self, config: RunConfig, budgets: Budgets | None = None, keep_merge_log: bool = False):
        self.config = config
        self.budgets = budgets if budgets is not None else config.budgets
        self.context: list[CacheEntry] = []
        self.residual: list[CacheEntry] = []
        self.proximity: deque[CacheEntry] = deque()
        self.tracker = ScoreTracker(config.decay)
        self.t = 0
        self.fusions = 0
        self.discarded = 0
        self._next_uid = 0
        self.last_attended: list[CacheEntry] = []
        # uid of residual slot -> list of (key, value) of every original token folded in
        self.merge_log: dict[int, list[tuple[np.ndarray, np.ndarray]]] | None = {} if keep_merge_log else None

    def __len__(self) -> int:
        return len(self.context) + len(self.residual) + len(self.proximity)

    @property
    def capacity(self) -> int:
        return self.budgets.total()

    def occupancy(self) -> tuple[int, int, int]:
        return len(self.context), len(self.residual), len(self.proximity)

    def entries(self) -> list[CacheEntry]:
        """Live entries in concatenation order (no copies)."""
        return [*self.context, *self.residual, *self.proximity]

    def snapshot(self) -> list[CacheEntry]:
        """Copies of context | residual | proximity, with current scores filled in."""
        out = []
        for e in self.entries():
            c = e.copy()
            c.score = self.tracker.scores.get(e.uid, 0.0)
            out.append(c)
        return out

    def _new_entry(self, k: np.ndarray, v: np.ndarray) -> CacheEntry:
        self.t += 1
        entry = CacheEntry(k.copy(), v.copy(), 1, 0.0, self.t, self._next_uid)
        self._next_uid += 1
        self.tracker.register(entry.uid)
        return entry

    def step(self, q, k, v) -> AttentionResult:
        d = self.config.head_dim
        q = as_vector(q, d, "query")
        k = as_vector(k, d, "key")
        v = as_vector(v, d, "value")
        self.proximity.append(self._new_entry(k, v))

        entries = self.entries()
        self.last_attended = entries
        result = compensated_attention(q, entries, self.config.compensation)

        # residual slots are never ranked, so they are not scored
        n_ctx, n_res = len(self.context), len(self.residual)
        w = result.weights.tolist()
        scored = {e.uid: w[i] for i, e in enumerate(entries) if not n_ctx <= i < n_ctx + n_res}
        self.tracker.update(scored)

        self._cascade()
        return result

    def ingest_cascade(self, entry: CacheEntry) -> None:
        """Append an unscored token to proximity and resolve any overflow."""
        if entry.fusion_count != 1:
            raise ValueError("only single tokens can be ingested")
        if entry.uid in self.tracker:
            raise ValueError(f"entry {entry.uid} is already cached")
        self.t += 1
        self._next_uid = max(self._next_uid, entry.uid + 1)
        self.tracker.register(entry.uid)
        self.proximity.append(entry)
        self._cascade()

    def _cascade(self) -> None:
        b = self.budgets
        if len(self.proximity) <= b.proximity:
            return
        self.context.append(self.proximity.popleft())
        if len(self.context) <= b.context:
            return

        scores = self.tracker.scores
        ctx = self.context
        idx = min(range(len(ctx)), key=lambda i: (scores[ctx[i].uid], ctx[i].uid))
        evicted = ctx.pop(idx)
        self.tracker.drop(evicted.uid)
        if b.residual == 0:
            self.discarded += 1
            return

        if len(self.residual) < b.residual:
            self.residual.append(evicted)
            if self.merge_log is not None:
                self.merge_log[evicted.uid] = [(evicted.key.copy(), evicted.value.copy())]
            return

        slot = select_merge_slot(self.residual, evicted.key)
        target = self.residual[slot]
        self.residual[slot] = merge_into_slot(target, evicted.key, evicted.value)
        self.fusions += 1
        if self.merge_log is not None:
            self.merge_log[target.uid].append((evicted.key.copy(), evicted.value.copy()))


def snapshot(cache: ZeroMergeCache) -> list[CacheEntry]:
    return cache.snapshot()


class MultiHeadZeroMerge:
    """Independent caches, one per head. ``budgets`` may be shared or given per head."""

    def __init__(self, config: RunConfig, n_heads: int, budgets: Budgets | Sequence[Budgets] | None = None):
        if n_heads < 1:
            raise ValueError("n_heads must be positive")
        if budgets is None or isinstance(budgets, Budgets):
            per_head = [budgets or config.budgets] * n_heads
        else:
            per_head = list(budgets)
            if len(per_head) != n_heads:
                raise ValueError(f"got {len(per_head)} budgets for {n_heads} heads")
        self.heads = [ZeroMergeCache(config, b) for b in per_head]

    def step(self, qs, ks, vs) -> list[AttentionResult]:
        if not len(qs) == len(ks) == len(vs) == len(self.heads):
            raise ValueError("need one (q, k, v) per head")
        return [h.step(q, k, v) for h, q, k, v in zip(self.heads, qs, ks, vs)]
