"""Geometric-decay contribution scores.

Each tracked token keeps ``s <- decay * s + a`` where ``a`` is the attention
weight it received this step. ``decay=1`` gives plain cumulative attention
(the heavy-hitter criterion); ``decay=0`` keeps only the latest weight.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping


class ScoreTracker:
    def __init__(self, decay: float):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {decay}")
        self.decay = float(decay)
        self.scores: dict[int, float] = {}

    def __contains__(self, uid: int) -> bool:
        return uid in self.scores

    def __len__(self) -> int:
        return len(self.scores)

    def register(self, uid: int) -> None:
        """Start tracking ``uid`` at score 0."""
        if uid in self.scores:
            raise KeyError(f"entry {uid} is already tracked")
        self.scores[uid] = 0.0

    def drop(self, uid: int) -> float:
        return self.scores.pop(uid)

    def score(self, uid: int) -> float:
        return self.scores[uid]

    def update(self, weights: Mapping[int, float]) -> None:
        """Apply one decay step. Tracked entries absent from ``weights`` receive 0."""
        for uid, a in weights.items():
            if uid not in self.scores:
                raise KeyError(f"entry {uid} is not registered with the tracker")
            if not a >= 0.0 or not math.isfinite(a):
                raise ValueError(f"attention weight for entry {uid} must be finite and >= 0, got {a}")
        lam = self.decay
        scores = self.scores
        for uid in scores:
            scores[uid] = lam * scores[uid] + weights.get(uid, 0.0)


def update_scores(tracker: ScoreTracker, weights: Mapping[int, float]) -> ScoreTracker:
    tracker.update(weights)
    return tracker


def closed_form_score(weight_history: Iterable[float], decay: float) -> float:
    """Unrolled recurrence: sum of ``decay**(T - tau) * a_tau`` over the history."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    hist = [float(a) for a in weight_history]
    for a in hist:
        if not a >= 0.0 or not math.isfinite(a):
            raise ValueError(f"weights must be finite and >= 0, got {a}")
    n = len(hist)
    return math.fsum(decay ** (n - 1 - i) * a for i, a in enumerate(hist))
