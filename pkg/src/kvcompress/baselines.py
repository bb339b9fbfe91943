"""Comparison cache policies sharing the ``step(q, k, v)`` interface."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .attention import AttentionResult, full_attention
from .core import CacheEntry, RunConfig, as_vector
from .zeromerge import ZeroMergeCache

POLICY_TAGS = ("full", "window", "sink-window", "heavy-hitter", "zeromerge")


class _Policy:
    def __init__(self, head_dim: int):
        self.head_dim = head_dim
        self.t = 0

    def _admit(self, q, k, v) -> tuple[np.ndarray, CacheEntry]:
        d = self.head_dim
        q = as_vector(q, d, "query")
        entry = CacheEntry(as_vector(k, d, "key").copy(), as_vector(v, d, "value").copy(), 1, 0.0, self.t + 1, self.t)
        self.t += 1
        return q, entry

    def entries(self) -> list[CacheEntry]:
        raise NotImplementedError

    def snapshot(self) -> list[CacheEntry]:
        return [e.copy() for e in self.entries()]

    def __len__(self) -> int:
        return len(self.entries())

    @staticmethod
    def _attend(q, entries) -> AttentionResult:
        return full_attention(q, [e.key for e in entries], [e.value for e in entries])


class FullCache(_Policy):
    """Keeps every token; the ground-truth reference."""

    capacity = None

    def __init__(self, head_dim: int):
        super().__init__(head_dim)
        self._entries: list[CacheEntry] = []

    def entries(self):
        return list(self._entries)

    def step(self, q, k, v) -> AttentionResult:
        q, entry = self._admit(q, k, v)
        self._entries.append(entry)
        return self._attend(q, self._entries)


class WindowCache(_Policy):
    def __init__(self, head_dim: int, window: int):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        super().__init__(head_dim)
        self.capacity = window
        self._window: deque[CacheEntry] = deque(maxlen=window)

    def entries(self):
        return list(self._window)

    def step(self, q, k, v) -> AttentionResult:
        q, entry = self._admit(q, k, v)
        self._window.append(entry)
        return self._attend(q, self._window)


class SinkWindowCache(_Policy):
    """First ``sink`` tokens forever, plus the newest ``window`` tokens."""

    def __init__(self, head_dim: int, sink: int, window: int):
        if sink < 0:
            raise ValueError(f"sink must be >= 0, got {sink}")
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        super().__init__(head_dim)
        self.sink = sink
        self.capacity = sink + window
        self._sinks: list[CacheEntry] = []
        self._window: deque[CacheEntry] = deque(maxlen=window)

    def entries(self):
        return [*self._sinks, *self._window]

    def step(self, q, k, v) -> AttentionResult:
        q, entry = self._admit(q, k, v)
        if len(self._sinks) < self.sink:
            self._sinks.append(entry)
        else:
            self._window.append(entry)
        return self._attend(q, self.entries())


class HeavyHitterCache(_Policy):
    """Newest ``window`` tokens plus the ``budget`` highest-scoring older ones.

    Scores follow ``s <- decay * s + a``; ``decay=1`` is plain cumulative
    attention. The lowest score is evicted first, ties to the oldest token.
    """

    def __init__(self, head_dim: int, budget: int, window: int, decay: float = 1.0):
        if budget < 0:
            raise ValueError(f"heavy-hitter budget must be >= 0, got {budget}")
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {decay}")
        super().__init__(head_dim)
        self.budget = budget
        self.window = window
        self.decay = decay
        self.capacity = budget + window
        self._heavy: list[CacheEntry] = []
        self._recent: deque[CacheEntry] = deque()
        self._scores: dict[int, float] = {}

    def entries(self):
        return [*self._heavy, *self._recent]

    def snapshot(self):
        out = []
        for e in self.entries():
            c = e.copy()
            c.score = self._scores[e.uid]
            out.append(c)
        return out

    def step(self, q, k, v) -> AttentionResult:
        q, entry = self._admit(q, k, v)
        self._recent.append(entry)
        self._scores[entry.uid] = 0.0
        live = self.entries()
        result = self._attend(q, live)
        lam = self.decay
        for e, a in zip(live, result.weights.tolist()):
            self._scores[e.uid] = lam * self._scores[e.uid] + a

        if len(self._recent) > self.window:
            self._heavy.append(self._recent.popleft())
            if len(self._heavy) > self.budget:
                victim = min(self._heavy, key=lambda e: (self._scores[e.uid], e.uid))
                self._heavy.remove(victim)
                del self._scores[victim.uid]
        return result


@dataclass(frozen=True)
class PolicyKind:
    """Policy name plus its capacities. Unused parameters stay ``None``.

    ``window`` is the recent window for window, sink-window and heavy-hitter;
    ``hh_budget`` is the heavy-hitter slot count. ZeroMerge takes its budgets
    from the run configuration.
    """

    tag: str
    window: int | None = None
    sink: int | None = None
    hh_budget: int | None = None

    def __post_init__(self):
        if self.tag not in POLICY_TAGS:
            raise ValueError(f"unknown policy {self.tag!r}; expected one of {', '.join(POLICY_TAGS)}")
        for name in ("window", "sink", "hh_budget"):
            val = getattr(self, name)
            if val is None:
                continue
            floor = 0 if name in ("sink", "hh_budget") else 1
            if val < floor:
                raise ValueError(f"{name} must be >= {floor}, got {val}")

    @classmethod
    def equal_budget(cls, tag: str, config: RunConfig, sink: int = 4) -> PolicyKind:
        """Parameters giving ``tag`` the same total slot count as the ZeroMerge budgets."""
        b = config.budgets
        total = b.total()
        if tag == "window":
            return cls(tag, window=total)
        if tag == "sink-window":
            s = min(sink, total - 1)
            return cls(tag, window=total - s, sink=s)
        if tag == "heavy-hitter":
            return cls(tag, window=b.proximity, hh_budget=b.context + b.residual)
        return cls(tag)


def make_policy(kind: PolicyKind, config: RunConfig):
    d = config.head_dim
    if kind.tag == "full":
        return FullCache(d)
    if kind.tag == "zeromerge":
        return ZeroMergeCache(config)
    base = PolicyKind.equal_budget(kind.tag, config)
    window = kind.window if kind.window is not None else base.window
    if kind.tag == "window":
        return WindowCache(d, window)
    if kind.tag == "sink-window":
        return SinkWindowCache(d, kind.sink if kind.sink is not None else base.sink, window)
    hh = kind.hh_budget if kind.hh_budget is not None else base.hh_budget
    return HeavyHitterCache(d, hh, window, config.decay)
