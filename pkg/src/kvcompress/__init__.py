"""Streaming KV-cache compression with residual merging and compensated attention."""

from .attention import AttentionResult, compensated_attention, full_attention, stable_softmax
from .baselines import (
    FullCache,
    HeavyHitterCache,
    PolicyKind,
    SinkWindowCache,
    WindowCache,
    make_policy,
)
from .core import Budgets, BudgetError, CacheEntry, RunConfig, make_budgets
from .scoring import ScoreTracker, closed_form_score
from .zeromerge import MultiHeadZeroMerge, ZeroMergeCache, merge_into_slot, select_merge_slot

__all__ = [
    "AttentionResult",
    "BudgetError",
    "Budgets",
    "CacheEntry",
    "FullCache",
    "HeavyHitterCache",
    "MultiHeadZeroMerge",
    "PolicyKind",
    "RunConfig",
    "ScoreTracker",
    "SinkWindowCache",
    "WindowCache",
    "ZeroMergeCache",
    "closed_form_score",
    "compensated_attention",
    "full_attention",
    "make_budgets",
    "make_policy",
    "merge_into_slot",
    "select_merge_slot",
    "stable_softmax",
]
