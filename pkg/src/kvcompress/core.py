"""Shared value types: vectors, cache entries, budgets and run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return arr


@dataclass(eq=False)
class CacheEntry:
    """One cached key/value slot.

    ``uid`` is the insertion counter used for score bookkeeping and tie-breaks;
    ``origin_pos`` is the 1-based position of the first token stored in the slot.
    """

    key: np.ndarray
    value: np.ndarray
    fusion_count: int = 1
    score: float = 0.0
    origin_pos: int = 0
    uid: int = 0

    def copy(self) -> CacheEntry:
        return CacheEntry(
            self.key.copy(),
            self.value.copy(),
            self.fusion_count,
            self.score,
            self.origin_pos,
            self.uid,
        )


class BudgetError(ValueError):
    """Invalid budget; ``field`` names the offending part."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class Budgets:
    context: int
    residual: int
    proximity: int

    def __post_init__(self):
        for name in ("context", "residual", "proximity"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                raise BudgetError(name, f"{name} budget must be an integer, got {val!r}")
            if val < 0:
                raise BudgetError(name, f"{name} budget must be non-negative, got {val}")
        if self.proximity < 1:
            raise BudgetError("proximity", "proximity budget must be >= 1")

    def total(self) -> int:
        return self.context + self.residual + self.proximity


def make_budgets(context: int, residual: int, proximity: int) -> Budgets:
    return Budgets(context, residual, proximity)


# Default split used when only a total budget is given: proximity : context : residual = 3 : 4 : 2.
DEFAULT_SPLIT = (3, 4, 2)


def split_budget(total: int, ratio: tuple[int, int, int] = DEFAULT_SPLIT) -> Budgets:
    """Split ``total`` slots into proximity/context/residual by ``ratio``.

    Context and residual are floored; proximity takes the remainder so the
    parts always sum to ``total``.
    """
    if total < 1:
        raise BudgetError("proximity", f"total budget must be >= 1, got {total}")
    rp, rc, rr = ratio
    denom = rp + rc + rr
    context = total * rc // denom
    residual = total * rr // denom
    return Budgets(context, residual, total - context - residual)


def budget_from_fraction(frac: float, length: int, ratio: tuple[int, int, int] = DEFAULT_SPLIT) -> Budgets:
    """Budget covering ``frac`` of a ``length``-token trace, rounded half-up, at least 1."""
    if not 0.0 < frac <= 1.0:
        raise BudgetError("proximity", f"budget fraction must be in (0, 1], got {frac}")
    total = max(1, int(np.floor(frac * length + 0.5)))
    return split_budget(total, ratio)


@dataclass(frozen=True)
class RunConfig:
    head_dim: int
    budgets: Budgets = field(default_factory=lambda: Budgets(4, 2, 3))
    decay: float = 0.98
    compensation: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.head_dim < 1:
            raise ValueError(f"head_dim must be positive, got {self.head_dim}")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {self.decay}")
        if not 0.0 < self.compensation <= 1.0:
            raise ValueError(f"compensation must lie in (0, 1], got {self.compensation}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
