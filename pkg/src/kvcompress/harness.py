"""Run cache policies against the full-cache reference and report fidelity."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .attention import stable_softmax
from .baselines import FullCache, PolicyKind, make_policy
from .core import Budgets, RunConfig
from .workload import Trace, gen_gaussian, gen_heavy_hitter
from .zeromerge import ZeroMergeCache

MASS_BOUND_TOL = 1e-9
CSV_HEADER = "step,cache_entries,l2_rel_error,cosine_sim,uncompressed_mass"


class AttentionError(NamedTuple):
    l2_rel: float
    cosine: float
    zero_reference: bool = False


def attention_error(reference, approx) -> AttentionError:
    """Relative L2 error and cosine similarity of ``approx`` against ``reference``.

    A zero-norm reference has no relative error: ``l2_rel`` is NaN and
    ``zero_reference`` is set.
    """
    ref = np.asarray(reference, dtype=np.float64)
    app = np.asarray(approx, dtype=np.float64)
    if ref.shape != app.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {app.shape}")
    nr = float(np.linalg.norm(ref))
    na = float(np.linalg.norm(app))
    cos = float(np.clip(ref @ app / (nr * na), -1.0, 1.0)) if nr > 0 and na > 0 else math.nan
    if nr == 0.0:
        return AttentionError(math.nan, cos, True)
    return AttentionError(float(np.linalg.norm(app - ref)) / nr, cos)


@dataclass
class StepMetrics:
    step: int
    cache_entries: int
    l2_rel_error: float
    cosine_sim: float
    uncompressed_mass: float


@dataclass
class MetricsReport:
    policy: str
    capacity: int | None
    per_step: list[StepMetrics] = field(default_factory=list)
    wall_time: float = 0.0
    max_weight_sum_error: float = 0.0
    zero_reference_steps: int = 0

    def _finite(self, attr: str) -> list[float]:
        return [getattr(m, attr) for m in self.per_step if not math.isnan(getattr(m, attr))]

    @property
    def mean_l2_rel_error(self) -> float:
        xs = self._finite("l2_rel_error")
        return math.fsum(xs) / len(xs) if xs else math.nan

    @property
    def max_l2_rel_error(self) -> float:
        xs = self._finite("l2_rel_error")
        return max(xs) if xs else math.nan

    @property
    def mean_cosine_sim(self) -> float:
        xs = self._finite("cosine_sim")
        return math.fsum(xs) / len(xs) if xs else math.nan

    @property
    def peak_cache_entries(self) -> int:
        return max((m.cache_entries for m in self.per_step), default=0)

    @property
    def wall_time_per_step(self) -> float:
        return self.wall_time / len(self.per_step) if self.per_step else 0.0

    def summary(self) -> dict[str, object]:
        """Deterministic summary fields (wall time excluded)."""
        return {
            "policy": self.policy,
            "capacity": "unbounded" if self.capacity is None else self.capacity,
            "steps": len(self.per_step),
            "mean_l2_rel_error": self.mean_l2_rel_error,
            "max_l2_rel_error": self.max_l2_rel_error,
            "mean_cosine_sim": self.mean_cosine_sim,
            "peak_cache_entries": self.peak_cache_entries,
            "max_weight_sum_error": self.max_weight_sum_error,
            "zero_reference_steps": self.zero_reference_steps,
        }


def _attended_fusion_counts(policy, n: int) -> np.ndarray:
    attended = getattr(policy, "last_attended", None)
    if attended is None:
        return np.ones(n)
    return np.array([e.fusion_count for e in attended], dtype=np.float64)


def run_policy(trace: Trace, policy: PolicyKind, config: RunConfig) -> MetricsReport:
    if trace.head_dim != config.head_dim:
        raise ValueError(f"trace head_dim {trace.head_dim} does not match config head_dim {config.head_dim}")
    cache = make_policy(policy, config)
    reference = FullCache(config.head_dim)
    report = MetricsReport(policy.tag, getattr(cache, "capacity", None))
    elapsed = 0.0
    for i, (q, k, v) in enumerate(trace, start=1):
        ref = reference.step(q, k, v)
        t0 = time.perf_counter()
        res = cache.step(q, k, v)
        elapsed += time.perf_counter() - t0

        report.max_weight_sum_error = max(report.max_weight_sum_error, abs(math.fsum(res.weights) - 1.0))
        err = attention_error(ref.output, res.output)
        report.zero_reference_steps += err.zero_reference
        w = _attended_fusion_counts(cache, len(res.weights))
        mass = float(res.weights[w == 1].sum())
        report.per_step.append(StepMetrics(i, len(cache), err.l2_rel, err.cosine, mass))
    report.wall_time = elapsed
    return report


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _trailer(report: MetricsReport) -> list[str]:
    return [f"# {k}={_fmt(v)}" for k, v in report.summary().items()]


def _rows(report: MetricsReport, prefix: str = "") -> list[str]:
    return [
        f"{prefix}{m.step},{m.cache_entries},{_fmt(m.l2_rel_error)},{_fmt(m.cosine_sim)},{_fmt(m.uncompressed_mass)}"
        for m in report.per_step
    ]


def format_report_csv(report: MetricsReport) -> str:
    lines = [CSV_HEADER, *_rows(report), "# summary:", *_trailer(report)]
    return "\n".join(lines) + "\n"


def write_report_csv(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report_csv(report))


def fidelity_assertion(reports: Sequence[MetricsReport]) -> bool | None:
    """ZeroMerge mean error <= window-only mean error; ``None`` when either is absent."""
    by_tag = {r.policy: r for r in reports}
    if "zeromerge" not in by_tag or "window" not in by_tag:
        return None
    return by_tag["zeromerge"].mean_l2_rel_error <= by_tag["window"].mean_l2_rel_error


def format_compare_csv(reports: Sequence[MetricsReport]) -> str:
    lines = ["policy," + CSV_HEADER]
    for r in reports:
        lines += _rows(r, prefix=f"{r.policy},")
    lines.append("# summary:")
    for r in reports:
        lines += _trailer(r)
    verdict = fidelity_assertion(reports)
    if verdict is not None:
        lines.append(f"# assert zeromerge_mean_l2 <= window_mean_l2: {'PASS' if verdict else 'FAIL'}")
    return "\n".join(lines) + "\n"


def write_compare_csv(reports: Sequence[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_compare_csv(reports))


class MassBoundReport(NamedTuple):
    trials: int
    checks: int
    violations: int
    worst_margin: float
    max_weight_sum_error: float


def verify_mass_bound(trace: Trace, config: RunConfig, tol: float = MASS_BOUND_TOL) -> MassBoundReport:
    """Check that no uncompressed entry loses weight relative to full attention.

    At every step each cached entry with fusion count 1 must get a
    compensated weight no smaller than the weight exact attention over the
    whole history gives the same token, up to ``tol``.
    """
    if trace.head_dim != config.head_dim:
        raise ValueError(f"trace head_dim {trace.head_dim} does not match config head_dim {config.head_dim}")
    cache = ZeroMergeCache(config)
    scale = math.sqrt(config.head_dim)
    checks = violations = 0
    worst = math.inf
    sum_err = 0.0
    for t, (q, k, v) in enumerate(trace, start=1):
        res = cache.step(q, k, v)
        sum_err = max(sum_err, abs(math.fsum(res.weights) - 1.0))
        exact = stable_softmax(trace.k[:t] @ q / scale)
        idx = [(i, e.origin_pos - 1) for i, e in enumerate(cache.last_attended) if e.fusion_count == 1]
        if not idx:
            continue
        mine, theirs = np.array(idx).T
        margins = res.weights[mine] - exact[theirs]
        checks += len(margins)
        violations += int(np.count_nonzero(margins < -tol))
        worst = min(worst, float(margins.min()))
    return MassBoundReport(1, checks, violations, worst, sum_err)


GRID_DIMS = (4, 16, 64)
GRID_LENGTHS = (32, 128, 256)
GRID_ALPHAS = (0.1, 0.5, 1.0)


def random_trial(rng: np.random.Generator) -> tuple[Trace, RunConfig]:
    """One randomized (trace, budget, alpha) trial for the verification campaign.

    Total budget is 5-50% of the trace length, split at random with at least
    one proximity slot.
    """
    d = int(rng.choice(GRID_DIMS))
    T = int(rng.choice(GRID_LENGTHS))
    alpha = float(rng.choice(GRID_ALPHAS))
    decay = 0.98 if rng.random() < 0.5 else float(rng.random())
    total = max(1, int(round(rng.uniform(0.05, 0.5) * T)))
    proximity = int(rng.integers(1, total + 1))
    context = int(rng.integers(0, total - proximity + 1))
    budgets = Budgets(context, total - proximity - context, proximity)
    seed = int(rng.integers(0, 2**63))
    if rng.random() < 0.5:
        trace = gen_gaussian(T, d, seed)
    else:
        n_hot = int(rng.integers(1, max(2, T // 16) + 1))
        trace = gen_heavy_hitter(T, d, n_hot, float(rng.uniform(0.5, 4.0)), seed)
    return trace, RunConfig(d, budgets, decay, alpha, seed)


def mass_bound_campaign(n_trials: int, seed: int) -> MassBoundReport:
    rng = np.random.Generator(np.random.PCG64(seed))
    checks = violations = 0
    worst = math.inf
    sum_err = 0.0
    for _ in range(n_trials):
        trace, config = random_trial(rng)
        r = verify_mass_bound(trace, config)
        checks += r.checks
        violations += r.violations
        worst = min(worst, r.worst_margin)
        sum_err = max(sum_err, r.max_weight_sum_error)
    return MassBoundReport(n_trials, checks, violations, worst, sum_err)
