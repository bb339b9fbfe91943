"""Command-line entry point: ``kvcompress {trace-gen,bench,compare,verify}``.

Exit codes: 0 success, 1 usage error, 2 runtime or verification failure.
An optional ``--config`` file holds ``key=value`` lines using flag names
without the leading dashes (``bc=4``, ``decay=0.9``); flags override it.
"""

from __future__ import annotations

import argparse
import sys

from .baselines import POLICY_TAGS, PolicyKind
from .core import Budgets, BudgetError, RunConfig, budget_from_fraction
from .harness import (
    fidelity_assertion,
    format_compare_csv,
    format_report_csv,
    run_policy,
    mass_bound_campaign,
    verify_mass_bound,
    write_report_csv,
)
from .workload import TraceFormatError, gen_gaussian, gen_heavy_hitter, read_trace, write_trace

DEFAULT_DECAY = 0.98
DEFAULT_ALPHA = 0.6
BUDGET_FLAGS = {"context": "--bc", "residual": "--br", "proximity": "--bp"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _budget_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bc", type=int, help="context budget (top-scored tokens)")
    p.add_argument("--br", type=int, help="residual budget (merged slots)")
    p.add_argument("--bp", type=int, help="proximity budget (newest tokens)")
    p.add_argument("--budget-frac", type=float, help="total budget as a fraction of trace length, split 3:4:2 (bp:bc:br)")
    p.add_argument("--window", type=int, help="recent window for window/sink-window/heavy-hitter")
    p.add_argument("--sink", type=int, help="sink size for sink-window")
    p.add_argument("--hh-budget", type=int, help="heavy-hitter slot count")
    p.add_argument("--decay", type=float, default=DEFAULT_DECAY, help="score decay (default 0.98)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="fusion-count compensation (default 0.6)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kvcompress", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file; command-line flags take precedence")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("trace-gen", help="write a synthetic KVTR trace")
    gen.add_argument("--kind", choices=("gaussian", "heavy-hitter"), default="gaussian")
    gen.add_argument("--steps", type=int, default=256)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--n-hot", type=int, default=4)
    gen.add_argument("--gain", type=float, default=3.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    bench = sub.add_parser("bench", help="run one policy over a trace, write CSV")
    bench.add_argument("--trace", required=True)
    bench.add_argument("--policy", choices=POLICY_TAGS, default="zeromerge")
    bench.add_argument("--out", help="CSV path (stdout if omitted)")
    bench.add_argument("--timing", action="store_true", help="print wall time per step")
    _budget_flags(bench)

    cmp_ = sub.add_parser("compare", help="run several policies over one trace")
    cmp_.add_argument("--trace", required=True)
    cmp_.add_argument("--policies", default="full,window,sink-window,heavy-hitter,zeromerge")
    cmp_.add_argument("--out", help="merged CSV path (stdout if omitted)")
    cmp_.add_argument("--timing", action="store_true")
    _budget_flags(cmp_)

    ver = sub.add_parser("verify", help="randomized check that uncompressed tokens never lose attention weight")
    ver.add_argument("--trials", type=int, default=1000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--trace", help="check this trace only, using the budget flags")
    _budget_flags(ver)
    return parser


def _read_config(path: str) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    values = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config: line {n} is not key=value: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    return values


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if a in COMMANDS), None)
    if known.config and command is not None:
        _apply_config(parser, command, _read_config(known.config))
    return parser.parse_args(argv)


def _apply_config(parser: argparse.ArgumentParser, command: str, values: dict[str, str]) -> None:
    """Install file values as subcommand defaults so explicit flags still win."""
    sub = parser._subparsers._group_actions[0].choices[command]
    known = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        action = known.get(dest)
        if action is None or dest == "help":
            raise UsageError(f"--config: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = action.type(raw) if action.type else raw
        except ValueError:
            raise UsageError(f"--config: bad value for {key!r}: {raw!r}") from None
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"--config: {key!r} must be one of {', '.join(map(str, action.choices))}")
        defaults[dest] = val
    sub.set_defaults(**defaults)
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False


def _budgets(args, length: int | None) -> Budgets:
    if args.budget_frac is not None:
        if length is None:
            raise UsageError("--budget-frac needs a trace")
        try:
            base = budget_from_fraction(args.budget_frac, length)
        except BudgetError as exc:
            raise UsageError(f"--budget-frac: {exc}") from None
    else:
        base = Budgets(4, 2, 3)
    parts = {
        "context": base.context if args.bc is None else args.bc,
        "residual": base.residual if args.br is None else args.br,
        "proximity": base.proximity if args.bp is None else args.bp,
    }
    try:
        return Budgets(**parts)
    except BudgetError as exc:
        raise UsageError(f"{BUDGET_FLAGS[exc.field]}: {exc}") from None


def _config(args, head_dim: int, length: int | None, seed: int = 0) -> RunConfig:
    budgets = _budgets(args, length)
    if not 0.0 <= args.decay <= 1.0:
        raise UsageError(f"--decay must lie in [0, 1], got {args.decay}")
    if not 0.0 < args.alpha <= 1.0:
        raise UsageError(f"--alpha must lie in (0, 1], got {args.alpha}")
    return RunConfig(head_dim, budgets, args.decay, args.alpha, seed)


def _policy(tag: str, args, config: RunConfig) -> PolicyKind:
    for flag, val, floor in (("--window", args.window, 1), ("--sink", args.sink, 0), ("--hh-budget", args.hh_budget, 0)):
        if val is not None and val < floor:
            raise UsageError(f"{flag} must be >= {floor}, got {val}")
    base = PolicyKind.equal_budget(tag, config)
    return PolicyKind(
        tag,
        window=args.window if args.window is not None else base.window,
        sink=args.sink if args.sink is not None else base.sink,
        hh_budget=args.hh_budget if args.hh_budget is not None else base.hh_budget,
    )


def _load(path: str):
    try:
        return read_trace(path)
    except OSError as exc:
        raise UsageError(f"--trace: cannot read {path}: {exc.strerror}") from None


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _cmd_trace_gen(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must fit in 64 unsigned bits")
    if args.kind == "gaussian":
        trace = gen_gaussian(args.steps, args.dim, args.seed)
    else:
        if not 0 <= args.n_hot <= args.steps:
            raise UsageError(f"--n-hot must lie in [0, {args.steps}]")
        if args.gain < 0:
            raise UsageError("--gain must be >= 0")
        trace = gen_heavy_hitter(args.steps, args.dim, args.n_hot, args.gain, args.seed)
    write_trace(trace, args.out)
    print(f"wrote {len(trace)} steps (d={trace.head_dim}, kind={trace.kind}) to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    trace = _load(args.trace)
    config = _config(args, trace.head_dim, len(trace), trace.seed)
    report = run_policy(trace, _policy(args.policy, args, config), config)
    if args.out is None:
        sys.stdout.write(format_report_csv(report))
    else:
        write_report_csv(report, args.out)
        print(f"{report.policy}: mean_l2_rel_error={report.mean_l2_rel_error!r} peak_cache_entries={report.peak_cache_entries}")
    if args.timing:
        print(f"wall_time_per_step={report.wall_time_per_step:.3e}s", file=sys.stderr)
    return 0


def _cmd_compare(args) -> int:
    tags = [t.strip() for t in args.policies.split(",") if t.strip()]
    for t in tags:
        if t not in POLICY_TAGS:
            raise UsageError(f"--policies: unknown policy {t!r}")
    if not tags:
        raise UsageError("--policies: empty list")
    trace = _load(args.trace)
    config = _config(args, trace.head_dim, len(trace), trace.seed)
    reports = [run_policy(trace, _policy(t, args, config), config) for t in tags]
    _emit(format_compare_csv(reports), args.out)
    out = sys.stdout if args.out else sys.stderr
    print(f"{'policy':<14}{'capacity':>10}{'mean_l2':>14}{'max_l2':>14}{'mean_cos':>12}{'peak':>7}", file=out)
    for r in reports:
        cap = "-" if r.capacity is None else r.capacity
        print(f"{r.policy:<14}{cap:>10}{r.mean_l2_rel_error:>14.6g}{r.max_l2_rel_error:>14.6g}"
              f"{r.mean_cosine_sim:>12.6f}{r.peak_cache_entries:>7}", file=out)
        if args.timing:
            print(f"  wall_time_per_step={r.wall_time_per_step:.3e}s", file=sys.stderr)
    verdict = fidelity_assertion(reports)
    if verdict is not None:
        print(f"zeromerge_mean_l2 <= window_mean_l2: {'PASS' if verdict else 'FAIL'}", file=out)
    return 0


def _cmd_verify(args) -> int:
    if args.trace is not None:
        trace = _load(args.trace)
        r = verify_mass_bound(trace, _config(args, trace.head_dim, len(trace), trace.seed))
    else:
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must fit in 64 unsigned bits")
        r = mass_bound_campaign(args.trials, args.seed)
    print(f"trials: {r.trials}")
    print(f"checks: {r.checks}")
    print(f"violations: {r.violations}")
    print(f"worst_margin: {r.worst_margin!r}")
    return 0 if r.violations == 0 else 2


COMMANDS = {
    "trace-gen": _cmd_trace_gen,
    "bench": _cmd_bench,
    "compare": _cmd_compare,
    "verify": _cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kvcompress: error: {exc}", file=sys.stderr)
        return 1
    except (TraceFormatError, ValueError) as exc:
        print(f"kvcompress: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
