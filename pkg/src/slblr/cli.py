"""Command-line driver: ``slblr solve|compare|verify``.

Exit codes: 0 success, 1 usage or input error, 2 repair failure.
Settings come from CLI flags, then a JSON ``--config`` file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .bench import RunConfig, comparison_csv, comparison_rows, run_many, unique_labels
from .instances import InstanceError, resolve_instance
from .stepsize import POLICY_NAMES, PolicyError, make_policy
from .verify import SUITES, run_suite

EXIT_OK, EXIT_USAGE, EXIT_REPAIR = 0, 1, 2

# compare defaults: every policy starts from the same stepsize and multipliers
COMPARE_DEFAULTS = {"s0": 0.5, "lambda0": 101.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _detector(value: str):
    if value not in ("linear", "ball", "none"):
        raise argparse.ArgumentTypeError("detector must be linear, ball or none")
    return None if value == "none" else value


def _add_run_options(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("instance", help="example1, gap:<file>:<index>, typeD:<M>x<N>[:seed], d05100, ... or a file")
    p.add_argument("--config", help="JSON file with run settings")
    g = p.add_argument_group("policy parameters")
    g.add_argument("--gamma", type=float, default=S)
    g.add_argument("--zeta", type=float, default=S, help="SLBLR step damping in (0, 1]")
    g.add_argument("--M", dest="M", type=float, default=S, help="SLR contraction parameter")
    g.add_argument("--r", dest="r", type=float, default=S, help="SLR contraction exponent")
    g.add_argument("--delta0", type=float, default=S, help="subgradient-level initial delta")
    g.add_argument("--R", dest="R", type=float, default=S, help="subgradient-level path bound")
    g.add_argument("--beta", type=float, default=S)
    g.add_argument("--tau", type=float, default=S)
    g.add_argument("--q-star", dest="q_star", type=float, default=S, help="optimal dual value (Polyak policies)")
    e = p.add_argument_group("engine")
    e.add_argument("--s0", type=float, default=S)
    e.add_argument("--lambda0", type=float, default=S)
    e.add_argument("--lambda0-uniform", type=float, nargs=2, metavar=("LO", "HI"), default=S)
    e.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    e.add_argument("--mode", choices=("interleaved", "full", "incremental"), default=S)
    e.add_argument("--fallback", choices=("continue", "halve"), default=S)
    e.add_argument("--detector", type=_detector, default=S, help="linear, ball or none")
    e.add_argument("--nu", type=float, default=S)
    e.add_argument("--exact-every", dest="exact_every", type=int, default=S,
                   help="exact dual cadence in iterations (default: number of subproblems)")
    e.add_argument("--time-limit", dest="time_limit", type=float, default=S)
    e.add_argument("--seed", type=int, default=S)
    o = p.add_argument_group("output")
    o.add_argument("--out", default=S, help="output directory")
    o.add_argument("--repeat", type=int, default=S)
    o.add_argument("--no-polish", dest="polish", action="store_false", default=S,
                   help="skip the local-search polish after repair")
    o.add_argument("--node-cap", dest="node_cap", type=int, default=S)
    o.add_argument("--jobs", type=int, default=1, help="parallel runs (compare/repeat)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slblr", description="Level-based surrogate Lagrangian relaxation benchmarks")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    solve = sub.add_parser("solve", help="run one policy and repair the result")
    _add_run_options(solve)
    solve.add_argument("--policy", default=argparse.SUPPRESS, help=f"one of {', '.join(POLICY_NAMES)}")
    compare = sub.add_parser("compare", help="run several policies from the same start")
    _add_run_options(compare)
    compare.add_argument("--policy", dest="policies", action="append", default=[],
                         help="policy to include (repeat the flag); at least two")
    verify = sub.add_parser("verify", help="run a property suite")
    verify.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    return parser


def resolve_config(args: argparse.Namespace, base: dict | None = None) -> RunConfig:
    """defaults < ``base`` < config file < flags."""
    merged = asdict(RunConfig())
    merged.update(base or {})
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        merged.update(data)
    names = {f.name for f in fields(RunConfig)}
    merged.update({k: v for k, v in vars(args).items() if k in names})
    try:
        cfg = RunConfig.from_mapping(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if cfg.repeat < 1:
        raise UsageError("--repeat must be at least 1")
    if cfg.max_iters < 0:
        raise UsageError("--max-iters must be nonnegative")
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        make_policy(cfg.policy, **cfg.policy_kwargs())
        resolve_instance(cfg.instance)
    except (PolicyError, InstanceError) as exc:
        raise UsageError(str(exc)) from None


def _write_digest(d, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(d.csv)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(d.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _report(d, stream) -> None:
    s = d.summary
    rep = s["repair"]
    lb = "n/a" if s["best_dual"] is None else f"{s['best_dual']:.6g}"
    if rep["feasible"]:
        gap = "n/a" if rep["gap_percent"] is None else f"{rep['gap_percent']:.4f}%"
        print(f"{d.label}: {s['iterations']} iterations ({s['termination']}), LB {lb}, "
              f"UB {rep['cost']:.6g}, gap {gap}", file=stream)
    else:
        print(f"{d.label}: {s['iterations']} iterations ({s['termination']}), LB {lb}, repair failed",
              file=stream)


def cmd_solve(args) -> int:
    cfg = resolve_config(args)
    _validate(cfg)
    out = Path(cfg.out)
    configs = [RunConfig.from_mapping({**asdict(cfg), "seed": cfg.seed + r}) for r in range(cfg.repeat)]
    digests = run_many(configs, [cfg.policy] * len(configs), jobs=args.jobs)
    for r, d in enumerate(digests):
        _write_digest(d, out if cfg.repeat == 1 else out / f"run{r:03d}")
        _report(d, sys.stdout)
    return EXIT_OK if all(d.ok for d in digests) else EXIT_REPAIR


def cmd_compare(args) -> int:
    if len(args.policies) < 2:
        raise UsageError("compare needs at least two --policy flags")
    cfg = resolve_config(args, COMPARE_DEFAULTS)
    configs = [RunConfig.from_mapping({**asdict(cfg), "policy": p}) for p in args.policies]
    for c in configs:
        _validate(c)
    labels = unique_labels(args.policies)
    digests = run_many(configs, labels, jobs=args.jobs)
    cadence = cfg.exact_every or resolve_instance(cfg.instance).problem.num_blocks
    header, rows = comparison_rows(digests, cadence)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(comparison_csv(header, rows))
    for d in digests:
        _write_digest(d, out / d.label.replace("#", "_"))
        _report(d, sys.stdout)
    last = rows[-1]
    finals = ", ".join(f"{h[:-5]} {v:.6g}" for h, v in zip(header[1:], last[1:]) if h.endswith("_dual") and v is not None)
    print(f"final common iteration {last[0]}: {finals}")
    return EXIT_OK if all(d.ok for d in digests) else EXIT_REPAIR


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; available: {', '.join(SUITES)}")
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_verify(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
