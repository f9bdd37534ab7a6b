"""Run configuration, the solve pipeline and the CSV/JSON artifacts."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import EngineConfig, RunTrace, run
from .instances import LoadedInstance, resolve_instance
from .problem import EXAMPLE1_LAMBDA_STAR
from .repair import RepairBudget, RepairReport, best_gap_repair, repair_cover
from .stepsize import make_policy

TRACE_COLUMNS = (
    "k", "stepsize", "L", "dual_value_if_exact", "grad_norm", "level_in_force", "detector_fired",
    "lambda_distance_to_reference_if_known",
)
SCHEMA_PATH = Path(__file__).resolve().parent / "schemas" / "summary.schema.json"

POLICY_PARAMS = ("gamma", "zeta", "M", "r", "delta0", "R", "beta", "tau", "q_star")


@dataclass
class RunConfig:
    instance: str = "example1"
    policy: str = "slblr"
    gamma: float | None = None
    zeta: float | None = None
    M: float | None = None
    r: float | None = None
    delta0: float | None = None
    R: float | None = None
    beta: float | None = None
    tau: float | None = None
    q_star: float | None = None
    s0: float = 0.5
    lambda0: float = 0.0
    lambda0_uniform: tuple[float, float] | None = None
    max_iters: int = 1000
    mode: str = "interleaved"
    fallback: str = "continue"
    detector: str | None = "linear"
    nu: float = 2.0
    exact_every: int | None = None  # None: one full sweep (number of subproblems)
    time_limit: float | None = None
    seed: int = 0
    repeat: int = 1
    out: str = "out"
    polish: bool = True
    node_cap: int = 1_000_000

    def policy_kwargs(self) -> dict:
        return {k: getattr(self, k) for k in POLICY_PARAMS if getattr(self, k) is not None}

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        data = dict(data)
        if data.get("lambda0_uniform") is not None:
            data["lambda0_uniform"] = tuple(data["lambda0_uniform"])
        return cls(**data)


@dataclass
class RunResult:
    config: RunConfig
    instance: LoadedInstance
    trace: RunTrace
    report: RepairReport
    params: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.report.feasible


def engine_config(cfg: RunConfig, loaded: LoadedInstance) -> EngineConfig:
    policy = make_policy(cfg.policy, **cfg.policy_kwargs())
    every = loaded.problem.num_blocks if cfg.exact_every is None else cfg.exact_every
    ref = EXAMPLE1_LAMBDA_STAR if loaded.name == "example1" else None
    return EngineConfig(
        policy, s0=cfg.s0, lambda0=cfg.lambda0, lambda0_uniform=cfg.lambda0_uniform, seed=cfg.seed,
        max_iters=cfg.max_iters, mode=cfg.mode, fallback=cfg.fallback, detector=cfg.detector, nu=cfg.nu,
        exact_every=every, reference=ref, time_limit=cfg.time_limit)


def repair_run(loaded: LoadedInstance, trace: RunTrace, polish: bool = True,
               node_cap: int = 1_000_000) -> RepairReport:
    """Repair the final, certified and best-dual relaxed solutions; keep the cheapest."""
    if loaded.gap is not None:
        cands = [trace.certified_composite, trace.final_composite, *trace.exact_pool]
        rep = best_gap_repair(loaded.gap, cands, RepairBudget(node_cap=node_cap, local_search=polish))
    else:
        comp = trace.certified_composite or trace.final_composite
        rep = repair_cover(loaded.problem, comp)
    if rep.feasible and trace.best_dual is not None:
        rep.with_bound(trace.best_dual)  # raises BoundViolation if the bound exceeds the cost
    return rep


def execute(cfg: RunConfig, loaded: LoadedInstance | None = None) -> RunResult:
    loaded = loaded or resolve_instance(cfg.instance)
    ecfg = engine_config(cfg, loaded)
    trace = run(loaded.problem, ecfg)
    report = repair_run(loaded, trace, cfg.polish, cfg.node_cap)
    trace.repair = report
    return RunResult(cfg, loaded, trace, report, ecfg.policy.params())


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec in trace.records:
        w.writerow([_num(rec.k), _num(rec.stepsize), _num(rec.value), _num(rec.dual_value), _num(rec.g_norm),
                    _num(rec.level), _num(bool(rec.fired)), _num(rec.distance)])
    return buf.getvalue()


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


def summary(result: RunResult) -> dict:
    tr, cfg = result.trace, result.config
    fired = [e for e in tr.level_events if e.kind == "fired"]
    return {
        "instance": result.instance.name,
        "policy": cfg.policy,
        "params": result.params,
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "repeat")},
        "termination": tr.termination,
        "iterations": tr.iterations,
        "subproblem_solves": tr.solves,
        "best_dual": _finite(tr.best_dual),
        "best_dual_iteration": tr.best_dual_k,
        "certified_dual": _finite(tr.certified_dual),
        "detector_firings": len(fired),
        "level_refreshes": sum(1 for e in tr.level_events if e.kind == "refresh"),
        "final_level": fired[-1].level if fired else None,
        "exhausted_passes": tr.exhausted_passes,
        "wall_seconds": round(tr.wall_seconds, 6),
        "detector_seconds": round(tr.detector_seconds, 6),
        "repair": result.report.to_dict(),
    }


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def write_artifacts(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(trace_csv(result.trace))
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# --------------------------------------------------------------------------
# parallel runs and comparison tables
# --------------------------------------------------------------------------


@dataclass
class RunDigest:
    """What a worker process sends back: artifacts as text plus the dual/level series."""

    label: str
    csv: str
    summary: dict
    ok: bool
    ks: list[int] = field(default_factory=list)
    duals: list[float | None] = field(default_factory=list)
    levels: list[float | None] = field(default_factory=list)
    uses_level: bool = False
    certified: float | None = None


def digest(cfg: RunConfig, label: str = "") -> RunDigest:
    res = execute(cfg)
    tr = res.trace
    return RunDigest(
        label or cfg.policy, trace_csv(tr), summary(res), res.ok,
        ks=[r.k for r in tr.records], duals=[r.dual_value for r in tr.records],
        levels=[r.level for r in tr.records],
        uses_level=make_policy(cfg.policy, **cfg.policy_kwargs()).uses_level,
        certified=tr.certified_dual)


def run_many(configs: list[RunConfig], labels: list[str] | None = None, jobs: int = 1) -> list[RunDigest]:
    labels = labels or [c.policy for c in configs]
    if jobs <= 1 or len(configs) <= 1:
        return [digest(c, l) for c, l in zip(configs, labels)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(digest, configs, labels))


def unique_labels(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for n in names:
        seen[n] = seen.get(n, 0) + 1
        out.append(n if seen[n] == 1 else f"{n}#{seen[n]}")
    return out


def comparison_rows(digests: list[RunDigest], cadence: int) -> tuple[list[str], list[list]]:
    """Exact dual values on the common sweep grid k = 0, cadence, 2 cadence, ...

    At the last common iteration the certified dual is used when no exact
    value was recorded there.
    """
    last = min(d.ks[-1] for d in digests)
    header = ["k"]
    for d in digests:
        header.append(f"{d.label}_dual")
        if d.uses_level:
            header.append(f"{d.label}_level")
    ks = list(range(0, last + 1, max(1, cadence)))
    if ks[-1] != last:
        ks.append(last)
    rows = []
    for k in ks:
        row = [k]
        for d in digests:
            dual = d.duals[k]
            if dual is None and k == d.ks[-1]:
                dual = d.certified
            row.append(dual)
            if d.uses_level:
                row.append(d.levels[k])
        rows.append(row)
    return header, rows


def comparison_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()
