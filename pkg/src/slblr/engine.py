"""Coordination loop: subproblem scheduling, surrogate condition, multiplier updates."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import LevelDetector, WindowStep
from .problem import CompositeSolution, SeparableProblem, constraint_violation, evaluate_lagrangian
from .solvers import DEFAULT_DP_LIMIT, solve_block
from .stepsize import LevelRefreshRequired, PolicyError, StepContext, StepsizePolicy

MODES = ("interleaved", "full", "incremental")
FALLBACKS = ("continue", "halve")


class EngineError(RuntimeError):
    pass


@dataclass
class EngineConfig:
    policy: StepsizePolicy
    s0: float = 0.5
    lambda0: float | Sequence[float] = 0.0
    lambda0_uniform: tuple[float, float] | None = None
    seed: int = 0
    max_iters: int = 1000
    step_floor: float = 1e-10
    mode: str = "interleaved"
    fallback: str = "continue"
    stop_when_unattainable: bool = False
    detector: str | None = "linear"
    nu: float = 2.0
    level_form: str = "inversion"
    exact_every: int = 0
    certify: bool = True
    targets: np.ndarray | None = None
    reference: np.ndarray | None = None
    keep_vectors: bool = True
    time_limit: float | None = None
    dp_limit: int = DEFAULT_DP_LIMIT

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("initial stepsize must be positive")
        if self.lambda0_uniform is not None and self.lambda0_uniform[0] > self.lambda0_uniform[1]:
            raise ValueError("uniform initializer needs lo <= hi")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        if self.detector not in (None, "linear", "ball"):
            raise ValueError("detector must be None, 'linear' or 'ball'")


@dataclass
class IterateRecord:
    k: int
    multipliers: np.ndarray | None
    subgradient: np.ndarray | None
    value: float
    g_norm: float
    solved: tuple[int, ...]
    exact: bool = False
    dual_value: float | None = None
    stepsize: float | None = None
    level: float | None = None
    fired: bool = False
    distance: float | None = None
    wall: float = 0.0


@dataclass
class LevelEvent:
    j: int
    k: int
    level: float
    kind: str  # "fired" or "refresh"
    window_length: int
    margin: float = 0.0


@dataclass
class RunTrace:
    problem: str
    policy: str
    records: list[IterateRecord] = field(default_factory=list)
    level_events: list[LevelEvent] = field(default_factory=list)
    termination: str = ""
    best_dual: float | None = None
    best_dual_k: int | None = None
    best_surrogate: float = -math.inf
    certified_dual: float | None = None
    final_multipliers: np.ndarray | None = None
    final_composite: CompositeSolution | None = None
    certified_composite: CompositeSolution | None = None
    exact_pool: list[CompositeSolution] = field(default_factory=list)  # best dual first
    pool_duals: list[float] = field(default_factory=list)
    solves: int = 0
    exhausted_passes: int = 0
    detector_seconds: float = 0.0
    wall_seconds: float = 0.0
    repair: object = None

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def note_exact(self, k: int, value: float) -> None:
        if self.best_dual is None or value > self.best_dual:
            self.best_dual, self.best_dual_k = value, k


def initial_multipliers(problem: SeparableProblem, config: EngineConfig) -> np.ndarray:
    m = problem.num_rows
    if config.lambda0_uniform is not None:
        lo, hi = config.lambda0_uniform
        lam = np.random.default_rng(config.seed).uniform(lo, hi, size=m)
    else:
        lam = np.broadcast_to(np.asarray(config.lambda0, dtype=float), (m,)).copy()
    return np.where(problem.equality_mask, lam, np.maximum(lam, 0.0))


def update_multipliers(lam, s: float, g, equality) -> np.ndarray:
    """lambda + s g, with inequality components projected onto lambda >= 0."""
    lam = np.asarray(lam, dtype=float)
    g = np.asarray(g, dtype=float)
    if not s > 0:
        raise ValueError("stepsize must be positive")
    if not (np.isfinite(lam).all() and np.isfinite(g).all() and math.isfinite(s)):
        raise ValueError("non-finite multiplier update input")
    new = lam + s * g
    return np.where(equality, new, np.maximum(new, 0.0))


def make_targets(rhs, num_blocks: int, targets=None) -> np.ndarray:
    """Per-subproblem shares beta_i of the right-hand side (default b / I)."""
    rhs = np.asarray(rhs, dtype=float)
    if targets is None:
        return np.tile(rhs / num_blocks, (num_blocks, 1))
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (num_blocks, len(rhs)):
        raise ValueError(f"targets must have shape {(num_blocks, len(rhs))}")
    if not np.allclose(targets.sum(axis=0), rhs, rtol=0, atol=1e-9):
        raise ValueError("targets must sum to the right-hand side")
    return targets


def incremental_update(psi, contribution, s: float, target, equality=None) -> np.ndarray:
    """psi + s (A_i x_i - beta_i), projected for inequality rows when ``equality`` is given."""
    new = np.asarray(psi, dtype=float) + s * (np.asarray(contribution, dtype=float) - np.asarray(target, dtype=float))
    if equality is None:
        return new
    return np.where(equality, new, np.maximum(new, 0.0))


def surrogate_condition_holds(previous: CompositeSolution, candidate: CompositeSolution, multipliers) -> bool:
    """Strict decrease of the Lagrangian at fixed multipliers."""
    problem = candidate.problem
    return evaluate_lagrangian(problem, candidate, multipliers) < evaluate_lagrangian(problem, previous, multipliers)


class RoundRobin:
    """Cycles through subproblem indices 0, 1, ..., I-1, 0, ..."""

    def __init__(self, num_blocks: int, start: int = 0):
        self.n = num_blocks
        self.pos = start % num_blocks

    def next(self) -> int:
        i = self.pos
        self.pos = (self.pos + 1) % self.n
        return i

    def full_pass(self) -> list[int]:
        return list(range(self.n))


def schedule_next_subproblem(scheduler: RoundRobin, mode: str):
    """Next index (interleaved) or the whole batch (full pass / incremental)."""
    if mode == "interleaved":
        return scheduler.next()
    return scheduler.full_pass()


def _solve_all(problem, comp, lam, dp_limit):
    for i, block in enumerate(problem.blocks):
        comp.replace(i, solve_block(block, lam, dp_limit)[0])
    return tuple(range(problem.num_blocks))


def run(problem: SeparableProblem, config: EngineConfig) -> RunTrace:
    """Run the coordination loop and return the full trace."""
    t_start = time.perf_counter()
    policy = config.policy
    I = problem.num_blocks
    eq = problem.equality_mask
    policy.start(I, config.s0)
    trace = RunTrace(problem.name, policy.name)
    detector = None
    if config.detector and policy.uses_level:
        detector = LevelDetector(policy.gamma, config.detector, config.nu, config.level_form)
    targets = make_targets(problem.rhs, I, config.targets) if config.mode == "incremental" else None
    ref = None if config.reference is None else np.asarray(config.reference, dtype=float)
    keep = config.keep_vectors

    lam = initial_multipliers(problem, config)
    comp = CompositeSolution(problem)
    try:
        solved = _solve_all(problem, comp, lam, config.dp_limit)
    except Exception as exc:
        raise EngineError(f"iteration 0: subproblem solve failed: {exc}") from exc
    trace.solves += I
    sched = RoundRobin(I)

    def record(k, solved, exact, extra_dual=None):
        g = constraint_violation(problem, comp)
        L = comp.objective() + float(lam @ g)
        dual = L if exact else extra_dual
        rec = IterateRecord(
            k=k, multipliers=lam.copy() if keep else None, subgradient=g.copy() if keep else None,
            value=L, g_norm=float(np.linalg.norm(g)), solved=tuple(solved), exact=exact, dual_value=dual,
            distance=None if ref is None else float(np.linalg.norm(lam - ref)),
            wall=time.perf_counter() - t_start)
        trace.records.append(rec)
        trace.best_surrogate = max(trace.best_surrogate, L)
        if dual is not None:
            trace.note_exact(k, dual)
        return rec, g, L

    rec, g, L = record(0, solved, True)
    _push_pool(trace, comp, L)
    prev_s = prev_gnorm = None
    last_step: WindowStep | None = None
    halve_next = False
    trace.termination = "max iterations"

    for k in range(config.max_iters):
        gnorm_sq = float(g @ g)
        if gnorm_sq == 0.0:
            trace.termination = "zero subgradient"
            break
        ctx = StepContext(k, L, gnorm_sq, prev_s, prev_gnorm)
        try:
            try:
                s = policy.stepsize(ctx)
            except LevelRefreshRequired:
                if detector is None or last_step is None:
                    raise
                level = detector.refresh(k, L, last_step)
                policy.set_level(level)
                trace.level_events.append(LevelEvent(detector.window.level_index, k, level, "refresh", 1))
                s = policy.stepsize(ctx)
        except PolicyError as exc:
            trace.termination = f"policy: {exc}"
            break
        if halve_next:
            s *= 0.5
            halve_next = False
        if not (math.isfinite(s) and s >= config.step_floor):
            trace.termination = "stepsize floor"
            break
        rec.stepsize = s
        if policy.uses_level:
            rec.level = policy.level

        try:
            if config.mode == "incremental":
                psi = lam.copy()
                for i in range(I):
                    comp.replace(i, solve_block(problem.blocks[i], psi, config.dp_limit)[0])
                    psi = incremental_update(psi, comp.activities[i], s, targets[i], eq)
                lam_new = psi
                solved = tuple(range(I))
            else:
                lam_new = update_multipliers(lam, s, g, eq)
        except Exception as exc:
            raise EngineError(f"iteration {k}: {exc}") from exc

        step = lam_new - lam
        policy.observe(ctx, float(np.linalg.norm(step)))
        if detector is not None:
            last_step = WindowStep(k, lam, step / s, s, L, gnorm_sq)
            out = detector.on_iteration(last_step)
            if out.fired:
                policy.set_level(out.level)
                rec.fired = True
                trace.level_events.append(
                    LevelEvent(detector.window.level_index - 1, k, out.level, "fired", out.window_length, out.margin))
        prev_s, prev_gnorm = s, math.sqrt(gnorm_sq)
        lam = lam_new

        exact = False
        try:
            if config.mode == "full":
                solved = _solve_all(problem, comp, lam, config.dp_limit)
                exact = True
            elif config.mode == "interleaved":
                solved, exact, improved = _interleaved_solve(problem, comp, lam, sched, config)
                if not improved:
                    trace.exhausted_passes += 1
                    if config.fallback == "halve":
                        halve_next = True
                    elif config.stop_when_unattainable:
                        trace.solves += len(solved)
                        record(k + 1, solved, exact)
                        trace.termination = "surrogate condition unattainable"
                        break
            else:
                exact = False
        except EngineError:
            raise
        except Exception as exc:
            raise EngineError(f"iteration {k + 1}: subproblem solve failed: {exc}") from exc
        trace.solves += len(solved)
        comp.age()

        extra = None
        if not exact and config.exact_every and (k + 1) % config.exact_every == 0:
            probe = CompositeSolution(problem)
            _solve_all(problem, probe, lam, config.dp_limit)
            trace.solves += I
            extra = evaluate_lagrangian(problem, probe, lam)
            _push_pool(trace, probe, extra)
        rec, g, L = record(k + 1, solved, exact, extra)
        if exact:
            _push_pool(trace, comp, L)
        if config.time_limit is not None and time.perf_counter() - t_start > config.time_limit:
            trace.termination = "time limit"
            break

    trace.final_multipliers = lam.copy()
    trace.final_composite = comp.copy()
    if config.certify:
        cert = CompositeSolution(problem)
        _solve_all(problem, cert, lam, config.dp_limit)
        trace.solves += I
        q = evaluate_lagrangian(problem, cert, lam)
        trace.note_exact(trace.records[-1].k, q)
        trace.certified_dual = q
        trace.certified_composite = cert
        _push_pool(trace, cert, q)
    if detector is not None:
        trace.detector_seconds = detector.seconds
    trace.wall_seconds = time.perf_counter() - t_start
    return trace


def _push_pool(trace: RunTrace, comp: CompositeSolution, dual: float, size: int = 8) -> None:
    """Keep the exact relaxed solutions with the highest dual values, best first."""
    trace.pool_duals.append(dual)
    trace.exact_pool.append(comp.copy())
    order = sorted(range(len(trace.pool_duals)), key=lambda i: -trace.pool_duals[i])[:size]
    trace.pool_duals = [trace.pool_duals[i] for i in order]
    trace.exact_pool = [trace.exact_pool[i] for i in order]


def _interleaved_solve(problem, comp, lam, sched, config):
    """Solve scheduled subproblems until the Lagrangian strictly drops.

    Returns (solved indices, exact, improved). With the "halve" fallback a
    single solve is accepted regardless of the outcome.
    """
    I = problem.num_blocks
    solved = []
    budget = 1 if config.fallback == "halve" else I
    for _ in range(budget):
        i = sched.next()
        block = problem.blocks[i]
        r = block.reduced_costs(lam)
        x, val = solve_block(block, lam, config.dp_limit)
        old = float(r @ comp.parts[i])
        solved.append(i)
        if val < old:
            comp.replace(i, x)
            return tuple(solved), len(set(solved)) == I, True
        if val == old and not np.array_equal(x, comp.parts[i]):
            comp.replace(i, x)
    return tuple(solved), len(set(solved)) == I, False
