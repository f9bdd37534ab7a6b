"""Turning relaxed solutions into feasible primal solutions; duality-gap metrics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .problem import BoxSet, CompositeSolution, GapInstance, SeparableProblem, assignment_matrix
from .solvers import OracleRefused, gap_branch_and_bound


class MetricUnavailable(ValueError):
    pass


class BoundViolation(AssertionError):
    pass


@dataclass
class RepairBudget:
    node_cap: int = 1_000_000
    eviction_rounds: int = 12
    local_search: bool = False


@dataclass
class RepairReport:
    feasible: bool
    assignment: np.ndarray | None
    cost: float | None
    lower_bound: float | None = None
    gap: float | None = None
    adjusted: int = 0
    conflicted: int = 0
    evicted: int = 0
    method: str = ""
    seconds: float = 0.0

    def with_bound(self, lb: float | None) -> "RepairReport":
        self.lower_bound = lb
        if lb is not None and self.cost is not None:
            self.gap = relative_gap(self.cost, lb)
        return self

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "cost": self.cost,
            "lower_bound": self.lower_bound,
            "gap_percent": None if self.gap is None else round(100.0 * self.gap, 4),
            "adjusted": self.adjusted,
            "conflicted": self.conflicted,
            "evicted": self.evicted,
            "method": self.method,
            "seconds": self.seconds,
            "assignment": None if self.assignment is None else [int(v) for v in self.assignment],
        }


def relative_gap(ub: float, lb: float) -> float:
    if ub < lb - 1e-9 * max(1.0, abs(ub)):
        raise BoundViolation(f"upper bound {ub} below certified lower bound {lb}")
    if ub == 0:
        return 0.0
    return max(0.0, (ub - lb) / abs(ub))


def gap_metrics(ub: float, trace_or_lb) -> float:
    """Relative gap in percent, rounded to 4 decimals, against a certified dual bound."""
    lb = trace_or_lb if isinstance(trace_or_lb, (int, float)) else getattr(trace_or_lb, "best_dual", None)
    if lb is None:
        raise MetricUnavailable("no certified lower bound (run without an exact full pass)")
    return round(100.0 * relative_gap(ub, lb), 4)


def greedy_regret(inst: GapInstance, jobs, capacity):
    """Regret-ordered greedy assignment of ``jobs`` within ``capacity``.

    Returns a job->machine vector over ``jobs`` or ``None`` if some job
    cannot be placed.
    """
    jobs = list(jobs)
    cap = np.array(capacity, dtype=np.int64)
    out = {}
    left = np.array(sorted(jobs), dtype=int)
    big = np.iinfo(np.int64).max // 4
    while len(left):
        res = inst.resource[left]
        fits = res <= cap
        if not fits.any(axis=1).all():
            return None
        costs = np.where(fits, inst.cost[left], big)
        part = np.partition(costs, 1, axis=1) if costs.shape[1] > 1 else np.c_[costs, np.full(len(left), big)]
        regret = np.where(part[:, 1] >= big, np.inf, (part[:, 1] - part[:, 0]).astype(float))
        i = int(np.argmax(regret))  # first maximum, so ties go to the lowest job index
        j = int(left[i])
        m = int(np.argmin(costs[i]))
        out[j] = m
        cap[m] -= inst.resource[j, m]
        left = np.delete(left, i)
    # shift improvement among the placed jobs
    improved = True
    while improved:
        improved = False
        for j in jobs:
            cur = out[j]
            for mch in np.argsort(inst.cost[j], kind="stable"):
                if inst.cost[j, mch] >= inst.cost[j, cur]:
                    break
                if inst.resource[j, mch] <= cap[mch]:
                    cap[cur] += inst.resource[j, cur]
                    cap[mch] -= inst.resource[j, mch]
                    out[j] = int(mch)
                    improved = True
                    break
    return np.array([out[j] for j in jobs], dtype=int)


def local_search(inst: GapInstance, assign, max_sweeps: int = 100) -> tuple[np.ndarray, int]:
    """Improving shift and swap moves until none is left.

    Returns the improved assignment and the number of moves applied.
    """
    a = np.array(assign, dtype=int)
    N, M = inst.num_jobs, inst.num_machines
    jobs = np.arange(N)
    slack = inst.capacity.astype(np.int64).copy()
    np.subtract.at(slack, a, inst.resource[jobs, a])
    moves = 0
    for _ in range(max_sweeps):
        changed = False
        # shifts: best target machine per job
        for j in range(N):
            cur = a[j]
            gain = inst.cost[j, cur] - inst.cost[j]
            ok = (inst.resource[j] <= slack) & (gain > 0)
            ok[cur] = False
            if ok.any():
                tgt = int(np.flatnonzero(ok)[np.argmax(gain[ok])])
                slack[cur] += inst.resource[j, cur]
                slack[tgt] -= inst.resource[j, tgt]
                a[j] = tgt
                moves += 1
                changed = True
        # swaps: j with every other job on a different machine
        for j in range(N):
            mj = a[j]
            mo = a
            delta = inst.cost[j, mo] + inst.cost[jobs, mj] - inst.cost[j, mj] - inst.cost[jobs, mo]
            fit_j = slack[mo] + inst.resource[jobs, mo] - inst.resource[j, mo] >= 0
            fit_o = slack[mj] + inst.resource[j, mj] - inst.resource[jobs, mj] >= 0
            ok = (mo != mj) & fit_j & fit_o & (delta < 0)
            if ok.any():
                o = int(np.flatnonzero(ok)[np.argmin(delta[ok])])
                mo_ = a[o]
                slack[mj] += inst.resource[j, mj] - inst.resource[o, mj]
                slack[mo_] += inst.resource[o, mo_] - inst.resource[j, mo_]
                a[j], a[o] = mo_, mj
                moves += 1
                changed = True
        if not changed:
            break
    return a, moves


def resolve_overload(inst: GapInstance, assign, max_moves: int | None = None):
    """Drive a complete but over-capacity assignment to feasibility.

    Each move is the shift (or, failing that, the swap) that lowers the total
    overload at the smallest cost increase per unit of overload removed.
    Returns the feasible assignment or ``None`` when no move helps.
    """
    a = np.array(assign, dtype=int)
    N, M = inst.num_jobs, inst.num_machines
    cost = inst.cost.astype(np.int64)
    res = inst.resource.astype(np.int64)
    cap = inst.capacity.astype(np.int64)
    jobs = np.arange(N)
    load = np.zeros(M, dtype=np.int64)
    np.add.at(load, a, res[jobs, a])
    max_moves = max_moves or 20 * N
    for _ in range(max_moves):
        over = np.maximum(load - cap, 0)
        total = int(over.sum())
        if total == 0:
            return a
        # shifts of jobs sitting on overloaded machines
        src = over[a] > 0
        js = jobs[src]
        if len(js):
            cur = a[js]
            new_load_src = load[cur] - res[js, cur]
            d_src = np.maximum(new_load_src - cap[cur], 0) - over[cur]
            new_load_dst = load[None, :] + res[js]
            d_dst = np.maximum(new_load_dst - cap[None, :], 0) - over[None, :]
            delta_over = d_src[:, None] + d_dst
            delta_over[np.arange(len(js)), cur] = 0
            dcost = cost[js] - cost[js, cur][:, None]
            ok = delta_over < 0
            if ok.any():
                score = np.where(ok, (dcost + 1e-9) / -np.where(ok, delta_over, -1), np.inf)
                r, k = np.unravel_index(int(np.argmin(score)), score.shape)
                j = js[r]
                load[a[j]] -= res[j, a[j]]
                load[k] += res[j, k]
                a[j] = k
                continue
        # swaps between a job on an overloaded machine and any other job
        best = None
        for j in js:
            mj = a[j]
            mo = a
            lj = load[mj] - res[j, mj] + res[jobs, mj]
            lo = load[mo] - res[jobs, mo] + res[j, mo]
            new_over = np.maximum(lj - cap[mj], 0) + np.maximum(lo - cap[mo], 0)
            d = new_over - over[mj] - over[mo]
            ok = (mo != mj) & (d < 0)
            if not ok.any():
                continue
            dc = cost[j, mo] + cost[jobs, mj] - cost[j, mj] - cost[jobs, mo]
            score = np.where(ok, (dc + 1e-9) / -np.where(ok, d, -1), np.inf)
            o = int(np.argmin(score))
            if best is None or score[o] < best[0]:
                best = (score[o], j, o)
        if best is None:
            return None
        _, j, o = best
        mj, mo = a[j], a[o]
        load[mj] += res[o, mj] - res[j, mj]
        load[mo] += res[j, mo] - res[o, mo]
        a[j], a[o] = mo, mj
    return None


def _solve_residual(inst, jobs, capacity, budget):
    greedy = greedy_regret(inst, jobs, capacity)
    incumbent = None
    if greedy is not None:
        incumbent = (int(inst.cost[jobs, greedy].sum()), greedy)
    try:
        res = gap_branch_and_bound(inst, node_cap=budget.node_cap, capacity=capacity, jobs=jobs,
                                   incumbent=incumbent)
        if res.feasible:
            return res.solution, "exact"
        return None, "exact"
    except OracleRefused as exc:
        if exc.best is not None:
            return exc.best[1], "greedy+bnb"
        return greedy, "greedy"


def repair_gap(instance: GapInstance, composite, budget: RepairBudget | None = None) -> RepairReport:
    """Keep cleanly assigned jobs, re-solve the conflicted ones within the leftover capacity.

    ``composite`` is a :class:`CompositeSolution` of the GAP relaxation or an
    N x M 0/1 matrix. When the residual problem is infeasible, clean jobs
    with the smallest reassignment regret are released and the residual is
    solved again, up to ``budget.eviction_rounds`` times.
    """
    t0 = time.perf_counter()
    budget = budget or RepairBudget()
    x = assignment_matrix(composite) if isinstance(composite, CompositeSolution) else np.asarray(composite)
    N, M = instance.num_jobs, instance.num_machines
    if x.shape != (N, M):
        raise ValueError(f"expected a {N}x{M} assignment matrix")
    counts = x.sum(axis=1)
    clean = counts == 1
    conflicted = np.flatnonzero(~clean)
    assign = np.where(clean, x.argmax(axis=1), -1)

    if len(conflicted) == 0 and instance.is_feasible(assign):
        return RepairReport(True, assign, float(instance.assignment_cost(assign)), method="unchanged",
                            seconds=time.perf_counter() - t0)
    # a job picked by several machines keeps its cheapest copy that still fits
    load = np.zeros(M, dtype=np.int64)
    np.add.at(load, assign[clean], instance.resource[np.flatnonzero(clean), assign[clean]])
    for j in np.flatnonzero(counts > 1):
        picks = np.flatnonzero(x[j])
        for m in picks[np.argsort(instance.cost[j, picks], kind="stable")]:
            if load[m] + instance.resource[j, m] <= instance.capacity[m]:
                assign[j] = int(m)
                load[m] += instance.resource[j, m]
                break
    clean = assign >= 0
    conflicted = np.flatnonzero(counts != 1)

    initial = assign.copy()
    free = [int(j) for j in np.flatnonzero(~clean)]
    fixed = clean.copy()
    evicted = 0
    # release order for clean jobs: cheapest to move first, then larger resource use
    jobs_idx = np.arange(N)
    cur = np.where(clean, assign, 0)
    alt = np.where(np.eye(M, dtype=bool)[cur], np.iinfo(np.int64).max // 4, instance.cost).min(axis=1)
    regret = alt - instance.cost[jobs_idx, cur]
    release_order = [int(j) for j in np.lexsort((jobs_idx, -instance.resource[jobs_idx, cur], regret)) if clean[j]]

    method = ""
    for rnd in range(budget.eviction_rounds + 1):
        load = np.zeros(M, dtype=np.int64)
        np.add.at(load, assign[fixed], instance.resource[np.flatnonzero(fixed), assign[fixed]])
        residual = instance.capacity - load
        if (residual < 0).any():
            sol = None  # the fixed jobs alone overload a machine
        else:
            sol, method = _solve_residual(instance, free, residual, budget)
        if sol is not None:
            final = assign.copy()
            final[free] = sol
            if not instance.is_feasible(final):
                raise AssertionError("repair produced an infeasible assignment")
            if budget.local_search:
                final, moves = local_search(instance, final)
                if moves:
                    method += "+local"
            adjusted = int(sum(1 for j in range(N) if not (x[j].sum() == 1 and x[j, final[j]] == 1)))
            return RepairReport(True, final, float(instance.assignment_cost(final)), adjusted=adjusted,
                                conflicted=len(conflicted), evicted=evicted, method=method,
                                seconds=time.perf_counter() - t0)
        if not release_order:
            break
        n_release = max(1, len(conflicted)) * (2 ** rnd)
        batch, release_order = release_order[:n_release], release_order[n_release:]
        for j in batch:
            fixed[j] = False
            assign[j] = -1
            free.append(j)
        evicted += len(batch)
    # eviction exhausted: place every job, then remove the overload
    start = np.where(initial >= 0, initial, instance.cost.argmin(axis=1))
    final = resolve_overload(instance, start)
    if final is not None:
        if not instance.is_feasible(final):
            raise AssertionError("overload repair produced an infeasible assignment")
        method = "overload"
        if budget.local_search:
            final, moves = local_search(instance, final)
            if moves:
                method += "+local"
        adjusted = int(sum(1 for j in range(N) if not (x[j].sum() >= 1 and x[j, final[j]] == 1)))
        return RepairReport(True, final, float(instance.assignment_cost(final)), adjusted=adjusted,
                            conflicted=len(conflicted), evicted=evicted, method=method,
                            seconds=time.perf_counter() - t0)
    return RepairReport(False, None, None, conflicted=len(conflicted), evicted=evicted, method="failed",
                        seconds=time.perf_counter() - t0)


def best_gap_repair(instance: GapInstance, candidates, budget: RepairBudget | None = None) -> RepairReport:
    """Repair several relaxed solutions and keep the cheapest feasible outcome."""
    best = None
    seen = set()
    for comp in candidates:
        if comp is None:
            continue
        key = assignment_matrix(comp).tobytes() if isinstance(comp, CompositeSolution) else np.asarray(comp).tobytes()
        if key in seen:
            continue
        seen.add(key)
        rep = repair_gap(instance, comp, budget)
        if rep.feasible and (best is None or not best.feasible or rep.cost < best.cost):
            best = rep
        elif best is None:
            best = rep
    if best is None:
        return RepairReport(False, None, None, method="failed")
    return best


def repair_cover(problem: SeparableProblem, composite: CompositeSolution) -> RepairReport:
    """Greedy rounding for box-variable problems with covering rows (Example 1).

    Raises variables with the best cost per unit of remaining violation until
    every row holds, then lowers any variable that is no longer needed.
    """
    t0 = time.perf_counter()
    if not all(isinstance(b.local, BoxSet) for b in problem.blocks):
        raise TypeError("repair_cover handles box-variable problems only")
    x = composite.vector().copy()
    A = np.hstack([b.coupling.toarray() for b in problem.blocks])
    c = np.concatenate([b.cost for b in problem.blocks])
    lo = np.concatenate([b.local.lower for b in problem.blocks])
    hi = np.concatenate([b.local.upper for b in problem.blocks])
    eq = problem.equality_mask
    if eq.any():
        raise TypeError("repair_cover handles inequality rows only")
    b = problem.rhs
    start = x.copy()
    while True:
        viol = A @ x - b
        bad = viol > 1e-9
        if not bad.any():
            break
        gain = np.clip(-A[bad], 0, None).sum(axis=0)
        ok = (gain > 0) & (x < hi)
        if not ok.any():
            return RepairReport(False, None, None, method="failed", seconds=time.perf_counter() - t0)
        ratio = np.where(ok, c / np.where(gain > 0, gain, 1), np.inf)
        x[int(np.argmin(ratio))] += 1
    for v in np.argsort(-c, kind="stable"):
        while x[v] > lo[v] and (A @ (x - np.eye(len(x))[v]) - b <= 1e-9).all():
            x[v] -= 1
    return RepairReport(True, x, float(c @ x), adjusted=int((x != start).sum()), method="greedy-cover",
                        seconds=time.perf_counter() - t0)
