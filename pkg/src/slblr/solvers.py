"""Exact subproblem solvers and brute-force oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import BoxSet, GapInstance, KnapsackSet, SeparableProblem

# reduced costs above this are treated as nonnegative (item fixed to 0)
FIX_TOL = 1e-12
DEFAULT_DP_LIMIT = 60_000_000
DEFAULT_ENUM_CAP = 10_000_000
DEFAULT_NODE_CAP = 10_000_000


class KnapsackTooLarge(MemoryError):
    pass


class OracleRefused(RuntimeError):
    """Search budget exhausted; ``best`` holds the best ``(value, solution)`` seen, if any."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass
class OracleResult:
    value: float
    solution: np.ndarray | None
    count: int
    status: str = "optimal"
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def solve_knapsack_min(reduced, weights, capacity: int, dp_limit: int = DEFAULT_DP_LIMIT):
    """Exact minimizer of r.x s.t. a.x <= b, x binary.

    Returns ``(x, value)``. Among optimal solutions the lexicographically
    smallest vector is returned.
    """
    r = np.asarray(reduced, dtype=float)
    a = np.asarray(weights, dtype=np.int64)
    n = len(r)
    x = np.zeros(n)
    cand = np.flatnonzero((r < -FIX_TOL) & (a <= capacity))
    if len(cand) == 0:
        return x, 0.0
    if a[cand].sum() <= capacity:
        x[cand] = 1.0
        return x, float(r @ x)
    cap = int(min(capacity, a[cand].sum()))
    k = len(cand)
    if k * (cap + 1) > dp_limit:
        raise KnapsackTooLarge(f"knapsack DP table {k}x{cap + 1} exceeds limit {dp_limit}")

    # suffix DP: best[w] = min cost of items cand[i:] within capacity w
    take = np.zeros((k, cap + 1), dtype=bool)
    best = np.zeros(cap + 1)
    for t in range(k - 1, -1, -1):
        i = cand[t]
        w = int(a[i])
        if w == 0:
            take[t, :] = True
            best = best + r[i]
            continue
        with_item = best[:cap + 1 - w] + r[i]
        tol = FIX_TOL * (1.0 + np.abs(best[w:]))
        better = with_item < best[w:] - tol
        take[t, w:] = better
        best[w:] = np.where(better, with_item, best[w:])
    w = cap
    for t in range(k):
        if take[t, w]:
            x[cand[t]] = 1.0
            w -= int(a[cand[t]])
    return x, float(r @ x)


def solve_bounded_integer_linear(coefficients, lower, upper):
    """Minimize a separable linear objective over an integer box.

    Each variable goes to its upper bound when its coefficient is negative,
    otherwise to its lower bound.
    """
    c = np.asarray(coefficients, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise ValueError("unbounded variable range")
    x = np.where(c < 0, hi, lo)
    return x, float(c @ x)


def solve_block(block, multipliers: np.ndarray, dp_limit: int = DEFAULT_DP_LIMIT):
    """Solve one subproblem at the given multipliers; returns ``(x, reduced value)``."""
    r = block.reduced_costs(multipliers)
    local = block.local
    if isinstance(local, KnapsackSet):
        return solve_knapsack_min(r, local.weights, local.capacity, dp_limit)
    if isinstance(local, BoxSet):
        return solve_bounded_integer_linear(r, local.lower, local.upper)
    raise TypeError(f"no solver for local set {type(local).__name__}")


def dual_function_oracle(problem: SeparableProblem, multipliers) -> float:
    """q(lambda): solve every subproblem exactly and sum."""
    lam = np.asarray(multipliers, dtype=float)
    total = -float(lam @ problem.rhs)
    for block in problem.blocks:
        _, v = solve_block(block, lam)
        total += v
    return total


def exact_primal_oracle(problem: SeparableProblem | GapInstance, cap: int = DEFAULT_ENUM_CAP,
                        node_cap: int = DEFAULT_NODE_CAP) -> OracleResult:
    """Exact optimum by enumeration (separable form) or branch-and-bound (GAP)."""
    if isinstance(problem, GapInstance):
        return gap_branch_and_bound(problem, node_cap=node_cap)
    return _enumerate_separable(problem, cap)


def _enumerate_separable(problem: SeparableProblem, cap: int) -> OracleResult:
    space = 1
    for b in problem.blocks:
        space *= b.local.count()
        if space > cap:
            raise OracleRefused(f"search space exceeds cap {cap}; shrink the instance")

    pools = []
    for b in problem.blocks:
        pts = np.array(list(b.local.enumerate()))
        pools.append((pts, pts @ b.cost, (b.coupling @ pts.T).T))
    m = problem.num_rows
    eq = problem.equality_mask
    tol = 1e-9

    # remaining-activity envelopes for row pruning
    lo_rest = np.zeros((len(pools) + 1, m))
    hi_rest = np.zeros((len(pools) + 1, m))
    cost_rest = np.zeros(len(pools) + 1)
    for i in range(len(pools) - 1, -1, -1):
        _, costs, acts = pools[i]
        lo_rest[i] = lo_rest[i + 1] + acts.min(axis=0)
        hi_rest[i] = hi_rest[i + 1] + acts.max(axis=0)
        cost_rest[i] = cost_rest[i + 1] + costs.min()

    best = [math.inf, None]
    count = 0

    def dfs(i, cost, act, chosen):
        nonlocal count
        count += 1
        if cost + cost_rest[i] >= best[0] - tol:
            return
        if (act + lo_rest[i] > problem.rhs + tol).any():
            return
        if (act[eq] + hi_rest[i][eq] < problem.rhs[eq] - tol).any():
            return
        if i == len(pools):
            best[0], best[1] = cost, list(chosen)
            return
        pts, costs, acts = pools[i]
        for idx in np.argsort(costs, kind="stable"):
            chosen.append(pts[idx])
            dfs(i + 1, cost + costs[idx], act + acts[idx], chosen)
            chosen.pop()

    dfs(0, 0.0, np.zeros(m), [])
    if best[1] is None:
        return OracleResult(math.inf, None, count, status="infeasible")
    return OracleResult(float(best[0]), np.concatenate(best[1]), count)


def gap_branch_and_bound(inst: GapInstance, node_cap: int = DEFAULT_NODE_CAP,
                         capacity=None, jobs=None, incumbent=None) -> OracleResult:
    """Depth-first branch-and-bound over jobs for the min-cost GAP.

    ``capacity``/``jobs`` restrict the search to a residual problem. The
    solution is a job->machine vector over ``jobs`` (all jobs by default).
    ``incumbent`` is an optional known ``(value, assignment)`` used for
    pruning; it is returned when nothing cheaper exists.
    Raises :class:`OracleRefused` when the node cap is hit.
    """
    cost = inst.cost
    res = inst.resource
    cap = np.array(inst.capacity if capacity is None else capacity, dtype=np.int64)
    jobs = np.arange(inst.num_jobs) if jobs is None else np.asarray(jobs, dtype=int)
    M = inst.num_machines
    if len(jobs) == 0:
        return OracleResult(0.0, np.zeros(0, dtype=int), 0)

    # branch on tight, expensive-to-misplace jobs first
    fits = res[jobs] <= cap
    if not fits.any(axis=1).all():
        return OracleResult(math.inf, None, 0, status="infeasible")
    masked = np.where(fits, cost[jobs], np.iinfo(np.int64).max // 4)
    srt = np.sort(masked, axis=1)
    regret = (srt[:, 1] - srt[:, 0]) if M > 1 else np.zeros(len(jobs))
    order = np.lexsort((np.arange(len(jobs)), -res[jobs].max(axis=1), -regret))
    seq = jobs[order]
    n = len(seq)
    machine_order = [[int(i) for i in np.argsort(cost[j], kind="stable")] for j in seq]
    cost_l = [[int(v) for v in cost[j]] for j in seq]
    res_l = [[int(v) for v in res[j]] for j in seq]
    min_cost = cost[seq].min(axis=1)
    tail = [int(v) for v in np.concatenate([np.cumsum(min_cost[::-1])[::-1], [0]])]
    min_res = res[seq].min(axis=1)
    res_tail = [int(v) for v in np.concatenate([np.cumsum(min_res[::-1])[::-1], [0]])]

    best_val = math.inf
    best_assign = None
    if incumbent is not None:
        best_val = float(incumbent[0]) + 1  # strict improvement keeps ties with the incumbent
        best_assign = None
    assign = [-1] * n
    nodes = 0
    load_left = [int(v) for v in cap]
    total_left = [sum(max(v, 0) for v in load_left)]

    def dfs(t, val):
        nonlocal best_val, best_assign, nodes
        nodes += 1
        if nodes > node_cap:
            raise OracleRefused(f"branch-and-bound node cap {node_cap} exceeded")
        if val + tail[t] >= best_val:
            return
        if t == n:
            best_val = val
            best_assign = list(assign)
            return
        if res_tail[t] > total_left[0]:
            return
        cj, rj = cost_l[t], res_l[t]
        for mch in machine_order[t]:
            if val + cj[mch] + tail[t + 1] >= best_val:
                break
            a = rj[mch]
            if a <= load_left[mch]:
                load_left[mch] -= a
                total_left[0] -= a
                assign[t] = mch
                dfs(t + 1, val + cj[mch])
                load_left[mch] += a
                total_left[0] += a
        assign[t] = -1

    def unpermute(a):
        out = np.empty(len(jobs), dtype=int)
        out[order] = a
        return out

    try:
        dfs(0, 0)
    except OracleRefused as exc:
        if best_assign is not None:
            exc.best = (float(best_val), unpermute(best_assign))
        elif incumbent is not None:
            exc.best = (float(incumbent[0]), np.asarray(incumbent[1], dtype=int))
        raise
    if best_assign is None:
        if incumbent is not None:
            return OracleResult(float(incumbent[0]), np.asarray(incumbent[1], dtype=int), nodes)
        return OracleResult(math.inf, None, nodes, status="infeasible")
    return OracleResult(float(best_val), unpermute(best_assign), nodes)
