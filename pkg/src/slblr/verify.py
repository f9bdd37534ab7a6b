"""Property suites run by ``slblr verify``.

Each suite returns a list of :class:`PropertyResult`; a suite passes when
every property does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .bench import RunConfig, execute, repair_run
from .detector import HalfspaceSystem, WindowStep, apollonius_ball, build_halfspaces, lp_feasible
from .engine import EngineConfig, run
from .instances import LoadedInstance
from .problem import BoxSet, SeparableProblem, example1, gap_to_separable, generate_type_d
from .solvers import dual_function_oracle, gap_branch_and_bound
from .stepsize import PolyakKnown, Slblr

CRITERION1_GAMMAS = (0.05, 0.1, 0.2, 0.4)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


def grid_dual_max(problem: SeparableProblem, lo: float = 0.0, hi: float = 2.0, step: float = 0.01):
    """Maximize q over a square grid; box-variable problems with two rows only.

    q is evaluated in closed form: each block's reduced cost is affine in
    lambda and a linear function over a box attains its minimum at a corner.
    Returns ``(q_max, lambda_argmax)``.
    """
    if problem.num_rows != 2 or not all(isinstance(b.local, BoxSet) for b in problem.blocks):
        raise ValueError("grid oracle handles two-row box problems only")
    ticks = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    L1, L2 = np.meshgrid(ticks, ticks, indexing="ij")
    lam = np.column_stack([L1.ravel(), L2.ravel()])
    q = -lam @ problem.rhs
    for b in problem.blocks:
        r0 = b.reduced_costs(np.zeros(2))
        J = np.column_stack([b.reduced_costs(e) - r0 for e in np.eye(2)])
        R = r0 + lam @ J.T
        q += np.minimum(R * b.local.lower, R * b.local.upper).sum(axis=1)
    i = int(np.argmax(q))
    return float(q[i]), lam[i].copy()


def eq23_margin(points: np.ndarray) -> float:
    """min t s.t. ||lam - p_{k+1}||^2 - ||lam - p_k||^2 <= t for all k, t >= -1.

    Written from the multiplier points only; expanding the squares makes
    every row linear in lam. The system is feasible iff the optimum is <= 0.
    """
    P = np.asarray(points, dtype=float)
    prev, nxt = P[:-1], P[1:]
    A = np.hstack([2.0 * (prev - nxt), -np.ones((len(prev), 1))])
    b = (prev ** 2).sum(axis=1) - (nxt ** 2).sum(axis=1)
    m = P.shape[1]
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * m + [(-1.0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"reference LP failed: {res.message}")
    return float(res.fun)


def random_window(rng: np.random.Generator, dim: int, length: int) -> list[WindowStep]:
    """A window of projection-free steps; half aim at a hidden target, half wander."""
    lam = rng.normal(size=dim)
    target = rng.normal(size=dim) * 2.0
    aimed = rng.random() < 0.5
    steps = []
    for k in range(length):
        if aimed:
            d = target - lam
            g = d / max(np.linalg.norm(d), 1e-12) + 0.3 * rng.normal(size=dim)
            s = float(rng.uniform(0.1, 1.9)) * np.linalg.norm(d) / max(np.linalg.norm(g), 1e-12)
        else:
            g = rng.normal(size=dim)
            s = float(rng.uniform(0.05, 1.0))
        steps.append(WindowStep(k, lam.copy(), g, s, 0.0, float(g @ g)))
        lam = lam + s * g
    return steps


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------


def suite_theorem1(gammas=(0.5, 1.0, 1.5), starts: int = 3, max_iters: int = 300) -> list[PropertyResult]:
    """Polyak steps with the exact q* move the multipliers strictly closer to lambda*."""
    prob = example1()
    q_star, lam_star = grid_dual_max(prob)
    check = dual_function_oracle(prob, lam_star)
    out = [PropertyResult("grid optimum", abs(check - q_star) <= 1e-9 and np.allclose(lam_star, [0.6, 0.0]),
                          f"q* = {q_star:.6f} at lambda = {lam_star.tolist()}")]
    for gamma in gammas:
        violations = checked = 0
        for seed in range(starts):
            cfg = EngineConfig(PolyakKnown(q_star, gamma), s0=0.1, mode="full", detector=None,
                               max_iters=max_iters, reference=lam_star,
                               lambda0_uniform=None if seed == 0 else (0.0, 3.0), seed=seed)
            tr = run(prob, cfg)
            for a, b in zip(tr.records, tr.records[1:]):
                if a.g_norm == 0:
                    continue
                checked += 1
                if not b.distance < a.distance:
                    violations += 1
        out.append(PropertyResult(f"distance decrease, gamma={gamma}", violations == 0 and checked > 0,
                                  f"{checked} steps, {violations} violations"))
    return out


def suite_detector_equivalence(windows: int = 1000, samples: int = 10_000, seed: int = 0) -> list[PropertyResult]:
    """The LP verdict on the halfspace form agrees with the distance form of the conditions."""
    rng = np.random.default_rng(seed)
    agree = decided = near = feasible = bad_witness = 0
    while decided < windows:
        dim = int(rng.integers(1, 5))
        length = int(rng.integers(1, 7))
        steps = random_window(rng, dim, length)
        points = np.array([s.multipliers for s in steps] + [steps[-1].next_multipliers])
        ref = eq23_margin(points)
        scale = 1.0 + float(np.abs(points).max()) ** 2
        if abs(ref) <= 1e-6 * scale:
            near += 1  # too close to the boundary for a floating-point verdict
            continue
        decided += 1
        res = lp_feasible(build_halfspaces(steps))
        agree += res.feasible == (ref <= 0)
        if res.feasible:
            feasible += 1
            w = res.witness
            gap = np.linalg.norm(w - points[1:], axis=1) - np.linalg.norm(w - points[:-1], axis=1)
            bad_witness += bool((gap > 1e-7 * scale).any())
    out = [
        PropertyResult("lp verdict vs reference LP", agree == decided,
                       f"{agree}/{decided} agree ({feasible} feasible, {near} boundary cases redrawn)"),
        PropertyResult("lp witnesses satisfy the distance conditions", bad_witness == 0,
                       f"{bad_witness} bad witnesses"),
    ]

    # pointwise: halfspace membership equals the distance condition
    steps = random_window(rng, 3, 5)
    system: HalfspaceSystem = build_halfspaces(steps)
    pts = np.array([s.multipliers for s in steps] + [steps[-1].next_multipliers])
    lam = rng.normal(size=(samples, 3)) * 3.0
    half = (system.offsets[None, :] - lam @ system.normals.T <= 0).all(axis=1)
    dist = np.linalg.norm(lam[:, None, :] - pts[None, 1:], axis=2) <= np.linalg.norm(lam[:, None, :] - pts[None, :-1], axis=2)
    out.append(PropertyResult("halfspace vs distance membership", bool((half == dist.all(axis=1)).all()),
                              f"{samples} samples, {int(half.sum())} inside"))

    # Apollonius balls: membership equals the contracted distance ratio
    prev, nxt = rng.normal(size=3), rng.normal(size=3)
    mismatches = 0
    for c in (0.0, 0.3, 0.7, 0.95):
        center, radius = apollonius_ball(prev, nxt, c)
        inside = np.linalg.norm(lam - center, axis=1) <= radius
        ratio = np.linalg.norm(lam - nxt, axis=1) <= c * np.linalg.norm(lam - prev, axis=1)
        mismatches += int((inside != ratio).sum())
    out.append(PropertyResult("ball vs distance-ratio membership", mismatches == 0,
                              f"{4 * samples} samples, {mismatches} mismatches"))
    return out


def suite_level_overestimate(gammas=CRITERION1_GAMMAS, max_iters: int = 1000) -> list[PropertyResult]:
    """Every level produced by a detector firing on Example 1 lies above q*."""
    q_star, _ = grid_dual_max(example1())
    out = []
    for gamma in gammas:
        res = execute(RunConfig(instance="example1", gamma=gamma, s0=0.1, lambda0=0.0, max_iters=max_iters))
        levels = [e.level for e in res.trace.level_events if e.kind == "fired"]
        low = min(levels) - q_star if levels else float("nan")
        ok = bool(levels) and all(v > q_star for v in levels)
        out.append(PropertyResult(f"levels above q*, gamma={gamma}", ok,
                                  f"{len(levels)} firings, min level - q* = {low:.3e}"))
    return out


def suite_oracle_parity(instances: int = 100, iterations: int = 500, seed: int = 0,
                        floor: float = 0.6) -> list[PropertyResult]:
    """Repaired costs against exact optima on small random GAPs."""
    rng = np.random.default_rng(seed)
    below = failed = equal = done = skipped = 0
    while done < instances:
        M = int(rng.integers(2, 4))
        N = int(rng.integers(4, 11))
        inst = generate_type_d(M, N, seed=int(rng.integers(2**31)))
        if len(inst.unhostable_jobs()):
            skipped += 1
            continue
        opt = gap_branch_and_bound(inst)
        if not opt.feasible:
            skipped += 1
            continue
        loaded = LoadedInstance(inst.name, gap_to_separable(inst), inst)
        tr = run(loaded.problem, EngineConfig(Slblr(), s0=0.5, lambda0=0.0, max_iters=iterations,
                                              exact_every=M))
        rep = repair_run(loaded, tr)
        done += 1
        if not rep.feasible:
            failed += 1
            continue
        below += rep.cost < opt.value
        equal += rep.cost == opt.value
    return [
        PropertyResult("upper bound >= optimum", below == 0 and failed == 0,
                       f"{instances} instances, {below} below optimum, {failed} repair failures"),
        PropertyResult("upper bound = optimum", equal >= floor * instances,
                       f"{equal}/{instances} optimal (floor {floor:.0%}; {skipped} infeasible draws skipped)"),
    ]


SUITES = {
    "theorem1": suite_theorem1,
    "detector-equivalence": suite_detector_equivalence,
    "level-overestimate": suite_level_overestimate,
    "oracle-parity": suite_oracle_parity,
}


def run_suite(name: str, **kw) -> list[PropertyResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name](**kw)
