import numpy as np
import pytest

from slblr.engine import EngineConfig, run
from slblr.problem import CompositeSolution, GapInstance, example1, gap_to_separable, generate_type_d
from slblr.repair import (
    BoundViolation, MetricUnavailable, RepairBudget, best_gap_repair, gap_metrics, greedy_regret, local_search,
    repair_cover, repair_gap,
)
from slblr.solvers import gap_branch_and_bound
from slblr.stepsize import Slblr


def onehot(assign, M):
    x = np.zeros((len(assign), M), dtype=int)
    for j, m in enumerate(assign):
        if m >= 0:
            x[j, m] = 1
    return x


def feasible_gap(M, N, seed):
    """First type-D draw from ``seed`` upward that has a feasible assignment."""
    while True:
        inst = generate_type_d(M, N, seed)
        if not len(inst.unhostable_jobs()):
            opt = gap_branch_and_bound(inst)
            if opt.feasible:
                return inst, opt
        seed += 1000


def test_feasible_composite_unchanged():
    inst = GapInstance(np.array([[1, 2], [3, 4], [5, 1]]), np.ones((3, 2), int), np.array([2, 2]))
    x = onehot([1, 0, 1], 2)  # deliberately not the cheapest choice for job 0
    rep = repair_gap(inst, x)
    assert rep.feasible and rep.method == "unchanged" and rep.adjusted == 0
    assert rep.assignment.tolist() == [1, 0, 1] and rep.cost == 2 + 3 + 1


def test_duplicate_job_keeps_cheaper_copy():
    inst = GapInstance(np.array([[4, 7], [2, 9], [9, 3]]), np.ones((3, 2), int), np.array([3, 3]))
    x = onehot([0, 0, 1], 2)
    x[0, 1] = 1  # job 0 on both machines
    rep = repair_gap(inst, x)
    assert rep.feasible and rep.adjusted == 1
    assert rep.assignment.tolist() == [0, 0, 1] and rep.cost == 4 + 2 + 3


def test_composite_input_accepted():
    inst = generate_type_d(2, 5, 0)
    prob = gap_to_separable(inst)
    rep = repair_gap(inst, CompositeSolution(prob))  # nothing assigned
    assert rep.feasible and inst.is_feasible(rep.assignment) and rep.conflicted == inst.num_jobs


def test_shape_mismatch_rejected():
    inst = generate_type_d(2, 5, 0)
    with pytest.raises(ValueError):
        repair_gap(inst, np.zeros((4, 2)))


@pytest.mark.parametrize("seed", range(12))
def test_random_3x10_repair_bounded_by_optimum(seed):
    inst, opt = feasible_gap(3, 10, 100 + seed)
    prob = gap_to_separable(inst)
    tr = run(prob, EngineConfig(Slblr(), s0=0.5, lambda0=float(inst.cost.mean()), max_iters=300, exact_every=3))
    rep = best_gap_repair(inst, [tr.certified_composite, tr.final_composite, *tr.exact_pool])
    assert rep.feasible and inst.is_feasible(rep.assignment)
    assert rep.cost >= opt.value
    assert tr.certified_dual <= opt.value + 1e-9


def test_conflict_free_optimal_assignment_is_kept():
    inst, opt = feasible_gap(3, 10, 7)
    rep = repair_gap(inst, onehot(opt.solution, 3))
    assert rep.conflicted == 0 and rep.cost == opt.value


@pytest.mark.parametrize("seed", range(10))
def test_repair_never_worse_than_greedy(seed):
    rng = np.random.default_rng(seed)
    inst, opt = feasible_gap(3, 12, 200 + seed)
    base = opt.solution
    x = onehot(base, 3)
    x[rng.choice(12, size=4, replace=False)] = 0  # unassigned jobs; the clean rest still fits
    clean = x.sum(axis=1) == 1
    load = np.zeros(3, dtype=np.int64)
    for j in np.flatnonzero(clean):
        load[base[j]] += inst.resource[j, base[j]]
    jobs = np.flatnonzero(~clean)
    greedy = greedy_regret(inst, jobs, inst.capacity - load)
    rep = repair_gap(inst, x)
    assert rep.feasible and rep.evicted == 0  # the optimum itself completes the residual
    if greedy is not None:
        full = base.copy()
        full[jobs] = greedy
        assert rep.cost <= inst.assignment_cost(full)
    # the residual solve is exact, so the optimum is recovered
    assert rep.cost == opt.value


def test_local_search_never_increases_cost():
    inst = generate_type_d(4, 20, 3)
    rep = repair_gap(inst, np.zeros((20, 4), int))
    improved, moves = local_search(inst, rep.assignment)
    assert inst.is_feasible(improved)
    assert inst.assignment_cost(improved) <= rep.cost
    polished = repair_gap(inst, np.zeros((20, 4), int), RepairBudget(local_search=True))
    assert polished.cost == inst.assignment_cost(improved) or polished.cost <= rep.cost


def test_duplicate_copy_that_does_not_fit_is_skipped():
    # job 1 is cheaper on machine 0, but machine 0 is already full with job 0
    inst = GapInstance(np.array([[1, 9], [1, 4]]), np.full((2, 2), 2), np.array([2, 2]))
    x = np.array([[1, 0], [1, 1]])
    rep = repair_gap(inst, x)
    assert rep.feasible and rep.evicted == 0
    assert rep.assignment.tolist() == [0, 1] and rep.cost == 5


def test_overloaded_clean_jobs_are_evicted():
    # every job sits cleanly on machine 0, which can hold only one of them
    inst = GapInstance(np.array([[1, 5], [1, 5], [1, 5]]), np.full((3, 2), 2), np.array([2, 4]))
    rep = repair_gap(inst, onehot([0, 0, 0], 2))
    assert rep.feasible and inst.is_feasible(rep.assignment)
    assert rep.cost == 1 + 5 + 5


def test_infeasible_instance_reports_failure():
    inst = GapInstance(np.ones((3, 2), int), np.full((3, 2), 2), np.array([2, 2]))
    rep = repair_gap(inst, onehot([0, 0, 1], 2))
    assert not rep.feasible and rep.method == "failed" and rep.cost is None


# ---------------------------------------------------------------- metrics

def test_gap_zero_when_bounds_meet():
    assert gap_metrics(100.0, 100.0) == 0.0


def test_gap_table_row():
    assert gap_metrics(97825.0, 97821.4) == 0.0037


def test_gap_bound_violation():
    with pytest.raises(BoundViolation):
        gap_metrics(10.0, 10.5)


def test_gap_needs_certified_bound():
    class NoBound:
        best_dual = None
    with pytest.raises(MetricUnavailable):
        gap_metrics(10.0, NoBound())


def test_report_dict_rounds_percent():
    inst = GapInstance(np.array([[1, 2]]), np.ones((1, 2), int), np.array([1, 1]))
    rep = repair_gap(inst, onehot([0], 2)).with_bound(0.75)
    assert rep.to_dict()["gap_percent"] == 25.0


# ---------------------------------------------------------------- Example 1

def test_repair_cover_feasible_and_not_below_optimum():
    prob = example1()
    tr = run(prob, EngineConfig(Slblr(gamma=0.1), s0=0.1, max_iters=300))
    rep = repair_cover(prob, tr.final_composite)
    assert rep.feasible
    x = rep.assignment
    A = np.hstack([b.coupling.toarray() for b in prob.blocks])
    assert (A @ x <= prob.rhs + 1e-9).all()
    assert ((x >= 0) & (x <= 26)).all()
    assert rep.cost >= tr.certified_dual - 1e-9
