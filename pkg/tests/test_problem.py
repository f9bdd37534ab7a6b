import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from slblr.problem import (
    LE, CompositeSolution, DimensionError, GapInstance, GapParseError, GapValidationError, constraint_violation,
    evaluate_lagrangian, example1, format_orlib_gap, gap_to_separable, generate_type_d, parse_orlib_gap,
)
from slblr.solvers import exact_primal_oracle, gap_branch_and_bound


def small_gap(seed=0, M=2, N=5):
    return generate_type_d(M, N, seed)


def composite_from_assignment(problem, inst, assign_matrix):
    return CompositeSolution(problem, [assign_matrix[:, j].astype(float) for j in range(inst.num_machines)])


# ---------------------------------------------------------------- parser

def test_parse_minimal_file():
    text = "1\n2 3\n1 2 3 4 5 6\n1 1 1 1 1 1\n5 5\n"
    (inst,) = parse_orlib_gap(text)
    assert inst.num_machines == 2 and inst.num_jobs == 3
    # machine-major in the file, job-major in memory
    assert inst.cost[:, 0].tolist() == [1, 2, 3]
    assert inst.cost[:, 1].tolist() == [4, 5, 6]
    assert inst.capacity.tolist() == [5, 5]


def test_parse_truncated_names_missing_field():
    with pytest.raises(GapParseError, match="expected 6 cost entries"):
        parse_orlib_gap("1 2 3")


def test_parse_negative_entry_rejected():
    with pytest.raises(GapValidationError):
        parse_orlib_gap("1\n1 1\n-1\n1\n1\n")


def test_parse_trailing_integers_strict_only():
    text = "1\n1 1\n3\n1\n1\n7\n"
    with pytest.raises(GapParseError, match="trailing"):
        parse_orlib_gap(text)
    assert len(parse_orlib_gap(text, strict=False)) == 1


def test_parse_lenient_ignores_comments():
    text = "# header\n1\n1 2 # dims\n3 4\n1 1\n2\n"
    (inst,) = parse_orlib_gap(text, strict=False)
    assert inst.cost[:, 0].tolist() == [3, 4]


def test_unhostable_job_rejected():
    with pytest.raises(GapValidationError):
        parse_orlib_gap("1\n1 1\n3\n5\n4\n")


def test_bundled_d05100_dimensions():
    from slblr.instances import resolve_instance
    loaded = resolve_instance("d05100")
    assert (loaded.gap.num_machines, loaded.gap.num_jobs) == (5, 100)
    assert loaded.problem.num_blocks == 5 and loaded.problem.num_rows == 100


@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 12))
@settings(max_examples=30, deadline=None)
def test_roundtrip_reproduces_integer_sequence(seed, M, N):
    inst = generate_type_d(M, N, seed)
    if len(inst.unhostable_jobs()):
        return
    text = format_orlib_gap([inst])
    (back,) = parse_orlib_gap(text)
    assert format_orlib_gap([back]) == text
    assert np.array_equal(back.cost, inst.cost) and np.array_equal(back.resource, inst.resource)


# ---------------------------------------------------------------- separable form

def test_gap_to_separable_dimensions():
    inst = GapInstance(np.array([[1, 2], [3, 4], [5, 6]]), np.ones((3, 2), int), np.array([3, 3]))
    prob = gap_to_separable(inst)
    assert prob.num_blocks == 2 and prob.num_rows == 3
    assert prob.equality_mask.all()


def test_every_coupling_row_has_one_entry_per_machine():
    inst = small_gap(3, M=3, N=7)
    prob = gap_to_separable(inst)
    A = sp.hstack([b.coupling for b in prob.blocks]).toarray()
    assert ((A != 0).sum(axis=1) == 3).all()


@pytest.mark.parametrize("picks, expected", [(1, 0.0), (0, -1.0), (2, 1.0)])
def test_violation_counts_assignments(picks, expected):
    inst = GapInstance(np.ones((2, 2), int), np.ones((2, 2), int), np.array([2, 2]))
    prob = gap_to_separable(inst, orientation="assignment")
    x = np.zeros((2, 2))
    x[1, 0] = 1
    x[0, :picks] = 1
    g = constraint_violation(prob, composite_from_assignment(prob, inst, x))
    assert g[0] == expected and g[1] == 0.0


def test_example1_all_zero_lagrangian():
    prob = example1()
    comp = CompositeSolution(prob, [np.zeros(1)] * 6)
    # >= rows are negated to <=, so the violated zero solution has violation (26, 16)
    assert constraint_violation(prob, comp).tolist() == [26.0, 16.0]
    assert evaluate_lagrangian(prob, comp, np.zeros(2)) == 0.0
    assert evaluate_lagrangian(prob, comp, np.array([1.0, 1.0])) == pytest.approx(42.0)


def test_lagrangian_at_zero_multipliers_is_objective():
    inst = small_gap(1)
    prob = gap_to_separable(inst)
    x = np.zeros((inst.num_jobs, inst.num_machines))
    comp = composite_from_assignment(prob, inst, x)
    assert evaluate_lagrangian(prob, comp, np.zeros(prob.num_rows)) == comp.objective()


def test_feasible_solution_ignores_multipliers():
    inst = GapInstance(np.array([[1, 2], [3, 4]]), np.ones((2, 2), int), np.array([2, 2]))
    prob = gap_to_separable(inst)
    x = np.array([[1, 0], [0, 1]], dtype=float)
    comp = composite_from_assignment(prob, inst, x)
    for lam in (np.zeros(2), np.array([5.0, -3.0])):
        assert evaluate_lagrangian(prob, comp, lam) == 5.0


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_dual_term_is_bilinear(seed):
    rng = np.random.default_rng(seed)
    inst = generate_type_d(int(rng.integers(2, 4)), int(rng.integers(1, 8)), seed)
    if len(inst.unhostable_jobs()):
        return
    prob = gap_to_separable(inst)
    parts = []
    for b in prob.blocks:
        x = np.zeros(b.size)
        # any locally feasible point: take items greedily in random order
        cap = b.local.capacity
        for i in rng.permutation(b.size):
            if b.local.weights[i] <= cap:
                x[i] = 1
                cap -= b.local.weights[i]
        parts.append(x)
    comp = CompositeSolution(prob, parts)
    lam = rng.normal(size=prob.num_rows) * 10
    lhs = evaluate_lagrangian(prob, comp, lam) - evaluate_lagrangian(prob, comp, np.zeros_like(lam))
    assert lhs == pytest.approx(lam @ constraint_violation(prob, comp), abs=1e-9)


def test_composite_shape_and_local_feasibility():
    prob = example1()
    with pytest.raises(DimensionError):
        CompositeSolution(prob, [np.zeros(2)] + [np.zeros(1)] * 5)
    assert not CompositeSolution(prob, [np.array([99.0])] + [np.zeros(1)] * 5).is_locally_feasible()
    assert CompositeSolution(prob).is_locally_feasible()


def test_example1_structure():
    prob = example1()
    assert prob.num_blocks == 6 and prob.num_rows == 2
    assert prob.senses == (LE, LE)


@pytest.mark.parametrize("seed", range(6))
def test_separable_optimum_matches_gap_optimum(seed):
    inst = generate_type_d(2, 6, seed)
    if len(inst.unhostable_jobs()):
        pytest.skip("unhostable draw")
    direct = gap_branch_and_bound(inst)
    sep = exact_primal_oracle(gap_to_separable(inst))
    assert direct.status == sep.status
    if direct.feasible:
        assert direct.value == sep.value


def test_brute_force_gap_matches_branch_and_bound():
    inst = generate_type_d(3, 6, 11)
    best = None
    for a in itertools.product(range(3), repeat=6):
        a = np.array(a)
        if inst.is_feasible(a):
            c = inst.assignment_cost(a)
            best = c if best is None else min(best, c)
    res = gap_branch_and_bound(inst)
    assert (best is None and not res.feasible) or res.value == best
