"""Independent reference values for tests (HiGHS via scipy)."""

import itertools

import numpy as np
from scipy.optimize import linprog


def gap_lagrangian_dual(inst) -> float:
    """Optimal value of the dual obtained by relaxing the assignment rows.

    It equals the LP over the convex hulls of the machine knapsacks, written
    with one column per feasible subset of jobs on each machine.
    """
    N, M = inst.num_jobs, inst.num_machines
    cols, costs = [], []
    for j in range(M):
        for bits in itertools.product((0, 1), repeat=N):
            x = np.array(bits)
            if inst.resource[:, j] @ x <= inst.capacity[j]:
                col = np.zeros(N + M)
                col[:N] = x
                col[N + j] = 1.0
                cols.append(col)
                costs.append(float(inst.cost[:, j] @ x))
    A = np.array(cols).T
    b = np.ones(N + M)
    res = linprog(costs, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(res.message)
    return float(res.fun)
