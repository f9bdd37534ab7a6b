"""Dense simplex for the halfspace feasibility program.

Solves ``min t s.t. a_r . lam + t >= c_r, t >= -1`` in standard form with
``u = t + 1``:

    min u   s.t.  R y+ - R y- + u - s = c + 1,   y+, y-, u, s >= 0

where ``R`` are the normals expressed in an orthonormal basis of their row
space. The basis ``{u in the row of largest offset, surplus elsewhere}`` is
feasible from the start, so no phase 1 is needed.

Pivoting: the most negative reduced cost enters until ``bland_after``
consecutive degenerate pivots, after which Bland's smallest-index rule is
used until progress resumes, so the method cannot cycle. The tableau is
rebuilt from the original data every ``refactor_every`` pivots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    pass


@dataclass
class Phase1Result:
    t: float  # value of t at termination (optimal unless stopped early)
    witness: np.ndarray
    pivots: int
    optimal: bool


class _Tableau:
    def __init__(self, A, b, cost, basis, refactor_every):
        self.A, self.b, self.cost = A, b, cost
        self.basis = basis
        self.refactor_every = refactor_every
        self.refactor()

    def refactor(self):
        sol = np.linalg.solve(self.A[:, self.basis], np.column_stack([self.A, self.b]))
        self.body = sol[:, :-1]
        self.rhs = np.maximum(sol[:, -1], 0.0)
        self.obj = self.cost - self.cost[self.basis] @ self.body
        self.since = 0

    def pivot(self, row, col):
        piv = self.body[row, col]
        self.body[row] /= piv
        self.rhs[row] /= piv
        colv = self.body[:, col].copy()
        colv[row] = 0.0
        self.body -= np.outer(colv, self.body[row])
        self.rhs -= colv * self.rhs[row]
        np.maximum(self.rhs, 0.0, out=self.rhs)
        self.obj -= self.obj[col] * self.body[row]
        self.basis[row] = col
        self.since += 1
        if self.since >= self.refactor_every:
            self.refactor()

    def value_of(self, col) -> float:
        hit = np.flatnonzero(self.basis == col)
        return float(self.rhs[hit[0]]) if len(hit) else 0.0


def phase1_min_t(normals, offsets, stop_at: float | None = None, tol: float = 1e-9, max_pivots: int | None = None,
                 refactor_every: int = 50, bland_after: int = 30) -> Phase1Result:
    """Minimize t over ``normals . lam + t >= offsets, t >= -1``.

    With ``stop_at`` set, pivoting stops once t <= stop_at, since the basic
    solution is then already a witness of feasibility.
    """
    N = np.asarray(normals, dtype=float)
    c = np.asarray(offsets, dtype=float)
    r, m = N.shape
    # only the component of lam in the row space of the normals matters
    _, S, Vt = np.linalg.svd(N, full_matrices=False)
    rank = int((S > 1e-12 * S[0]).sum()) if len(S) and S[0] > 0 else 0
    Q = Vt[:rank].T
    R = N @ Q
    p = rank
    ucol = 2 * p
    A = np.hstack([R, -R, np.ones((r, 1)), -np.eye(r)])
    b = c + 1.0
    cost = np.zeros(A.shape[1])
    cost[ucol] = 1.0
    basis = ucol + 1 + np.arange(r)
    top = int(np.argmax(b))
    if b[top] > 0:
        basis[top] = ucol
    tab = _Tableau(A, b, cost, basis, refactor_every)
    if max_pivots is None:
        max_pivots = 50 * (r + A.shape[1])
    scale = 1.0 + np.abs(b).max()
    pivots = degenerate_run = 0
    optimal = False
    while True:
        if stop_at is not None and tab.value_of(ucol) - 1.0 <= stop_at:
            break
        cand = np.flatnonzero(tab.obj < -tol)
        if len(cand) == 0:
            optimal = True
            break
        if pivots >= max_pivots:
            raise SimplexError(f"simplex pivot cap {max_pivots} exceeded (rows={r}, dim={m})")
        if degenerate_run >= bland_after:
            col = int(cand[0])
        else:
            col = int(cand[np.argmin(tab.obj[cand])])
        column = tab.body[:, col]
        pos = column > tol
        if not pos.any():
            raise SimplexError("phase-1 program unbounded below -1; this cannot happen")
        ratios = np.full(r, np.inf)
        ratios[pos] = tab.rhs[pos] / column[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + tol * (1.0 + abs(rmin)))
        row = int(ties[np.argmin(tab.basis[ties])])
        degenerate_run = degenerate_run + 1 if tab.rhs[row] <= tol * scale else 0
        tab.pivot(row, col)
        pivots += 1
    tab.refactor()
    x = np.zeros(A.shape[1])
    x[tab.basis] = tab.rhs
    y = x[:p] - x[p:2 * p]
    return Phase1Result(float(x[ucol] - 1.0), Q @ y, pivots, optimal)
