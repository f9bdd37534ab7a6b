"""Separable MILP model, GAP instances and the OR-library GAP format."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

EQ = "E"
LE = "L"
GE = "G"


class GapParseError(ValueError):
    pass


class GapValidationError(ValueError):
    pass


class DimensionError(ValueError):
    pass


# --------------------------------------------------------------------------
# Local feasible sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KnapsackSet:
    """{x in {0,1}^n : weights . x <= capacity}."""

    weights: np.ndarray
    capacity: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.int64)
        if w.ndim != 1:
            raise DimensionError("knapsack weights must be a vector")
        if (w < 0).any() or self.capacity < 0:
            raise GapValidationError("knapsack weights and capacity must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "capacity", int(self.capacity))

    @property
    def size(self) -> int:
        return len(self.weights)

    def count(self) -> int:
        return 2 ** self.size

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x)
        return bool(np.isin(x, (0, 1)).all() and int(self.weights @ x.astype(np.int64)) <= self.capacity)

    def enumerate(self) -> Iterator[np.ndarray]:
        n = self.size
        for mask in range(2 ** n):
            x = np.array([(mask >> i) & 1 for i in range(n)], dtype=float)
            if self.weights @ x <= self.capacity:
                yield x


@dataclass(frozen=True)
class BoxSet:
    """Integer box lower <= x <= upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("box bounds must be vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if (lo > hi).any():
            raise ValueError("lower bound above upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def size(self) -> int:
        return len(self.lower)

    def count(self) -> int:
        return int(np.prod(self.upper - self.lower + 1))

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool((x == np.round(x)).all() and (x >= self.lower).all() and (x <= self.upper).all())

    def enumerate(self) -> Iterator[np.ndarray]:
        ranges = [np.arange(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)]
        for point in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(self.size, -1).T:
            yield point.astype(float)


@dataclass(frozen=True)
class Block:
    """One subproblem: objective, coupling columns and local feasible set."""

    cost: np.ndarray
    coupling: sp.csc_matrix
    local: KnapsackSet | BoxSet
    name: str = ""

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        coupling = sp.csc_matrix(self.coupling, dtype=float)
        if cost.ndim != 1 or coupling.shape[1] != len(cost) or self.local.size != len(cost):
            raise DimensionError(f"block {self.name!r}: inconsistent variable counts")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "_coupling_t", coupling.T.tocsr())

    @property
    def size(self) -> int:
        return len(self.cost)

    def reduced_costs(self, multipliers: np.ndarray) -> np.ndarray:
        return self.cost + self._coupling_t @ multipliers

    def activity(self, x: np.ndarray) -> np.ndarray:
        return self.coupling @ x


@dataclass(frozen=True)
class SeparableProblem:
    """min sum_i c_i.x_i  s.t.  sum_i A_i x_i (sense) b,  x_i in F_i.

    Rows are stored normalized: ``E`` rows are equalities, ``L`` rows are
    less-equal. Greater-equal input rows are negated by :meth:`build`.
    """

    blocks: tuple[Block, ...]
    rhs: np.ndarray
    senses: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        rhs = np.asarray(self.rhs, dtype=float)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "senses", tuple(self.senses))
        if not self.blocks:
            raise ValueError("a separable problem needs at least one block")
        m = len(rhs)
        if len(self.senses) != m:
            raise DimensionError("one sense per coupling row required")
        if any(s not in (EQ, LE) for s in self.senses):
            raise ValueError("senses must be normalized to 'E' or 'L'")
        touched = np.zeros(m, dtype=int)
        for b in self.blocks:
            if b.coupling.shape[0] != m:
                raise DimensionError(f"block {b.name!r}: expected {m} coupling rows")
            touched += (abs(b.coupling).sum(axis=1).A1 > 0).astype(int)
        if m and (touched < 2).any():
            r = int(np.flatnonzero(touched < 2)[0])
            raise ValueError(f"coupling row {r} touches fewer than two subproblems")

    @classmethod
    def build(cls, blocks: Sequence[Block], rhs, senses: Sequence[str], name: str = "") -> "SeparableProblem":
        """Construct from rows with senses in {E, L, G}; G rows are negated."""
        rhs = np.array(rhs, dtype=float)
        flip = np.array([s == GE for s in senses])
        if flip.any():
            d = sp.diags(np.where(flip, -1.0, 1.0))
            blocks = [Block(b.cost, d @ b.coupling, b.local, b.name) for b in blocks]
            rhs = np.where(flip, -rhs, rhs)
        norm = tuple(LE if s in (LE, GE) else EQ for s in senses)
        return cls(tuple(blocks), rhs, norm, name)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def num_rows(self) -> int:
        return len(self.rhs)

    @property
    def equality_mask(self) -> np.ndarray:
        return np.array([s == EQ for s in self.senses], dtype=bool)


# --------------------------------------------------------------------------
# Composite solution
# --------------------------------------------------------------------------


class CompositeSolution:
    """Latest solution of every subproblem plus cached contributions.

    Mutable; owned by a single engine run.
    """

    def __init__(self, problem: SeparableProblem, parts: Sequence[np.ndarray] | None = None):
        self.problem = problem
        I = problem.num_blocks
        if parts is None:
            parts = [np.asarray(b.local.lower if isinstance(b.local, BoxSet) else np.zeros(b.size), dtype=float)
                     for b in problem.blocks]
        if len(parts) != I:
            raise DimensionError(f"expected {I} subproblem solutions, got {len(parts)}")
        self.parts: list[np.ndarray] = [None] * I  # type: ignore[list-item]
        self.objectives = np.zeros(I)
        self.activities = np.zeros((I, problem.num_rows))
        self.staleness = np.zeros(I, dtype=int)
        for i, x in enumerate(parts):
            self._store(i, np.asarray(x, dtype=float))

    def _store(self, i: int, x: np.ndarray) -> None:
        block = self.problem.blocks[i]
        if x.shape != (block.size,):
            raise DimensionError(f"subproblem {i}: expected {block.size} variables, got {x.shape}")
        self.parts[i] = x
        self.objectives[i] = float(block.cost @ x)
        self.activities[i] = block.activity(x)

    def replace(self, i: int, x: np.ndarray) -> None:
        self._store(i, np.asarray(x, dtype=float))
        self.staleness[i] = 0

    def age(self) -> None:
        self.staleness += 1

    def copy(self) -> "CompositeSolution":
        new = CompositeSolution.__new__(CompositeSolution)
        new.problem = self.problem
        new.parts = list(self.parts)
        new.objectives = self.objectives.copy()
        new.activities = self.activities.copy()
        new.staleness = self.staleness.copy()
        return new

    def objective(self) -> float:
        return float(self.objectives.sum())

    def activity(self) -> np.ndarray:
        return self.activities.sum(axis=0)

    def vector(self) -> np.ndarray:
        return np.concatenate(self.parts)

    def is_locally_feasible(self) -> bool:
        return all(b.local.contains(x) for b, x in zip(self.problem.blocks, self.parts))


def _check(problem: SeparableProblem, solution: CompositeSolution) -> None:
    if solution.problem is not problem and (
        solution.problem.num_blocks != problem.num_blocks or solution.problem.num_rows != problem.num_rows
    ):
        raise DimensionError("solution does not match problem dimensions")


def constraint_violation(problem: SeparableProblem, solution: CompositeSolution) -> np.ndarray:
    """Row activity minus right-hand side, in the normalized senses."""
    _check(problem, solution)
    return solution.activity() - problem.rhs


def evaluate_lagrangian(problem: SeparableProblem, solution: CompositeSolution, multipliers) -> float:
    """L(x, lambda) = objective + lambda . violation at a given (not necessarily optimal) x."""
    _check(problem, solution)
    lam = np.asarray(multipliers, dtype=float)
    if lam.shape != (problem.num_rows,):
        raise DimensionError(f"expected {problem.num_rows} multipliers, got {lam.shape}")
    return solution.objective() + float(lam @ constraint_violation(problem, solution))


# --------------------------------------------------------------------------
# GAP
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GapInstance:
    """Min-cost GAP stored job-major: ``cost[i, j]`` is job i on machine j."""

    cost: np.ndarray
    resource: np.ndarray
    capacity: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=np.int64)
        a = np.asarray(self.resource, dtype=np.int64)
        b = np.asarray(self.capacity, dtype=np.int64)
        if c.ndim != 2 or a.shape != c.shape or b.shape != (c.shape[1],):
            raise GapValidationError(
                f"inconsistent GAP dimensions: cost {c.shape}, resource {a.shape}, capacity {b.shape}")
        if (c < 0).any() or (a < 0).any() or (b < 0).any():
            raise GapValidationError("GAP entries must be nonnegative")
        for arr in (c, a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "resource", a)
        object.__setattr__(self, "capacity", b)

    @property
    def num_jobs(self) -> int:
        return self.cost.shape[0]

    @property
    def num_machines(self) -> int:
        return self.cost.shape[1]

    def unhostable_jobs(self) -> np.ndarray:
        return np.flatnonzero(~(self.resource <= self.capacity).any(axis=1))

    def validate_hostable(self) -> None:
        bad = self.unhostable_jobs()
        if len(bad):
            raise GapValidationError(f"job {int(bad[0])} fits on no machine")

    def assignment_cost(self, assign: np.ndarray) -> int:
        """Cost of a job->machine assignment vector."""
        return int(self.cost[np.arange(self.num_jobs), assign].sum())

    def is_feasible(self, assign: np.ndarray) -> bool:
        assign = np.asarray(assign)
        if assign.shape != (self.num_jobs,) or (assign < 0).any() or (assign >= self.num_machines).any():
            return False
        load = np.bincount(assign, weights=self.resource[np.arange(self.num_jobs), assign],
                           minlength=self.num_machines)
        return bool((load <= self.capacity).all())


_INT = re.compile(r"[+-]?\d+")


def _tokens(text: str, strict: bool) -> list[int]:
    if strict:
        out = []
        for tok in text.split():
            if not _INT.fullmatch(tok):
                raise GapParseError(f"non-integer token {tok!r}")
            out.append(int(tok))
        return out
    cleaned = "\n".join(line.split("#", 1)[0] for line in text.splitlines())
    return [int(t) for t in _INT.findall(cleaned)]


def parse_orlib_gap(text: str, strict: bool = True, names: Sequence[str] | None = None) -> list[GapInstance]:
    """Parse an OR-library GAP file (count, then per problem M, N, costs, resources, capacities).

    Costs and resources are machine-major in the file and stored job-major.
    ``strict=False`` ignores ``#`` comments and trailing tokens.
    """
    vals = _tokens(text, strict)
    pos = 0

    def take(n: int, what: str) -> np.ndarray:
        nonlocal pos
        if pos + n > len(vals):
            raise GapParseError(f"expected {n} {what}, found {len(vals) - pos}")
        chunk = np.array(vals[pos:pos + n], dtype=np.int64)
        pos += n
        return chunk

    count = int(take(1, "problem count")[0])
    if count < 0:
        raise GapValidationError("negative problem count")
    out = []
    for p in range(count):
        try:
            m, n = (int(v) for v in take(2, "dimension entries (M, N)"))
            if m <= 0 or n <= 0:
                raise GapValidationError(f"nonpositive dimensions M={m}, N={n}")
            cost = take(m * n, "cost entries").reshape(m, n).T
            res = take(m * n, "resource entries").reshape(m, n).T
            cap = take(m, "capacity entries")
        except GapParseError as exc:
            raise GapParseError(f"problem {p + 1}: {exc}") from None
        name = names[p] if names and p < len(names) else f"gap{p + 1}"
        inst = GapInstance(cost, res, cap, name=name)
        inst.validate_hostable()
        out.append(inst)
    if strict and pos != len(vals):
        raise GapParseError(f"{len(vals) - pos} trailing integers after {count} problems")
    return out


def format_orlib_gap(instances: Sequence[GapInstance], per_line: int = 12) -> str:
    """Inverse of :func:`parse_orlib_gap`."""
    lines = [str(len(instances))]

    def emit(values):
        values = [str(int(v)) for v in values]
        for s in range(0, len(values), per_line):
            lines.append(" " + " ".join(values[s:s + per_line]))

    for inst in instances:
        lines.append(f" {inst.num_machines} {inst.num_jobs}")
        for row in inst.cost.T:
            emit(row)
        for row in inst.resource.T:
            emit(row)
        emit(inst.capacity)
    return "\n".join(lines) + "\n"


def generate_type_d(machines: int, jobs: int, seed: int = 0, name: str | None = None) -> GapInstance:
    """Random GAP following the type-D recipe.

    a_ij ~ U{1..100}, c_ij = 111 - a_ij + e_ij with e_ij ~ U{-10..10},
    b_j = floor(0.8 * sum_i a_ij / M).
    """
    rng = np.random.default_rng(seed)
    a = rng.integers(1, 101, size=(jobs, machines))
    c = 111 - a + rng.integers(-10, 11, size=(jobs, machines))
    b = np.floor(0.8 * a.sum(axis=0) / machines).astype(np.int64)
    return GapInstance(c, a, b, name=name or f"typeD-{machines}x{jobs}-s{seed}")


def gap_to_separable(instance: GapInstance, orientation: str = "price") -> SeparableProblem:
    """Relax the assignment rows; one 0-1 knapsack block per machine.

    ``orientation="price"`` writes the coupling rows as ``1 - sum_j x_ij = 0`` so
    a multiplier is the price of its job and the machine-j reduced cost is
    ``g_ij - lambda_i``. ``orientation="assignment"`` writes ``sum_j x_ij - 1``.
    """
    if orientation not in ("price", "assignment"):
        raise ValueError(f"unknown orientation {orientation!r}")
    instance.validate_hostable()
    N, M = instance.num_jobs, instance.num_machines
    sign = -1.0 if orientation == "price" else 1.0
    eye = sp.identity(N, format="csc") * sign
    blocks = [
        Block(instance.cost[:, j].astype(float), eye,
              KnapsackSet(instance.resource[:, j], int(instance.capacity[j])), name=f"machine{j}")
        for j in range(M)
    ]
    return SeparableProblem(tuple(blocks), np.full(N, sign), (EQ,) * N, name=instance.name)


def assignment_matrix(composite: CompositeSolution) -> np.ndarray:
    """N x M 0/1 matrix of a GAP composite (column j = machine j's knapsack)."""
    return np.column_stack([np.rint(x).astype(np.int64) for x in composite.parts])


# --------------------------------------------------------------------------
# Example 1
# --------------------------------------------------------------------------

EXAMPLE1_COST = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
EXAMPLE1_ROWS = np.array([
    [1.0, 3.0, 5.0, 1.0, 3.0, 5.0],
    [2.0, 1.5, 5.0, 2.0, 0.5, 1.0],
])
EXAMPLE1_RHS = np.array([26.0, 16.0])
EXAMPLE1_LAMBDA_STAR = np.array([0.6, 0.0])


def example1(upper: int = 26) -> SeparableProblem:
    """Six integer variables, two >= coupling rows; one single-variable block each."""
    blocks = [
        Block(EXAMPLE1_COST[v:v + 1], sp.csc_matrix(EXAMPLE1_ROWS[:, v:v + 1]),
              BoxSet([0.0], [float(upper)]), name=f"x{v + 1}")
        for v in range(6)
    ]
    return SeparableProblem.build(blocks, EXAMPLE1_RHS, (GE, GE), name="example1")

