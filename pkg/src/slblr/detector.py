"""Multiplier-convergence feasibility detection and level inference.

A window of consecutive updates lambda^k -> lambda^{k+1} = lambda^k + s^k g^k is
consistent with convergence when some point lies closer to every
lambda^{k+1} than to the matching lambda^k. Each such condition is the
halfspace ``2 (lambda - lambda^k) . g^k >= s^k ||g^k||^2``. When no point
satisfies all of them, some step in the window overshot the Polyak bound,
which yields an overestimate of the optimal dual value.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import Phase1Result, phase1_min_t

log = logging.getLogger(__name__)


class BallSystemError(ValueError):
    pass


@dataclass(frozen=True)
class WindowStep:
    k: int
    multipliers: np.ndarray  # lambda^k
    direction: np.ndarray  # effective subgradient (lambda^{k+1} - lambda^k) / s^k
    stepsize: float
    value: float  # surrogate value L^k
    g_norm_sq: float  # squared norm of the raw surrogate subgradient

    @property
    def next_multipliers(self) -> np.ndarray:
        return self.multipliers + self.stepsize * self.direction


@dataclass
class DetectorWindow:
    start: int = 0
    level_index: int = 0
    steps: list[WindowStep] = field(default_factory=list)
    # halfspace rows of the steps with a nonzero direction, built on append
    normals: list[np.ndarray] = field(default_factory=list)
    offsets: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def append(self, step: WindowStep) -> None:
        self.steps.append(step)
        g = step.direction
        if np.any(g != 0):
            gg = float(g @ g)
            self.normals.append(2.0 * g)
            self.offsets.append(2.0 * float(step.multipliers @ g) + step.stepsize * gg)


@dataclass
class HalfspaceSystem:
    """Rows ``normals[r] . lam >= offsets[r]``."""

    normals: np.ndarray
    offsets: np.ndarray

    @property
    def rows(self) -> int:
        return len(self.offsets)

    def slack(self, lam) -> np.ndarray:
        return self.normals @ np.asarray(lam, dtype=float) - self.offsets


@dataclass
class BallSystem:
    """Rows ``||lam - centers[r]|| <= radii[r]``."""

    centers: np.ndarray
    radii: np.ndarray
    contraction: np.ndarray
    excluded: list[int] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return len(self.radii)


@dataclass
class Feasibility:
    feasible: bool
    witness: np.ndarray | None
    margin: float
    iterations: int = 0


@dataclass
class DetectorOutcome:
    fired: bool
    level: float | None = None
    reset_at: int | None = None
    margin: float = 0.0
    window_length: int = 0

    @classmethod
    def none(cls, length: int) -> "DetectorOutcome":
        return cls(False, window_length=length)


def _steps(window) -> list[WindowStep]:
    return window.steps if isinstance(window, DetectorWindow) else list(window)


def build_halfspaces(window) -> HalfspaceSystem:
    if isinstance(window, DetectorWindow) and window.normals:
        return HalfspaceSystem(np.array(window.normals), np.array(window.offsets))
    steps = [s for s in _steps(window) if np.any(s.direction != 0)]
    if not steps:
        m = len(_steps(window)[0].multipliers) if _steps(window) else 0
        return HalfspaceSystem(np.zeros((0, m)), np.zeros(0))
    G = np.array([s.direction for s in steps])
    lam = np.array([s.multipliers for s in steps])
    sv = np.array([s.stepsize for s in steps])
    normals = 2.0 * G
    offsets = 2.0 * np.einsum("ij,ij->i", lam, G) + sv * np.einsum("ij,ij->i", G, G)
    return HalfspaceSystem(normals, offsets)


def lp_feasible(system: HalfspaceSystem, eps: float | None = None, max_pivots: int | None = None) -> Feasibility:
    """Phase-1 test: min t s.t. normals . lam + t >= offsets.

    Feasible when the optimal t is at most ``eps``; otherwise t is returned
    as the infeasibility margin. t is bounded below by -1 so the program
    stays bounded; this does not change the sign of the optimum. Pivoting
    stops at the first witness, so for feasible systems the margin is the
    witness's largest violation rather than the optimal t.
    """
    N, c = system.normals, system.offsets
    r, m = N.shape
    if r == 0:
        return Feasibility(True, np.zeros(m), 0.0)
    eps = _eps(c) if eps is None else eps
    res = phase1_min_t(N, c, stop_at=eps, max_pivots=max_pivots)
    out = _verdict(system, res, eps)
    if not out.feasible and not res.optimal:
        out = _verdict(system, phase1_min_t(N, c, max_pivots=max_pivots), eps)
    return out


def _eps(offsets) -> float:
    return 1e-9 * (1.0 + np.abs(offsets).max())


def _verdict(system: HalfspaceSystem, res: Phase1Result, eps: float | None) -> Feasibility:
    c = system.offsets
    if eps is None:
        eps = _eps(c)
    # judge feasibility by the witness itself, not by the tableau value
    t_witness = float(np.max(c - system.normals @ res.witness))
    if t_witness <= eps:
        return Feasibility(True, res.witness, t_witness, res.pivots)
    # tableau and witness disagree only through round-off; report the larger
    return Feasibility(False, res.witness, max(res.t, t_witness) if res.t <= eps else res.t, res.pivots)


def compute_level(window, gamma: float, form: str = "inversion") -> float:
    """Largest per-step level: s ||g||^2 / gamma + L (or gamma s ||g||^2 + L as printed)."""
    steps = _steps(window)
    if not steps:
        raise ValueError("cannot compute a level from an empty window")
    if form == "inversion":
        return max(s.stepsize * s.g_norm_sq / gamma + s.value for s in steps)
    if form == "as-printed":
        return max(gamma * s.stepsize * s.g_norm_sq + s.value for s in steps)
    raise ValueError(f"unknown level form {form!r}")


def apollonius_ball(prev, nxt, c: float):
    """Ball {lam : ||lam - nxt|| <= c ||lam - prev||} for 0 <= c < 1."""
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    denom = 1.0 - c * c
    center = (nxt - c * c * prev) / denom
    radius = c * np.linalg.norm(nxt - prev) / denom
    return center, radius


def build_ball_system(window, nu: float) -> BallSystem:
    """Contracted conditions ||lam - lam^{k+1}|| <= sqrt(1 - 2 nu s^k) ||lam - lam^k||."""
    centers, radii, cs, excluded = [], [], [], []
    for idx, s in enumerate(_steps(window)):
        c2 = 1.0 - 2.0 * nu * s.stepsize
        if not 0.0 <= c2 < 1.0:
            excluded.append(idx)
            continue
        c = math.sqrt(c2)
        o, rad = apollonius_ball(s.multipliers, s.next_multipliers, c)
        centers.append(o)
        radii.append(rad)
        cs.append(c)
    if excluded:
        log.debug("ball system: excluded %d step(s) with 1 - 2*nu*s outside [0, 1)", len(excluded))
    if not centers:
        raise BallSystemError("nu too large for stepsizes: every step was excluded")
    return BallSystem(np.array(centers), np.array(radii), np.array(cs), excluded)


def _ball_violation(lam, balls: BallSystem | None, halfspaces: HalfspaceSystem | None):
    """max over rows of the signed violation and an index for its subgradient."""
    best, grad = -np.inf, None
    if balls is not None and balls.rows:
        d = balls.centers - lam
        dist = np.linalg.norm(d, axis=1)
        v = dist - balls.radii
        i = int(np.argmax(v))
        best = v[i]
        grad = -d[i] / dist[i] if dist[i] > 0 else np.zeros_like(lam)
    if halfspaces is not None and halfspaces.rows:
        norms = np.linalg.norm(halfspaces.normals, axis=1)
        v = (halfspaces.offsets - halfspaces.normals @ lam) / norms
        i = int(np.argmax(v))
        if v[i] > best:
            best = v[i]
            grad = -halfspaces.normals[i] / norms[i]
    return float(best), grad


def ball_feasible(system: BallSystem, halfspaces: HalfspaceSystem | None = None, iterations: int = 2000,
                  c0: float | None = None, eps: float = 1e-7, start=None) -> Feasibility:
    """Approximate feasibility of an intersection of balls by subgradient descent.

    Minimizes F(lam) = max_k (||lam - o_k|| - r_k) from the centroid of the
    centers with steps c0/sqrt(t). A "feasible" answer always carries a
    witness with F <= eps; "infeasible" can be wrong when T is too small.
    Optional halfspaces enter F as signed distances.
    """
    if system.rows == 0 and (halfspaces is None or halfspaces.rows == 0):
        raise ValueError("empty ball system")
    lam = system.centers.mean(axis=0) if start is None else np.array(start, dtype=float)
    if c0 is None:
        c0 = float(system.radii.max()) if system.rows else 1.0
        if c0 <= 0:
            c0 = 1.0
    best_val, grad = _ball_violation(lam, system, halfspaces)
    best = lam.copy()
    t = 0
    for t in range(1, iterations + 1):
        if best_val <= eps:
            break
        lam = lam - (c0 / math.sqrt(t)) * grad
        val, grad = _ball_violation(lam, system, halfspaces)
        if val < best_val:
            best_val, best = val, lam.copy()
    return Feasibility(best_val <= eps, best, best_val, t)


class LevelDetector:
    """Per-run detector state: window, last witness and level counter."""

    def __init__(self, gamma: float, variant: str = "linear", nu: float = 2.0, level_form: str = "inversion",
                 ball_iterations: int = 2000):
        if variant not in ("linear", "ball"):
            raise ValueError(f"unknown detector variant {variant!r}")
        self.gamma = gamma
        self.variant = variant
        self.nu = nu
        self.level_form = level_form
        self.ball_iterations = ball_iterations
        self.window = DetectorWindow()
        self.witness: np.ndarray | None = None
        self.seconds = 0.0
        self.checks = 0
        self.solves = 0
        self.lp_solves = 0

    def _still_feasible(self, step: WindowStep) -> bool:
        if self.witness is None:
            return False
        if self.variant == "linear":
            return bool((build_halfspaces([step]).slack(self.witness) >= 0).all())
        w = self.witness
        c2 = 1.0 - 2.0 * self.nu * step.stepsize
        if 0.0 <= c2 < 1.0:
            return bool(np.linalg.norm(w - step.next_multipliers) <= math.sqrt(c2) * np.linalg.norm(w - step.multipliers))
        return bool((build_halfspaces([step]).slack(w) >= 0).all())

    def _quick_witness(self, system: HalfspaceSystem, steps: int = 200) -> Feasibility | None:
        """Relaxation search for a witness before falling back to the LP.

        Starting from the last witness (or the newest multipliers), step past
        the most violated halfspace with over-relaxation. Any point found is
        checked against every row, so a hit is a genuine witness; a miss
        proves nothing and the LP decides.
        """
        if system.rows == 0:
            return None
        N, c = system.normals, system.offsets
        nn = np.einsum("ij,ij->i", N, N)
        eps = _eps(c)
        w = (self.witness if self.witness is not None else self.window.steps[-1].next_multipliers).copy()
        for _ in range(steps):
            viol = c - N @ w
            i = int(np.argmax(viol / np.sqrt(nn)))
            if viol[i] <= eps:
                return Feasibility(True, w, float(viol.max()), 0)
            w += 1.5 * viol[i] / nn[i] * N[i]
        return None

    def check(self) -> Feasibility:
        self.solves += 1
        if self.variant == "linear":
            system = build_halfspaces(self.window)
            quick = self._quick_witness(system)
            if quick is not None:
                return quick
            self.lp_solves += 1
            return lp_feasible(system)
        try:
            balls = build_ball_system(self.window, self.nu)
        except BallSystemError:
            return lp_feasible(build_halfspaces(self.window))
        # steps whose contraction is undefined keep their plain halfspace
        extra = build_halfspaces([self.window.steps[i] for i in balls.excluded]) if balls.excluded else None
        return ball_feasible(balls, extra, iterations=self.ball_iterations, start=self.witness)

    def on_iteration(self, step: WindowStep) -> DetectorOutcome:
        t0 = time.perf_counter()
        try:
            if not self.window.steps:
                self.window.start = step.k
            self.window.append(step)
            self.checks += 1
            if self._still_feasible(step):
                return DetectorOutcome.none(len(self.window))
            result = self.check()
            if result.feasible:
                self.witness = result.witness
                return DetectorOutcome.none(len(self.window))
            level = compute_level(self.window, self.gamma, self.level_form)
            length = len(self.window)
            self._restart(step.k + 1)
            return DetectorOutcome(True, level, step.k + 1, result.margin, length)
        finally:
            self.seconds += time.perf_counter() - t0

    def refresh(self, k: int, value: float, last: WindowStep) -> float:
        """Level for when the one in force is overtaken by the surrogate value."""
        self._restart(k)
        level = last.stepsize * last.g_norm_sq / self.gamma + value
        if self.level_form == "as-printed":
            level = self.gamma * last.stepsize * last.g_norm_sq + value
        return level

    def _restart(self, start: int) -> None:
        self.window = DetectorWindow(start=start, level_index=self.window.level_index + 1)
        self.witness = None
