"""Stepsize rules for multiplier updates.

Every policy exposes ``stepsize(ctx)`` returning the next stepsize and
``observe(ctx, step_length)`` called after the multipliers moved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class PolicyError(ValueError):
    pass


class LevelRefreshRequired(PolicyError):
    """The level in force is no longer above the current surrogate value."""


@dataclass
class StepContext:
    k: int  # iteration index, 0 for the first update
    value: float  # L(x~^k, lambda^k), or q(lambda^k) in exact mode
    g_norm_sq: float
    s_prev: float | None = None
    g_prev_norm: float | None = None


# ---------------------------------------------------------------- formulas


def nonsummable_step(s0: float, k: int) -> float:
    if k < 1:
        raise PolicyError("k must be >= 1")
    return s0 / k


def polyak_step(level: float, value: float, g_norm_sq: float, gamma: float = 1.0) -> float:
    """gamma * (level - value) / ||g||^2."""
    if g_norm_sq <= 0:
        raise PolicyError("zero subgradient: the current point is optimal")
    if not level > value:
        raise PolicyError("level not above current value")
    return gamma * (level - value) / g_norm_sq


def slr_alpha(k: int, M: float, r: float) -> float:
    """alpha_k = 1 - 1 / (M * k^(1 - 1/k^r))."""
    if k < 1:
        raise PolicyError("k must be >= 1")
    return 1.0 - 1.0 / (M * k ** (1.0 - 1.0 / k ** r))


def slr_contraction_step(s_prev: float, g_prev_norm: float, g_norm: float, k: int, M: float, r: float) -> float:
    if g_norm <= 0:
        raise PolicyError("zero subgradient: the current point is optimal")
    return slr_alpha(k, M, r) * s_prev * g_prev_norm / g_norm


def slblr_step(level: float, value: float, g_norm_sq: float, gamma: float, zeta: float) -> float:
    """zeta * gamma * (level - L) / ||g||^2."""
    if g_norm_sq <= 0:
        raise PolicyError("zero subgradient: the current point is optimal")
    if not level > value:
        raise LevelRefreshRequired(f"level {level!r} not above surrogate value {value!r}")
    return zeta * gamma * (level - value) / g_norm_sq


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise PolicyError(msg)


# ---------------------------------------------------------------- policies


class StepsizePolicy:
    name = "base"
    uses_level = False

    def start(self, num_blocks: int, s0: float) -> None:
        self.s0 = s0

    def stepsize(self, ctx: StepContext) -> float:
        raise NotImplementedError

    def observe(self, ctx: StepContext, step_length: float) -> None:
        pass

    def params(self) -> dict:
        return {}


class NonSummable(StepsizePolicy):
    """s^k = s0 / (k + 1); the first update uses s0."""

    name = "nonsummable"

    def stepsize(self, ctx):
        return nonsummable_step(self.s0, ctx.k + 1)


class PolyakKnown(StepsizePolicy):
    """Polyak's rule with the optimal dual value supplied."""

    name = "polyak"

    def __init__(self, q_star: float, gamma: float = 1.0):
        _check(0 < gamma < 2, "Polyak gamma must lie in (0, 2)")
        self.q_star = float(q_star)
        self.gamma = gamma

    def stepsize(self, ctx):
        return polyak_step(self.q_star, ctx.value, ctx.g_norm_sq, self.gamma)

    def params(self):
        return {"q_star": self.q_star, "gamma": self.gamma}


class SurrogatePolyak(PolyakKnown):
    """Polyak's rule on surrogate values; needs gamma < 1. Defaults to 1/I."""

    name = "surrogate-polyak"

    def __init__(self, q_star: float, gamma: float | None = None):
        _check(gamma is None or 0 < gamma < 1, "surrogate gamma must lie in (0, 1)")
        self.q_star = float(q_star)
        self._gamma = gamma

    def start(self, num_blocks, s0):
        super().start(num_blocks, s0)
        self.gamma = self._gamma if self._gamma is not None else 1.0 / num_blocks


class SubgradientLevel(StepsizePolicy):
    """Level = record + delta; delta shrinks after travelling R without sufficient ascent."""

    name = "subgradient-level"

    def __init__(self, delta0: float = 100.0, R: float = 60.0, beta: float = 0.5, tau: float = 0.5,
                 gamma: float | None = None):
        _check(delta0 > 0 and R > 0, "delta0 and R must be positive")
        _check(0 < beta < 1 and 0 < tau <= 1, "beta in (0,1) and tau in (0,1] required")
        _check(gamma is None or 0 < gamma < 2, "gamma must lie in (0, 2)")
        self.delta0, self.R, self.beta, self.tau = delta0, R, beta, tau
        self._gamma = gamma

    def start(self, num_blocks, s0):
        super().start(num_blocks, s0)
        self.gamma = self._gamma if self._gamma is not None else 1.0 / num_blocks
        self.delta = self.delta0
        self.record = -math.inf
        self.group_record = None
        self.path = 0.0
        self.resets = 0
        self.reductions = 0

    @property
    def level(self) -> float:
        return self.group_record + self.delta

    def stepsize(self, ctx):
        if ctx.value > self.record:
            self.record = ctx.value
        if self.group_record is None:
            self.group_record = self.record
        if ctx.value >= self.group_record + self.tau * self.delta:
            # sufficient ascent: new group, same delta
            self.group_record = self.record
            self.path = 0.0
            self.resets += 1
        elif self.path > self.R:
            # oscillation: shrink delta
            self.delta *= self.beta
            self.group_record = self.record
            self.path = 0.0
            self.reductions += 1
        level = self.level
        if level <= ctx.value:
            level = ctx.value + self.delta
        return polyak_step(level, ctx.value, ctx.g_norm_sq, self.gamma)

    def observe(self, ctx, step_length):
        self.path += step_length

    def params(self):
        return {"delta0": self.delta0, "R": self.R, "beta": self.beta, "tau": self.tau}


class SlrContraction(StepsizePolicy):
    """Contraction-mapping stepsizes: s^k = alpha_k s^{k-1} ||g^{k-1}|| / ||g^k||."""

    name = "slr"

    def __init__(self, M: float = 40.0, r: float = 0.05):
        _check(M >= 1, "SLR M must be >= 1")
        _check(0 <= r <= 1, "SLR r must lie in [0, 1]")
        self.M, self.r = M, r

    def start(self, num_blocks, s0):
        super().start(num_blocks, s0)
        self.t = 0

    def stepsize(self, ctx):
        if self.t == 0 or ctx.s_prev is None:
            return self.s0
        if ctx.g_norm_sq <= 0:
            raise PolicyError("zero subgradient: the current point is optimal")
        return slr_contraction_step(ctx.s_prev, ctx.g_prev_norm, math.sqrt(ctx.g_norm_sq), self.t, self.M, self.r)

    def observe(self, ctx, step_length):
        self.t += 1

    def params(self):
        return {"M": self.M, "r": self.r}


class Slblr(StepsizePolicy):
    """Level-based Polyak steps; the level comes from the convergence detector.

    Until the first level is available the stepsize stays at s0.
    """

    name = "slblr"
    uses_level = True

    def __init__(self, gamma: float | None = None, zeta: float = 1 / 1.5):
        _check(gamma is None or 0 < gamma < 1, "SLBLR gamma must lie in (0, 1)")
        _check(0 < zeta <= 1, "SLBLR zeta must lie in (0, 1]")
        self._gamma = gamma
        self.zeta = zeta

    def start(self, num_blocks, s0):
        super().start(num_blocks, s0)
        self.gamma = self._gamma if self._gamma is not None else 1.0 / num_blocks
        self.level: float | None = None

    def set_level(self, level: float) -> None:
        self.level = float(level)

    def stepsize(self, ctx):
        if self.level is None:
            return self.s0
        return slblr_step(self.level, ctx.value, ctx.g_norm_sq, self.gamma, self.zeta)

    def params(self):
        return {"gamma": self.gamma if hasattr(self, "gamma") else self._gamma, "zeta": self.zeta}


POLICY_NAMES = ("slblr", "slr", "subgradient-level", "polyak", "surrogate-polyak", "nonsummable")


def make_policy(name: str, **kw) -> StepsizePolicy:
    """Build a policy by name, ignoring parameters it does not take."""
    def pick(*keys):
        return {k: kw[k] for k in keys if kw.get(k) is not None}

    if name == "slblr":
        return Slblr(**pick("gamma", "zeta"))
    if name == "slr":
        return SlrContraction(**pick("M", "r"))
    if name in ("subgradient-level", "level"):
        return SubgradientLevel(**pick("delta0", "R", "beta", "tau", "gamma"))
    if name == "polyak":
        if kw.get("q_star") is None:
            raise PolicyError("polyak policy needs q_star")
        return PolyakKnown(**pick("q_star", "gamma"))
    if name == "surrogate-polyak":
        if kw.get("q_star") is None:
            raise PolicyError("surrogate-polyak policy needs q_star")
        return SurrogatePolyak(**pick("q_star", "gamma"))
    if name == "nonsummable":
        return NonSummable()
    raise PolicyError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
