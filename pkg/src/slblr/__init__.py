"""Level-based surrogate Lagrangian relaxation for separable MILPs."""

from .engine import EngineConfig, RunTrace, run
from .problem import CompositeSolution, GapInstance, SeparableProblem, example1, gap_to_separable, parse_orlib_gap
from .stepsize import Slblr, SlrContraction, SubgradientLevel, make_policy

__all__ = [
    "CompositeSolution", "EngineConfig", "GapInstance", "RunTrace", "SeparableProblem", "Slblr", "SlrContraction",
    "SubgradientLevel", "example1", "gap_to_separable", "make_policy", "parse_orlib_gap", "run",
]
__version__ = "0.1.0"
