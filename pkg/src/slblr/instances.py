"""Resolving instance names to problems.

Accepted names:

* ``example1``
* ``gap:<file>:<index>``: the index-th (1-based) instance of an OR-library GAP
  file, looked up as ``<file>``, ``<file>.txt`` in ``$SLBLR_DATA_DIR`` and then
  in the bundled ``data`` directory
* ``typeD:<M>x<N>[:seed]``: a generated type-D instance
* ``d05100``-style aliases, mapped to the bundled type-D files
* a path to an OR-library file (first instance)
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .problem import GapInstance, SeparableProblem, example1, gap_to_separable, generate_type_d, parse_orlib_gap

DATA_ENV = "SLBLR_DATA_DIR"
PACKAGE_DATA = Path(__file__).resolve().parent / "data"

# alias -> (file, index) in the bundled data directory
ALIASES = {
    "d05100": ("gapd", 1),
    "d10100": ("gapd", 2),
}
LARGE_ALIASES = {
    "d201600": (20, 1600, 1),
    "d401600": (40, 1600, 1),
    "d801600": (80, 1600, 1),
}


class InstanceError(ValueError):
    pass


@dataclass
class LoadedInstance:
    name: str
    problem: SeparableProblem
    gap: GapInstance | None = None


def data_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(DATA_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(PACKAGE_DATA)
    return dirs


def find_data_file(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    for d in data_dirs():
        for cand in (d / name, d / f"{name}.txt"):
            if cand.is_file():
                return cand
    searched = ", ".join(str(d) for d in data_dirs())
    raise InstanceError(f"GAP file {name!r} not found (searched {searched}; set {DATA_ENV})")


def load_gap_file(name: str, index: int = 1) -> GapInstance:
    path = find_data_file(name)
    instances = parse_orlib_gap(path.read_text(), names=None)
    if not 1 <= index <= len(instances):
        raise InstanceError(f"{path} holds {len(instances)} instances; index {index} out of range")
    return replace(instances[index - 1], name=f"{path.stem}:{index}")


def _gap(inst: GapInstance, name: str) -> LoadedInstance:
    return LoadedInstance(name, gap_to_separable(inst), inst)


def resolve_instance(name: str) -> LoadedInstance:
    """Turn an instance name into a problem (and the GAP data when there is one)."""
    if name == "example1":
        return LoadedInstance("example1", example1())
    if name in ALIASES:
        f, i = ALIASES[name]
        return _gap(replace(load_gap_file(f, i), name=name), name)
    if name in LARGE_ALIASES:
        M, N, seed = LARGE_ALIASES[name]
        return _gap(generate_type_d(M, N, seed, name=name), name)
    m = re.fullmatch(r"gap:([^:]+):(\d+)", name)
    if m:
        return _gap(load_gap_file(m.group(1), int(m.group(2))), name)
    m = re.fullmatch(r"typeD:(\d+)x(\d+)(?::(\d+))?", name)
    if m:
        M, N = int(m.group(1)), int(m.group(2))
        if M < 1 or N < 1:
            raise InstanceError("type-D sizes must be positive")
        seed = int(m.group(3) or 0)
        return _gap(generate_type_d(M, N, seed, name=name), name)
    if Path(name).is_file():
        return _gap(load_gap_file(name, 1), name)
    raise InstanceError(f"cannot resolve instance {name!r}; use example1, gap:<file>:<index>, "
                        f"typeD:<M>x<N>[:seed], a file path or one of {', '.join([*ALIASES, *LARGE_ALIASES])}")
