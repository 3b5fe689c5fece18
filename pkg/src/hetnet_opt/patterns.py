"""
Interference patterns (BS ON/OFF activity vectors) and candidate sets.

A pattern is stored as an integer bitmask in which cell ``b`` is ON iff bit
``B - 1 - b`` is set, so the bitstring form reads MSB = cell 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

MAX_CELLS = 24

STRATEGIES = ("all", "reuse1", "abs", "od1", "od3", "feature")
_ALIASES = {
    "allpattern": "all", "all-pattern": "all",
    "reuse-1": "reuse1", "reuse_1": "reuse1",
    "macroabs": "abs", "macro-abs": "abs", "macro_abs": "abs",
    "od-1": "od1", "od_1": "od1", "od-3": "od3", "od_3": "od3",
    "fea-pattern": "feature", "feapattern": "feature", "fea": "feature",
}


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class PatternSet:
    """Ordered candidate patterns over ``num_cells`` cells."""

    masks: tuple
    num_cells: int

    def __post_init__(self):
        masks = tuple(int(m) for m in self.masks)
        object.__setattr__(self, "masks", masks)
        if len(masks) == 0:
            raise PatternError("pattern set must be nonempty")
        if len(set(masks)) != len(masks):
            raise PatternError("duplicate patterns")
        full = (1 << self.num_cells) - 1
        for m in masks:
            if m <= 0 or m > full:
                raise PatternError(f"pattern {m} invalid for {self.num_cells} cells")

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    @property
    def activity(self) -> np.ndarray:
        """Boolean ``I x B`` matrix, ``activity[i, b]`` = cell b ON in pattern i."""
        B = self.num_cells
        m = np.asarray(self.masks, dtype=np.int64)[:, None]
        shifts = (B - 1 - np.arange(B, dtype=np.int64))[None, :]
        return ((m >> shifts) & 1).astype(bool)

    def bitstrings(self) -> List[str]:
        return [format(m, f"0{self.num_cells}b") for m in self.masks]

    def index(self, mask: int) -> int:
        return self.masks.index(int(mask))

    def reuse1_index(self) -> Optional[int]:
        full = (1 << self.num_cells) - 1
        try:
            return self.masks.index(full)
        except ValueError:
            return None

    def muted_sets(self) -> List[List[int]]:
        act = self.activity
        return [np.flatnonzero(~row).tolist() for row in act]

    @classmethod
    def from_bitstrings(cls, bits: Sequence[str]) -> "PatternSet":
        bits = list(bits)
        if not bits:
            raise PatternError("pattern set must be nonempty")
        B = len(bits[0])
        if any(len(s) != B or set(s) - {"0", "1"} for s in bits):
            raise PatternError("bitstrings must be equal-length strings of 0/1")
        return cls(tuple(int(s, 2) for s in bits), B)

    @classmethod
    def from_on_sets(cls, on_sets: Sequence[Sequence[int]], num_cells: int) -> "PatternSet":
        return cls(tuple(on_mask(s, num_cells) for s in on_sets), num_cells)


def on_mask(on_cells, num_cells: int) -> int:
    m = 0
    for b in on_cells:
        if not 0 <= b < num_cells:
            raise PatternError(f"cell {b} out of range")
        m |= 1 << (num_cells - 1 - int(b))
    return m


def enumerate_all_patterns(num_cells: int) -> PatternSet:
    """All ``2**B - 1`` nonempty patterns in ascending bitmask order."""
    if not 1 <= num_cells <= MAX_CELLS:
        raise PatternError(f"number of cells must be in [1, {MAX_CELLS}]")
    return PatternSet(tuple(range(1, 1 << num_cells)), num_cells)


@dataclass
class Topology:
    """Macro/pico layout needed to build structured candidate sets.

    ``pico_groups[m]`` lists the picos inside macro ``macros[m]``'s coverage.
    ``pico_coloring`` partitions all picos into reuse-3 classes (OD-3).
    ``macro_groups`` lists adjacent macro groups used by the feature-pattern
    guideline; the default puts all macros in one group.
    """

    macros: List[int]
    pico_groups: List[List[int]]
    pico_coloring: Optional[List[List[int]]] = None
    macro_groups: Optional[List[List[int]]] = None

    def __post_init__(self):
        if len(self.pico_groups) != len(self.macros):
            raise PatternError("need one pico group per macro")
        cells = list(self.macros) + [p for g in self.pico_groups for p in g]
        if sorted(cells) != list(range(len(cells))):
            raise PatternError("macros and pico groups must partition the cell indices")
        if self.pico_coloring is not None:
            colored = sorted(p for c in self.pico_coloring for p in c)
            if colored != sorted(self.picos):
                raise PatternError("pico coloring must partition the picos")
        if self.macro_groups is not None:
            grouped = sorted(m for g in self.macro_groups for m in g)
            if grouped != sorted(self.macros):
                raise PatternError("macro groups must partition the macros")

    @property
    def num_cells(self) -> int:
        return len(self.macros) + sum(len(g) for g in self.pico_groups)

    @property
    def picos(self) -> List[int]:
        return [p for g in self.pico_groups for p in g]

    @classmethod
    def from_scenario(cls, scenario, pico_coloring=None, macro_groups=None) -> "Topology":
        macros = scenario.macro_indices
        groups = [[b for b in scenario.pico_indices if scenario.cells[b].parent == m]
                  for m in range(len(macros))]
        if pico_coloring is None:
            pico_coloring = default_pico_coloring(groups)
        return cls(macros, groups, pico_coloring, macro_groups)

    @classmethod
    def regular(cls, num_macros: int = 3, picos_per_macro: int = 4) -> "Topology":
        """Macros ``0..M-1`` followed by picos grouped by parent macro."""
        macros = list(range(num_macros))
        groups = [[num_macros + m * picos_per_macro + j for j in range(picos_per_macro)]
                  for m in range(num_macros)]
        return cls(macros, groups, default_pico_coloring(groups))


def default_pico_coloring(pico_groups) -> Optional[List[List[int]]]:
    """Reuse-3 coloring: the j-th pico of every macro gets class ``j mod 3``.

    For 3 macros with 4 picos each this reproduces the classes
    {4,7,10,13}, {5,8,11,14}, {6,9,12,15} (1-based labels) of the
    15-cell reference layout.
    """
    picos = [p for g in pico_groups for p in g]
    if not picos:
        return None
    classes = [[], [], []]
    for n, p in enumerate(sorted(picos)):
        classes[n % 3].append(p)
    return [c for c in classes if c]


def normalize_strategy(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in STRATEGIES:
        raise PatternError(f"unknown strategy {name!r}")
    return key


def build_strategy_patterns(strategy: str, topology: Topology) -> PatternSet:
    """Candidate pattern set for a named resource-sharing strategy."""
    key = normalize_strategy(strategy)
    B = topology.num_cells
    macros, picos = list(topology.macros), topology.picos
    everyone = list(range(B))

    if key == "all":
        return enumerate_all_patterns(B)
    if key == "reuse1":
        on = [everyone]
    elif key == "abs":
        on = [everyone, picos]
    elif key == "od1":
        on = [macros, picos]
    elif key == "od3":
        if topology.pico_coloring is None:
            raise PatternError("OD-3 requires a pico reuse-3 coloring")
        on = [macros] + [list(c) for c in topology.pico_coloring]
    else:  # feature
        groups = topology.macro_groups or [macros]
        group_of = {m: g for g in groups for m in g}
        on = [picos]
        for m in macros:
            active = [m] + [x for x in macros if x not in group_of[m]]
            muted_picos = {p for a in active for p in topology.pico_groups[macros.index(a)]}
            on.append(sorted(active + [p for p in picos if p not in muted_picos]))
    # distinct macro groups can make two macro patterns coincide
    masks = dict.fromkeys(on_mask(s, B) for s in on if s)
    return PatternSet(tuple(masks), B)
