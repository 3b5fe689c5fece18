"""
Single-BS association: alternating pattern allocation / association updates,
and range-expansion (biased received power) association.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .corrective import solve_relaxed_fc
from .fw_solver import (Allocation, SolverOptions, SolverResult, _weights,
                        solve_relaxed_fw, utility_of_rates)
from .rates import RateMatrix
from .scenario import PICO

log = logging.getLogger(__name__)

CYCLE_WINDOW = 8


class InfeasibleAssociationError(ValueError):
    pass


@dataclass
class Association:
    """Binary ``K x B`` user-to-cell matrix."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a)
        if a.ndim != 2 or not np.all((a == 0) | (a == 1)):
            raise ValueError("association must be a binary K x B matrix")
        self.a = a.astype(np.int8)

    @classmethod
    def all_ones(cls, K, B) -> "Association":
        return cls(np.ones((K, B), dtype=np.int8))

    @classmethod
    def from_cells(cls, cells, B) -> "Association":
        cells = np.asarray(cells, dtype=int)
        a = np.zeros((cells.size, B), dtype=np.int8)
        a[np.arange(cells.size), cells] = 1
        return cls(a)

    @property
    def is_single(self) -> bool:
        return bool(np.all(self.a.sum(axis=1) == 1))

    @property
    def serving_cell(self) -> np.ndarray:
        if not self.is_single:
            raise ValueError("association is not single-BS")
        return np.argmax(self.a, axis=1)

    def key(self) -> bytes:
        return self.a.tobytes()

    def __eq__(self, other):
        return isinstance(other, Association) and np.array_equal(self.a, other.a)


@dataclass
class JointResult:
    association: Association
    allocation: Allocation
    utility: float
    relaxed_bound: float
    bound_gap: float
    outer_iterations: int
    certified: bool = True
    # single-BS utility after each outer iteration
    trace: List[float] = field(default_factory=list)
    relaxed_result: Optional[SolverResult] = None
    inner_results: List[SolverResult] = field(default_factory=list)

    def user_rates(self, rates) -> np.ndarray:
        return self.allocation.user_rates(rates)

    def to_dict(self) -> dict:
        return {
            "association": self.association.a.tolist(),
            "serving_cell": self.association.serving_cell.tolist()
            if self.association.is_single else None,
            "allocation": self.allocation.to_dict(),
            "utility": self.utility,
            "relaxed_bound": self.relaxed_bound,
            "bound_gap": self.bound_gap,
            "outer_iterations": self.outer_iterations,
            "certified": self.certified,
            "trace": self.trace,
        }


def effective_rates(rates, assoc: Association) -> RateMatrix:
    """Rates with links to non-serving cells zeroed."""
    rm = rates if isinstance(rates, RateMatrix) else RateMatrix(rates)
    if assoc.a.shape != rm.shape[:2]:
        raise ValueError("association shape does not match the rate tensor")
    out = rm.masked(assoc.a)
    zero = out.zero_users()
    if zero.size:
        raise InfeasibleAssociationError(
            f"users {zero.tolist()} get zero rate from their associated cells")
    return out


def association_update(alloc: Allocation, rates, previous: Optional[Association] = None
                       ) -> Association:
    """Each user picks the cell maximizing ``R_kb = sum_i alpha_kbi r_kbi``.

    Users with ``R_kb = 0`` for every cell keep their previous association
    (or cell 0 if there is none); they are logged.
    """
    Rkb = alloc.link_rates(rates)
    K, B = Rkb.shape
    cells = np.argmax(Rkb, axis=1)
    stuck = np.flatnonzero(Rkb.max(axis=1) <= 0)
    if stuck.size:
        log.warning("users %s have no served link; association carried forward", stuck.tolist())
        if previous is not None:
            prev = previous.a[stuck]
            cells[stuck] = np.where(prev.sum(axis=1) == 1, np.argmax(prev, axis=1), 0)
    return Association.from_cells(cells, B)


def mask_allocation(alloc: Allocation, assoc: Association) -> Allocation:
    """Remove resources on non-associated links (they carry no rate)."""
    return Allocation(alloc.pi.copy(), alloc.support.copy(),
                      alloc.alpha_s * assoc.a[:, :, None])


def _relaxed(alg):
    if alg == "fw":
        return solve_relaxed_fw
    if alg == "fc":
        return solve_relaxed_fc
    raise ValueError(f"unknown relaxed algorithm {alg!r}")


def solve_fixed_association(rates, assoc: Association, weights=None,
                            opts: SolverOptions = None, relaxed_alg: str = "fw"
                            ) -> SolverResult:
    """Optimal pattern/resource allocation for a given single-BS association.

    The relaxed solver runs on the masked rates with constraints over all
    users; resources it leaves on unserved links are removed afterwards.
    """
    opts = opts or SolverOptions()
    eff = effective_rates(rates, assoc)
    res = _relaxed(relaxed_alg)(eff, weights, opts)
    res.allocation = mask_allocation(res.allocation, assoc)
    return res


def solve_single_bs(rates, weights=None, opts: SolverOptions = None, relaxed_alg: str = "fw",
                    relaxed_bound: Optional[SolverResult] = None) -> JointResult:
    """Alternating optimization for the single-BS association problem.

    Starts from the all-ones association, whose allocation step is exactly
    the multi-BS relaxation and so also yields the upper bound.
    """
    opts = opts or SolverOptions()
    rm = rates if isinstance(rates, RateMatrix) else RateMatrix(rates)
    K, B, _ = rm.shape
    w = _weights(weights, K)
    solve = _relaxed(relaxed_alg)

    relaxed = relaxed_bound if relaxed_bound is not None else solve(rm, w, opts)
    bound = relaxed.utility
    certified = relaxed.certified
    inner = [relaxed]

    assoc = association_update(relaxed.allocation, rm)
    best = None  # (utility, assoc, alloc)
    trace = []
    seen = deque(maxlen=CYCLE_WINDOW)
    it = 0
    for it in range(1, 1000):
        res = solve_fixed_association(rm, assoc, w, opts, relaxed_alg)
        inner.append(res)
        certified = certified and res.certified
        alloc = res.allocation
        U = utility_of_rates(alloc.user_rates(rm), w)
        gain = np.inf if best is None else U - best[0]
        if gain <= 0:
            # the non-improving iterate is discarded
            break
        best = (U, assoc, alloc)
        trace.append(U)
        seen.append(assoc.key())
        new = association_update(alloc, rm, assoc)
        if new == assoc or gain < opts.epsilon / 10:
            break
        if new.key() in seen:
            log.info("association cycle detected after %d iterations", it)
            break
        assoc = new

    U, assoc, alloc = best
    return JointResult(assoc, alloc, U, bound, bound - U, it, certified, trace, relaxed, inner)


def re_association(scenario, pico_bias_db: float) -> Association:
    """Range-expansion association: strongest received power plus a common pico bias."""
    if not np.isfinite(pico_bias_db):
        raise ValueError("bias must be finite")
    rx = scenario.received_power_dbm()
    bias = np.array([pico_bias_db if c.kind == PICO else 0.0 for c in scenario.cells])
    cells = np.argmax(rx + bias[None, :], axis=1)
    return Association.from_cells(cells, scenario.num_cells)
