"""
Frank-Wolfe solver for the multi-BS relaxation of joint user association
and pattern allocation.

The feasible set X is

    sum_k alpha[k, b, i] <= pi[i]   for all (b, i),
    sum_i pi[i] = 1,  alpha >= 0,  pi >= 0,

and the objective is ``U = sum_k w_k log(R_k)`` with
``R_k = sum_{b,i} alpha[k, b, i] r[k, b, i]``. Allocations are stored on the
support of ``pi`` only, since the candidate set may hold ``2**B - 1`` patterns
while a Frank-Wolfe iterate activates at most one new pattern per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-12
PI_DRIFT_TOL = 1e-10
MIN_STEP = 1e-15


class SolverError(RuntimeError):
    """Base class for solver failures; ``best`` holds the last good iterate."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class DegenerateAllocationError(SolverError):
    pass


class NumericalStallError(SolverError):
    pass


# ----------------------------------------------------------------- allocation

class Allocation:
    """Resource fractions ``alpha`` (K x B x I) and pattern shares ``pi`` (I).

    Only the columns listed in ``support`` are stored; ``alpha_s[:, :, j]``
    belongs to pattern ``support[j]``.
    """

    def __init__(self, pi, support, alpha_s):
        self.pi = np.asarray(pi, dtype=float)
        self.support = np.asarray(support, dtype=np.int64)
        self.alpha_s = np.asarray(alpha_s, dtype=float)
        if self.alpha_s.ndim != 3 or self.alpha_s.shape[2] != self.support.size:
            raise ValueError("alpha_s must be K x B x len(support)")

    @property
    def shape(self):
        K, B, _ = self.alpha_s.shape
        return K, B, self.pi.size

    @property
    def alpha(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[:, :, self.support] = self.alpha_s
        return out

    @classmethod
    def from_dense(cls, alpha, pi) -> "Allocation":
        alpha = np.asarray(alpha, dtype=float)
        pi = np.asarray(pi, dtype=float)
        sup = np.flatnonzero((pi != 0) | np.any(alpha != 0, axis=(0, 1)))
        return cls(pi, sup, alpha[:, :, sup])

    def copy(self) -> "Allocation":
        return Allocation(self.pi.copy(), self.support.copy(), self.alpha_s.copy())

    def user_rates(self, rates) -> np.ndarray:
        r = _tensor(rates)
        return np.einsum("kbs,kbs->k", self.alpha_s, r[:, :, self.support])

    def link_rates(self, rates) -> np.ndarray:
        """``R_kb = sum_i alpha_kbi r_kbi`` (K x B)."""
        r = _tensor(rates)
        return np.einsum("kbs,kbs->kb", self.alpha_s, r[:, :, self.support])

    def active_patterns(self, tol: float) -> np.ndarray:
        return np.flatnonzero(self.pi > tol)

    def feasibility_violation(self) -> float:
        """Largest violation of the constraints defining X (0 when feasible)."""
        viol = max(0.0, -float(self.alpha_s.min(initial=0.0)), -float(self.pi.min()))
        viol = max(viol, abs(float(self.pi.sum()) - 1.0))
        if self.support.size:
            load = self.alpha_s.sum(axis=0)  # B x S
            viol = max(viol, float((load - self.pi[self.support][None, :]).max()))
        outside = np.delete(self.pi, self.support)
        if outside.size:
            viol = max(viol, float(np.abs(outside).max()))
        return viol

    def assert_feasible(self, tol: float = FEAS_TOL) -> None:
        v = self.feasibility_violation()
        if v > tol:
            raise AssertionError(f"allocation infeasible (violation {v:.3e})")

    def prune(self) -> "Allocation":
        """Drop support columns whose share and resources are exactly zero."""
        keep = (self.pi[self.support] != 0) | np.any(self.alpha_s != 0, axis=(0, 1))
        if not keep.all():
            self.support = self.support[keep]
            self.alpha_s = self.alpha_s[:, :, keep]
        return self

    def to_dict(self, tol: float = 0.0) -> dict:
        K, B, I = self.shape
        triplets = []
        for j, i in enumerate(self.support):
            ks, bs = np.nonzero(self.alpha_s[:, :, j] > tol)
            for k, b in zip(ks, bs):
                triplets.append([int(k), int(b), int(i), float(self.alpha_s[k, b, j])])
        pi = {int(i): float(self.pi[i]) for i in np.flatnonzero(self.pi > tol)}
        return {"shape": [K, B, I], "pi": pi, "alpha": triplets}

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        K, B, I = d["shape"]
        pi = np.zeros(I)
        for i, v in d["pi"].items():
            pi[int(i)] = v
        alpha = np.zeros((K, B, I))
        for k, b, i, v in d["alpha"]:
            alpha[k, b, i] = v
        return cls.from_dense(alpha, pi)


def _tensor(rates) -> np.ndarray:
    return rates.r if hasattr(rates, "r") else np.asarray(rates, dtype=float)


def _weights(weights, K) -> np.ndarray:
    if weights is None:
        return np.ones(K)
    w = np.asarray(weights, dtype=float)
    if w.shape != (K,):
        raise ValueError("need one weight per user")
    return w


# ------------------------------------------------------------------- options

@dataclass
class SolverOptions:
    epsilon: float = 1.0
    gamma0: float = 1e-4
    beta: float = 0.8
    kappa: float = 0.1
    max_iters: int = 200_000
    # None -> 1e-6 / I
    active_tol: Optional[float] = None
    inner_epsilon: Optional[float] = None  # corrective solver only; None -> epsilon / 10
    check_feasibility: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.gamma0 <= 1:
            raise ValueError("gamma0 must lie in (0, 1]")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.active_tol is not None and not self.active_tol > 0:
            raise ValueError("active_tol must be > 0")

    def tol_for(self, num_patterns: int) -> float:
        return self.active_tol if self.active_tol is not None else 1e-6 / num_patterns

    @property
    def inner_eps(self) -> float:
        return self.inner_epsilon if self.inner_epsilon is not None else self.epsilon / 10


@dataclass
class SolverResult:
    allocation: Allocation
    utility: float
    gap: float
    iterations: int
    active_patterns: np.ndarray
    certified: bool
    # rows: (iteration, utility, gap, step, active_count[, working_set_size])
    trace: List[tuple] = field(default_factory=list)

    def trace_columns(self) -> List[str]:
        cols = ["iteration", "utility", "gap", "step", "active_count"]
        if self.trace and len(self.trace[0]) > 5:
            cols.append("working_set")
        return cols


# -------------------------------------------------------- utility & gradient

def utility_of_rates(R, weights) -> float:
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        return -np.inf
    return float(np.dot(weights, np.log(R)))


def utility_and_gradient(alloc: Allocation, rates, weights=None) -> Tuple[float, np.ndarray]:
    """Log-utility and its dense gradient ``w_k r_kbi / R_k``.

    Raises
    ------
    DegenerateAllocationError
        If some user gets zero rate.
    """
    r = _tensor(rates)
    w = _weights(weights, r.shape[0])
    R = alloc.user_rates(r)
    if np.any(R <= 0):
        raise DegenerateAllocationError(
            f"users {np.flatnonzero(R <= 0).tolist()} have zero rate", alloc)
    scale = w / R
    return float(np.dot(w, np.log(R))), scale[:, None, None] * r


# ----------------------------------------------------------------------- LMO

@dataclass
class Vertex:
    """Extreme point of X: all resources on ``pattern``, cell ``b`` serving ``users[b]``."""

    pattern: int
    users: np.ndarray  # length B
    value: float  # <vertex, gradient>

    def allocation(self, shape) -> Allocation:
        K, B, I = shape
        pi = np.zeros(I)
        pi[self.pattern] = 1.0
        a = np.zeros((K, B, 1))
        a[self.users, np.arange(B), 0] = 1.0
        return Allocation(pi, [self.pattern], a)

    def user_rates(self, rates) -> np.ndarray:
        r = _tensor(rates)
        K, B, _ = r.shape
        out = np.zeros(K)
        np.add.at(out, self.users, r[self.users, np.arange(B), self.pattern])
        return out


def lmo(gradient) -> Tuple[Allocation, float]:
    """Maximize ``<alpha, gradient>`` over X in closed form.

    Each cell gives its whole share to the user with the largest gradient
    entry for every pattern; all resources then go to the pattern with the
    largest resulting sum. Ties go to the lowest index.

    The result is the best one-hot vertex for any gradient. For a
    nonnegative gradient (always the case for the log-utility) it is also
    the maximum over the whole feasible set.
    """
    g = np.asarray(gradient, dtype=float)
    v = _lmo_dense(g)
    return v.allocation(g.shape), v.value


def _lmo_dense(g: np.ndarray) -> Vertex:
    best = g.max(axis=0)  # B x I
    ibar = int(np.argmax(best.sum(axis=0)))
    users = np.argmax(g[:, :, ibar], axis=0)
    B = g.shape[1]
    return Vertex(ibar, users, float(g[users, np.arange(B), ibar].sum()))


class _FusedLMO:
    """LMO on ``scale[:, None, None] * r`` without forming the gradient.

    Gives the same vertex as :func:`lmo` applied to the dense gradient.
    """

    def __init__(self, r: np.ndarray):
        self.r = r
        K, B, I = r.shape
        self._best = np.empty((B, I))
        self._tmp = np.empty((B, I))

    def __call__(self, scale: np.ndarray) -> Vertex:
        r, best, tmp = self.r, self._best, self._tmp
        np.multiply(scale[0], r[0], out=best)
        for k in range(1, r.shape[0]):
            np.multiply(scale[k], r[k], out=tmp)
            np.maximum(best, tmp, out=best)
        ibar = int(np.argmax(best.sum(axis=0)))
        col = scale[:, None] * r[:, :, ibar]
        users = np.argmax(col, axis=0)
        B = r.shape[1]
        return Vertex(ibar, users, float(col[users, np.arange(B)].sum()))


# -------------------------------------------------------------- step search

def armijo_search(phi: Callable[[float], float], phi0: float, slope: float,
                  prev_step: float, beta: float, kappa: float) -> float:
    """Warm-started Armijo rule for maximization along a segment.

    Accepts ``gamma`` when ``phi(gamma) >= phi0 + kappa * gamma * slope``.
    Starting from ``prev_step``, the step grows by ``1/beta`` (capped at 1)
    while the test keeps holding, otherwise it shrinks by ``beta`` until it
    holds.
    """
    def ok(gamma):
        return phi(gamma) >= phi0 + kappa * gamma * slope

    gamma = min(max(prev_step, MIN_STEP), 1.0)
    if ok(gamma):
        while gamma < 1.0:
            cand = min(gamma / beta, 1.0)
            if not ok(cand):
                break
            gamma = cand
        return gamma
    while True:
        gamma *= beta
        if gamma < MIN_STEP:
            raise NumericalStallError("Armijo step underflow")
        if ok(gamma):
            return gamma


def combine(current: Allocation, vertex: Allocation, gamma: float) -> Allocation:
    """``current + gamma * (vertex - current)`` in the support representation."""
    sup = np.union1d(current.support, vertex.support)
    K, B, _ = current.alpha_s.shape
    a = np.zeros((K, B, sup.size))
    a[:, :, np.searchsorted(sup, current.support)] += (1.0 - gamma) * current.alpha_s
    a[:, :, np.searchsorted(sup, vertex.support)] += gamma * vertex.alpha_s
    pi = (1.0 - gamma) * current.pi
    pi[vertex.support] += gamma * vertex.pi[vertex.support]
    return Allocation(pi, sup, a).prune()


def armijo_step(current: Allocation, vertex: Allocation, gap_dir: float, prev_step: float,
                opts: SolverOptions, rates, weights=None,
                utility: Optional[Callable[[Allocation], float]] = None
                ) -> Tuple[float, Allocation]:
    """One warm-started Armijo step from ``current`` towards ``vertex``.

    ``utility`` overrides the log-utility (used to test the rule on other
    concave functions).
    """
    if not gap_dir > 0:
        raise ValueError("direction must be an ascent direction (gap_dir > 0)")
    if utility is None:
        w = _weights(weights, current.shape[0])
        R0 = current.user_rates(rates)
        Rv = vertex.user_rates(rates)
        phi0 = utility_of_rates(R0, w)

        def phi(g):
            return utility_of_rates((1.0 - g) * R0 + g * Rv, w)
    else:
        phi0 = utility(current)

        def phi(g):
            return utility(combine(current, vertex, g))

    gamma = armijo_search(phi, phi0, gap_dir, prev_step, opts.beta, opts.kappa)
    return gamma, combine(current, vertex, gamma)


# -------------------------------------------------------------- initializer

def initial_allocation(rates, pattern: Optional[int] = None) -> Allocation:
    """Single-pattern start: all resources on one pattern (reuse-1 when present),
    each user on its best cell, equal split among a cell's users.

    Users with zero rate under that pattern are moved to the pattern where
    their best link is strongest, and the share is split evenly over the
    patterns in use.
    """
    r = _tensor(rates)
    K, B, I = r.shape
    if pattern is None:
        pattern = rates.reuse1_index() if hasattr(rates, "reuse1_index") else None
        if pattern is None:
            pattern = 0
    best_link = r.max(axis=1)  # K x I
    if np.any(best_link.max(axis=1) <= 0):
        raise DegenerateAllocationError("some user has zero rate under every pattern")
    user_pat = np.full(K, pattern)
    bad = best_link[:, pattern] <= 0
    user_pat[bad] = np.argmax(best_link[bad], axis=1)
    pats = np.unique(user_pat)
    share = 1.0 / pats.size
    pi = np.zeros(I)
    pi[pats] = share
    a = np.zeros((K, B, pats.size))
    for j, i in enumerate(pats):
        users = np.flatnonzero(user_pat == i)
        cells = np.argmax(r[users, :, i], axis=1)
        counts = np.bincount(cells, minlength=B)
        a[users, cells, j] = share / counts[cells]
    return Allocation(pi, pats, a)


def _renormalize(alloc: Allocation) -> None:
    s = float(alloc.pi.sum())
    if abs(s - 1.0) > PI_DRIFT_TOL:
        raise NumericalStallError(f"pattern shares drifted to sum {s!r}", alloc)
    alloc.pi /= s
    alloc.alpha_s /= s


def multi_associated_users(alloc: Allocation, rates, tol: float) -> np.ndarray:
    """Users served by two or more cells under a common pattern.

    Only entries with ``alpha > tol`` and a positive rate count as service.
    """
    r = _tensor(rates)[:, :, alloc.support]
    served = (alloc.alpha_s > tol) & (r > 0)
    return np.flatnonzero(np.any(served.sum(axis=1) >= 2, axis=1))


# ------------------------------------------------------------------- solver

def gap_at(alloc: Allocation, rates, weights=None, lmo_fn=None) -> Tuple[float, Vertex, np.ndarray]:
    """Frank-Wolfe gap ``<grad U, vertex - alloc>`` plus the vertex and user rates."""
    r = _tensor(rates)
    w = _weights(weights, r.shape[0])
    R = alloc.user_rates(r)
    if np.any(R <= 0):
        raise DegenerateAllocationError("allocation gives a user zero rate", alloc)
    scale = w / R
    v = (lmo_fn or _FusedLMO(r))(scale)
    return v.value - float(np.dot(scale, R)), v, R


def frank_wolfe(rates, weights, opts: SolverOptions, init: Allocation,
                epsilon: float, max_iters: int, on_iter=None) -> SolverResult:
    """Frank-Wolfe iterations from ``init`` until the gap is at most ``epsilon``."""
    r = _tensor(rates)
    K, B, I = r.shape
    w = _weights(weights, K)
    tol = opts.tol_for(I)
    fused = _FusedLMO(r)
    alloc = init.copy()
    step = opts.gamma0
    trace = []
    R = alloc.user_rates(r)
    U = utility_of_rates(R, w)
    if not np.isfinite(U):
        raise DegenerateAllocationError("initial allocation gives a user zero rate", alloc)
    gap = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        scale = w / R
        v = fused(scale)
        gap = v.value - float(np.dot(scale, R))
        trace.append((it, U, gap, step if it > 1 else 0.0, int(np.count_nonzero(alloc.pi > tol))))
        if on_iter is not None:
            on_iter(it, alloc, U, gap)
        if gap <= epsilon:
            break
        if not gap > 0:
            # gap should be >= 0 up to rounding; nothing left to gain
            break
        Rv = v.user_rates(r)

        def phi(g, R=R, Rv=Rv):
            return utility_of_rates((1.0 - g) * R + g * Rv, w)

        try:
            step = armijo_search(phi, U, gap, step, opts.beta, opts.kappa)
        except NumericalStallError as e:
            e.best = alloc
            raise
        alloc = combine(alloc, v.allocation((K, B, I)), step)
        _renormalize(alloc)
        if opts.check_feasibility:
            alloc.assert_feasible()
        R = alloc.user_rates(r)
        U_new = utility_of_rates(R, w)
        if U_new < U:
            # can only happen through rounding in the renormalization
            log.debug("utility decreased by %.3e at iteration %d", U - U_new, it)
        U = U_new

    certified = bool(gap <= epsilon)
    if not certified:
        log.warning("Frank-Wolfe stopped after %d iterations with gap %.4g > %.4g",
                    it, gap, epsilon)
    return SolverResult(alloc, U, float(gap), it, alloc.active_patterns(tol), certified, trace)


def solve_relaxed_fw(rates, weights=None, opts: SolverOptions = None,
                     init: Optional[Allocation] = None, on_iter=None) -> SolverResult:
    """Certified Frank-Wolfe solve of the multi-BS relaxation.

    On return ``result.gap`` bounds the distance to the optimal utility.
    ``result.certified`` is False when ``max_iters`` ran out first.
    """
    opts = opts or SolverOptions()
    r = _tensor(rates)
    zero = np.flatnonzero(~np.any(r > 0, axis=(1, 2)))
    if zero.size:
        raise DegenerateAllocationError(f"users {zero.tolist()} have zero rate everywhere")
    if init is None:
        init = initial_allocation(rates)
    return frank_wolfe(rates, weights, opts, init, opts.epsilon, opts.max_iters, on_iter)
